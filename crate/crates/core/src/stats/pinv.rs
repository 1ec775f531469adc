//! Moore-Penrose pseudo-inverse of symmetric matrices.

use nalgebra::DMatrix;

/// Eigendecomposition-based pseudo-inverse. Eigenvalues with magnitude at or
/// below `tol` times the largest magnitude count as zero; the returned rank
/// is the number kept.
pub fn pseudo_inverse(a: &DMatrix<f64>, tol: f64) -> (DMatrix<f64>, usize) {
    assert_eq!(a.nrows(), a.ncols(), "pseudo_inverse wants a square symmetric matrix");
    let n = a.nrows();
    if n == 0 {
        return (a.clone(), 0);
    }
    let eig = a.clone().symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0_f64, |m, &l| m.max(l.abs()));
    if max_abs == 0.0 {
        return (DMatrix::zeros(n, n), 0);
    }
    let cut = tol * max_abs;
    let mut rank = 0;
    let inv_vals: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            if l.abs() > cut {
                rank += 1;
                1.0 / l
            } else {
                0.0
            }
        })
        .collect();
    let v = &eig.eigenvectors;
    let mut out = DMatrix::zeros(n, n);
    for (k, &iv) in inv_vals.iter().enumerate() {
        if iv != 0.0 {
            let col = v.column(k);
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] += iv * col[i] * col[j];
                }
            }
        }
    }
    (out, rank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::Rng;

    fn penrose_ok(a: &DMatrix<f64>, p: &DMatrix<f64>) -> bool {
        let scale = a.amax().max(1.0);
        let close = |x: &DMatrix<f64>, y: &DMatrix<f64>| (x - y).amax() < 1e-8 * scale;
        close(&(a * p * a), a)
            && close(&(p * a * p), p)
            && close(&(a * p).transpose(), &(a * p))
            && close(&(p * a).transpose(), &(p * a))
    }

    #[test]
    fn identity_inverts_to_itself() {
        let i3 = DMatrix::identity(3, 3);
        let (p, rank) = pseudo_inverse(&i3, 1e-8);
        assert_eq!(rank, 3);
        assert!((p - i3).amax() < 1e-12);
    }

    #[test]
    fn unit_projector_is_its_own_pseudo_inverse() {
        let v = DVector::from_vec(vec![0.6, 0.0, 0.8]);
        let a = &v * v.transpose();
        let (p, rank) = pseudo_inverse(&a, 1e-8);
        assert_eq!(rank, 1);
        assert!((p.clone() - a.clone()).amax() < 1e-10);
        assert!(penrose_ok(&a, &p));
    }

    #[test]
    fn rank_deficient_psd_satisfies_penrose_identities() {
        let mut rng = crate::util::seeded_stream(5150, 0);
        for _ in 0..20 {
            // B is 6x3, so B Bᵀ is PSD of rank at most 3.
            let b = DMatrix::from_fn(6, 3, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let a = &b * b.transpose();
            let (p, rank) = pseudo_inverse(&a, 1e-8);
            assert_eq!(rank, 3);
            assert!(penrose_ok(&a, &p));
            // Against the SVD route as an independent oracle.
            let svd_p = a.clone().svd(true, true).pseudo_inverse(1e-10).unwrap();
            assert!((p - svd_p).amax() < 1e-7);
        }
    }
}
