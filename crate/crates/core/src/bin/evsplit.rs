use clap::{Args, Parser, Subcommand};
use evsplit::runner::{
    self, Analysis, OutputFormat, RunError, RunSettings, BUILTINS,
};
use evsplit::stats::PvalueMethod;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "evsplit",
    version,
    about = "Conflict diagnostics for Bayesian evidence synthesis models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model as-is and summarise posterior and deviance.
    Fit(ModelArgs),
    /// Fit a split model and report conflict diagnostics.
    SplitFit(ModelArgs),
    /// Treatment-network analyses (smoking-* builtins).
    Nma(ModelArgs),
    /// Prevalence-synthesis analyses (hiv-* builtins), including the
    /// leave-n-out families.
    Hiv(ModelArgs),
    /// Check conflict p-value calibration on the two-partition normal null.
    SimulateNull(NullArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Builtin analysis name.
    #[arg(long, conflicts_with = "model")]
    builtin: Option<String>,
    /// Model configuration file (TOML).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Data table replacing a builtin's embedded data.
    #[arg(long, requires = "builtin")]
    data: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    /// Iterations per chain, burn-in included.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Directory for artifacts; nothing is written without it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["text", "json"], default_value = "text")]
    format: String,
    /// Quasi-random points per multivariate-normal rectangle integral.
    #[arg(long)]
    mvn_points: Option<usize>,
    /// Eigenvalue cutoff for the pseudo-inverse in the pooled test.
    #[arg(long)]
    pinv_tol: Option<f64>,
    #[arg(long, value_parser = ["kde", "normal"])]
    pvalue_method: Option<String>,
}

#[derive(Args)]
struct NullArgs {
    #[arg(long, default_value_t = 500)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Location shift injected into one partition, in contrast-sd units.
    #[arg(long, default_value_t = 0.0)]
    shift: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["text", "json"], default_value = "text")]
    format: String,
    #[arg(long, value_parser = ["kde", "normal"], default_value = "normal")]
    pvalue_method: String,
}

fn parse_format(s: &str) -> OutputFormat {
    match s {
        "json" => OutputFormat::Json,
        _ => OutputFormat::Text,
    }
}

fn parse_method(s: &str) -> PvalueMethod {
    match s {
        "normal" => PvalueMethod::Normal,
        _ => PvalueMethod::Kde,
    }
}

fn settings_from(args: &CommonArgs) -> RunSettings {
    let mut s = RunSettings::default();
    if let Some(v) = args.seed {
        s.sampler.seed = v;
    }
    if let Some(v) = args.chains {
        s.sampler.chains = v;
    }
    if let Some(v) = args.iters {
        s.sampler.iterations = v;
    }
    if let Some(v) = args.burnin {
        s.sampler.burn_in = v;
    }
    if let Some(v) = args.thin {
        s.sampler.thin = v;
    }
    if let Some(v) = args.mvn_points {
        s.report.adjust.mvn_points = v;
    }
    if let Some(v) = args.pinv_tol {
        s.report.adjust.pinv_tol = v;
    }
    if let Some(m) = &args.pvalue_method {
        s.report.pvalue_method = parse_method(m);
    }
    s.out = args.out.clone();
    s.format = parse_format(&args.format);
    s
}

/// Resolves --builtin/--model/--data into an analysis, keeping the override
/// text for the manifest.
fn resolve(
    args: &ModelArgs,
    want_split: Option<bool>,
    family: Option<&str>,
) -> Result<(Analysis, Option<String>), RunError> {
    if let Some(name) = &args.builtin {
        if let Some(prefix) = family {
            if !name.starts_with(prefix) {
                return Err(RunError::Usage(format!(
                    "builtin '{name}' does not belong here; expected one of {}",
                    BUILTINS
                        .iter()
                        .filter(|b| b.starts_with(prefix))
                        .cloned()
                        .collect::<Vec<_>>()
                        .join(", ")
                )));
            }
        }
        let data = args.data.as_ref().map(fs::read_to_string).transpose()?;
        let analysis = runner::builtin(name, data.as_deref())?;
        match (&analysis, want_split) {
            (Analysis::Fit { .. }, Some(true)) => {
                Err(RunError::Usage(format!("'{name}' is not a split analysis; use fit")))
            }
            (Analysis::SplitFit { .. }, Some(false)) => {
                Err(RunError::Usage(format!("'{name}' is a split analysis; use split-fit")))
            }
            (Analysis::Suite { .. }, Some(_)) => {
                Err(RunError::Usage(format!("'{name}' is a model family; use the hiv command")))
            }
            _ => Ok((analysis, data)),
        }
    } else if let Some(path) = &args.model {
        let text = fs::read_to_string(path)?;
        let name = path.display().to_string();
        // Family commands take whatever the file declares.
        let has_split = text.contains("[split]") || text.contains("[split.");
        let analysis = runner::from_config(&name, &text, want_split.unwrap_or(has_split))?;
        Ok((analysis, None))
    } else {
        Err(RunError::Usage("pass --builtin or --model".into()))
    }
}

fn dispatch(cli: &Cli) -> Result<(), RunError> {
    let (command, args, want_split, family): (&str, &ModelArgs, Option<bool>, Option<&str>) =
        match &cli.command {
            Command::Fit(a) => ("fit", a, Some(false), None),
            Command::SplitFit(a) => ("split-fit", a, Some(true), None),
            Command::Nma(a) => ("nma", a, None, Some("smoking-")),
            Command::Hiv(a) => ("hiv", a, None, Some("hiv-")),
            Command::SimulateNull(a) => {
                let out = runner::execute_null(
                    a.replicates,
                    a.seed,
                    a.shift,
                    parse_method(&a.pvalue_method),
                    a.out.as_deref(),
                    parse_format(&a.format),
                )?;
                print!("{}", out.rendered);
                return Ok(());
            }
        };
    let settings = settings_from(&args.common);
    let (analysis, data_text) = resolve(args, want_split, family)?;
    let out = runner::execute(command, &analysis, data_text.as_deref(), &settings)?;
    print!("{}", out.rendered);
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
