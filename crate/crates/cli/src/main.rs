use anyhow::Context;
use clap::Parser;
use fracpar_cli::{run_to_dir, CliError, Experiment, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Runs one experiment and writes CSV tables plus `summary.json`.
///
/// Exit status: 0 when every check passes, 1 when a check fails, 2 for
/// configuration errors and 3 for numerical or i/o failures.
#[derive(Debug, Parser)]
#[command(name = "fracpar", version)]
struct Args {
    /// JSON configuration; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the parallel sweeps and the dense kernels.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Overrides the configured experiment.
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
}

fn config(args: &Args) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(e) = args.experiment {
        cfg.experiment = e;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.threads == 0 {
        return Err(CliError::Config("--threads must be positive".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("fracpar: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    faer::set_global_parallelism(if args.threads == 1 {
        faer::Par::Seq
    } else {
        faer::Par::rayon(args.threads)
    });
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let result = run_to_dir(&cfg, args.threads, &out).with_context(|| format!("experiment {}", cfg.experiment));
    match result {
        Ok(summary) => {
            for c in &summary.checks {
                println!("{} {} value={:.6e} tol={:.6e}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.tol);
            }
            if summary.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("fracpar: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(3, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
