use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use heatlab_cli::{run, write_outputs, CliError, Experiment, RunConfig, EXIT_INVALID_CONFIG};

/// Run a heatlab experiment from a JSON config.
#[derive(Parser, Debug)]
#[command(name = "heatlab", version)]
struct Args {
    /// Path to the JSON run config.
    #[arg(long, required_unless_present = "list_experiments")]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Experiment name; overrides `experiment` in the config.
    #[arg(long)]
    experiment: Option<String>,
    /// Print the available experiments and exit.
    #[arg(long)]
    list_experiments: bool,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID_CONFIG } else { 0 });
        }
    };
    if args.list_experiments {
        for e in Experiment::ALL {
            println!("{:<14} {}", e.name(), e.summary());
        }
        return ExitCode::SUCCESS;
    }
    match execute(&args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("heatlab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(args: &Args) -> Result<u8, CliError> {
    if let Ok(w) = std::env::var("HEATLAB_WORKERS") {
        let workers: usize = w
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("HEATLAB_WORKERS must be a positive integer, got `{w}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let path = args.config.as_ref().expect("clap enforces --config");
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(name) = &args.experiment {
        cfg.experiment = name.parse()?;
    }
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("heatlab-out"));
    let out = run(&cfg)?;
    for p in write_outputs(&dir, &out)? {
        println!("{}", p.display());
    }
    println!("{}: {}", cfg.experiment.name(), if out.passed { "pass" } else { "FAIL" });
    Ok(out.exit_code())
}
