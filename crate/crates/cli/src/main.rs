use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use opcwalk_cli::{run_text, Command, ConfigError, Overrides, RunError, RunStatus};

/// Simulates weighted random walks on oriented percolation backbones.
#[derive(Parser, Debug)]
#[command(name = "opcwalk", version)]
struct Args {
    command: Command,
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Master seed; overrides `master_seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if e.use_stderr() => {
            let err = RunError::Config(vec![ConfigError { pointer: String::new(), message: e.to_string() }]);
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let raw = match std::fs::read_to_string(&args.config) {
        Ok(s) => s,
        Err(e) => {
            let err = RunError::Config(vec![ConfigError { pointer: String::new(), message: format!("{}: {e}", args.config.display()) }]);
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    let overrides = Overrides { command: Some(args.command), output_dir: args.out, master_seed: args.seed };
    match run_text(&raw, &overrides, args.threads) {
        Ok(manifest) => {
            let summary = serde_json::json!({
                "status": manifest.status,
                "command": manifest.command,
                "outputs": manifest.outputs.iter().map(|o| &o.path).collect::<Vec<_>>(),
                "warnings": manifest.warnings,
            });
            println!("{summary}");
            if manifest.status == RunStatus::Partial {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
