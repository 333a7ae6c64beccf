//! Experiment runner behind the `opcwalk` binary.
//!
//! [`validate_config`] turns JSON text into an [`ExperimentConfig`];
//! [`run`] executes it, writes CSV/JSON results plus a [`RunManifest`] into
//! the output directory. Replicas run on the current rayon pool and every
//! random stream is keyed by `(master_seed, label, index)`, so outputs do not
//! depend on the number of threads.

pub mod commands;
pub mod config;
pub mod output;

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

pub use config::{validate_config, validate_with, Command, ConfigError, ExperimentConfig, Overrides};
pub use output::{OutputFile, RunManifest, RunStatus, SeedDerivation, MANIFEST_FILE};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration")]
    Config(Vec<ConfigError>),
    #[error("{0}")]
    Core(#[from] opcwalk_core::Error),
    #[error("i/o: {0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Core(_) | RunError::Io(_) => 1,
        }
    }

    /// Machine-readable form printed on stderr.
    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Body<'a> {
            error: &'a str,
            message: String,
            #[serde(skip_serializing_if = "Option::is_none")]
            errors: Option<&'a [ConfigError]>,
        }
        let body = match self {
            RunError::Config(errs) => Body { error: "config", message: format!("{} violation(s)", errs.len()), errors: Some(errs) },
            RunError::Core(e) => Body { error: "runtime", message: e.to_string(), errors: None },
            RunError::Io(m) => Body { error: "io", message: m.clone(), errors: None },
        };
        serde_json::to_value(body).expect("plain data")
    }
}

/// Runs a validated config on the current rayon pool and writes its manifest.
pub fn run(cfg: &ExperimentConfig) -> Result<RunManifest, RunError> {
    let dir = cfg
        .output_dir
        .clone()
        .ok_or_else(|| RunError::Config(vec![ConfigError { pointer: "/output_dir".into(), message: "missing".into() }]))?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let clock = Instant::now();
    let mut out = output::Outputs::new(&dir)?;
    commands::dispatch(cfg, &mut out)?;
    let manifest = RunManifest {
        software: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cfg.command.name().into(),
        config: cfg.clone(),
        status: if out.partial { RunStatus::Partial } else { RunStatus::Ok },
        warnings: out.warnings.clone(),
        outputs: out.files.clone(),
        seed_derivations: out.seeds.clone(),
        threads: rayon::current_num_threads(),
        started_unix_seconds: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
    };
    out.json(MANIFEST_FILE, &manifest)?;
    Ok(manifest)
}

/// Validates `raw` with `overrides` and runs it on a pool of `threads` workers
/// (rayon's default when `None`).
pub fn run_text(raw: &str, overrides: &Overrides, threads: Option<usize>) -> Result<RunManifest, RunError> {
    let cfg = validate_with(raw, overrides).map_err(RunError::Config)?;
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| RunError::Io(e.to_string()))?;
            pool.install(|| run(&cfg))
        }
        None => run(&cfg),
    }
}
