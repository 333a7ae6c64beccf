//! One function per experiment. Each writes its own result files through
//! [`Outputs`] and records the seed streams it draws from.

mod fields;
mod pairs;
mod regen;
mod walks;

use opcwalk_core::Site;

use crate::config::{Command, ExperimentConfig};
use crate::output::Outputs;
use crate::RunError;

pub(crate) fn dispatch(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    match cfg.command {
        Command::Drift => walks::drift(cfg, out),
        Command::Berger => walks::berger(cfg, out),
        Command::Clt => walks::clt(cfg, out, opcwalk_core::CltMode::Annealed),
        Command::QuenchedClt => walks::clt(cfg, out, opcwalk_core::CltMode::Quenched),
        Command::Tail => regen::tail(cfg, out),
        Command::Mixing => fields::mixing(cfg, out),
        Command::OracleCheck => fields::oracle_check(cfg, out),
        Command::PairTv => pairs::pair_tv(cfg, out),
        Command::Annulus => pairs::annulus(cfg, out),
    }
}

/// `x_0, ..., x_{d-1}` column names with a prefix.
fn coord_header(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|k| format!("{prefix}{k}")).collect()
}

fn coords(s: &Site, d: usize) -> impl Iterator<Item = String> + '_ {
    s.x[..d].iter().map(|v| v.to_string())
}

/// Sample mean and standard error of the mean; the error is infinite below two values.
fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
