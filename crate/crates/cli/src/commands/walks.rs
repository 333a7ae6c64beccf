use opcwalk_core::regeneration::{find_regenerations_with, RegenerationRecord};
use opcwalk_core::seeds::derive_seed;
use opcwalk_core::stats::qq_points;
use opcwalk_core::walker::PermutationWalker;
use opcwalk_core::{
    clt_experiment, condition_on_origin, estimate_covariance, estimate_drift, CltConfig, CltMode, Error, PermutationField, Site,
};
use rayon::prelude::*;
use serde_json::json;

use super::{coord_header, coords, mean_and_stderr};
use crate::config::{CltSection, DriftSection, ExperimentConfig};
use crate::output::{num, Outputs};
use crate::RunError;

/// Mean velocity of the Berger walk.
pub const BERGER_VELOCITY: f64 = -1.0 / 90.0;

pub fn drift(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    if cfg.lattice.p >= 1.0 {
        return ergodic(cfg, out, None);
    }
    let sec = cfg.drift.clone().unwrap_or_default();
    let DriftSection { regenerations, lag_cutoff } = sec;
    let d = cfg.lattice.d;
    out.seed("drift-env", "replica", "environment, conditioned on the origin being in the backbone");
    out.seed("drift-walk", "replica", "walk permutations");
    let records: Vec<RegenerationRecord> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let env = condition_on_origin(derive_seed(cfg.master_seed, "drift-env", r), cfg.lattice, &cfg.weight_spec, cfg.rejection_cap)?.env;
            let perms = PermutationField::new(derive_seed(cfg.master_seed, "drift-walk", r));
            find_regenerations_with(&Site::origin(), regenerations, cfg.m, &env, perms, cfg.budget)
        })
        .collect::<Result<_, Error>>()?;
    let incomplete = records.iter().filter(|r| r.incomplete).count();
    if incomplete > 0 {
        out.partial(format!("{incomplete} replica(s) hit the step budget before {regenerations} regenerations"));
    }
    let est = estimate_drift(&records)?;
    let covariance = match estimate_covariance(&records, lag_cutoff) {
        Ok(c) => Some(c.sigma),
        Err(e) => {
            out.warn(format!("no covariance estimate: {e}"));
            None
        }
    };
    let taus: Vec<f64> = records.iter().flat_map(|r| r.increments.iter().map(|i| i.tau as f64)).collect();
    let mut header = vec!["replica".to_string(), "index".into(), "tau".into()];
    header.extend(coord_header("y_", d));
    let rows = records.iter().enumerate().flat_map(|(r, rec)| {
        rec.increments.iter().enumerate().map(move |(k, inc)| {
            let mut row = vec![r.to_string(), (k + 1).to_string(), inc.tau.to_string()];
            row.extend(inc.y.iter().map(|v| v.to_string()));
            row
        })
    });
    out.csv("increments.csv", &header.iter().map(String::as_str).collect::<Vec<_>>(), rows)?;
    out.json(
        "drift.json",
        &json!({
            "method": "regeneration",
            "mu_hat": est.mu_hat,
            "stderr": est.stderr,
            "n_increments": est.n_increments,
            "mean_tau": mean_and_stderr(&taus).0,
            "replicas": cfg.replicas,
            "incomplete_replicas": incomplete,
            "lag_cutoff": lag_cutoff,
            "sigma": covariance,
        }),
    )
}

pub fn berger(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    ergodic(cfg, out, Some(BERGER_VELOCITY))
}

/// `X_n / n` per replica and its mean over replicas.
fn ergodic(cfg: &ExperimentConfig, out: &mut Outputs, reference: Option<f64>) -> Result<(), RunError> {
    let d = cfg.lattice.d;
    out.seed("ergodic-env", "replica", "environment, conditioned on the origin being in the backbone");
    out.seed("ergodic-walk", "replica", "walk permutations");
    let ends: Vec<Site> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let env = condition_on_origin(derive_seed(cfg.master_seed, "ergodic-env", r), cfg.lattice, &cfg.weight_spec, cfg.rejection_cap)?.env;
            let mut walker = PermutationWalker::new(Site::origin(), &env, PermutationField::new(derive_seed(cfg.master_seed, "ergodic-walk", r)))?;
            for _ in 0..cfg.steps {
                walker.advance()?;
            }
            Ok(walker.current())
        })
        .collect::<Result<_, Error>>()?;
    let n = cfg.steps as f64;
    let (mu_hat, stderr): (Vec<f64>, Vec<f64>) =
        (0..d).map(|k| mean_and_stderr(&ends.iter().map(|s| s.x[k] as f64 / n).collect::<Vec<_>>())).unzip();
    let mut header = vec!["replica".to_string(), "steps".into()];
    header.extend(coord_header("x_", d));
    header.extend(coord_header("velocity_", d));
    let rows = ends.iter().enumerate().map(|(r, s)| {
        let mut row = vec![r.to_string(), cfg.steps.to_string()];
        row.extend(coords(s, d));
        row.extend(s.x[..d].iter().map(|v| num(*v as f64 / n)));
        row
    });
    out.csv("per_replica.csv", &header.iter().map(String::as_str).collect::<Vec<_>>(), rows)?;
    out.json(
        "drift.json",
        &json!({
            "method": "ergodic",
            "mu_hat": mu_hat,
            "stderr": stderr,
            "replicas": cfg.replicas,
            "steps": cfg.steps,
            "reference_mu": reference,
        }),
    )
}

pub fn clt(cfg: &ExperimentConfig, out: &mut Outputs, mode: CltMode) -> Result<(), RunError> {
    let d = cfg.lattice.d;
    let CltSection { drift_increments } = cfg.clt.clone().unwrap_or_default();
    let ccfg = CltConfig {
        lattice: cfg.lattice,
        weight_spec: cfg.weight_spec.clone(),
        m: cfg.m,
        steps: cfg.steps,
        replicas: cfg.replicas,
        environments: cfg.environments,
        drift_increments,
        rejection_cap: cfg.rejection_cap,
    };
    match mode {
        CltMode::Annealed => {
            out.seed("clt-env", "replica", "environment per walk");
            out.seed("clt-walk", "replica", "walk permutations");
        }
        CltMode::Quenched => {
            out.seed("clt-env", "environment", "fixed environment");
            out.seed("clt-walk", "environment << 32 | replica", "walk permutations");
        }
    }
    if cfg.lattice.p < 1.0 {
        out.seed("drift-env", "record (0..16)", "environments of the centering drift runs");
        out.seed("drift-perm", "record (0..16)", "walk permutations of the centering drift runs");
    }
    let report = clt_experiment(mode, &ccfg, cfg.master_seed)?;
    let mut header = vec!["environment".to_string(), "replica".into()];
    header.extend(coord_header("z_", d));
    let rows = report.samples.iter().enumerate().flat_map(|(e, zs)| {
        zs.iter().enumerate().map(move |(r, z)| {
            let mut row = vec![e.to_string(), r.to_string()];
            row.extend(z.iter().map(|v| num(*v)));
            row
        })
    });
    out.csv("endpoints.csv", &header.iter().map(String::as_str).collect::<Vec<_>>(), rows)?;
    out.csv(
        "per_environment.csv",
        &["environment", "n", "ks_distance", "qq_correlation", "standardized_mean", "standardized_variance"],
        report.per_environment.iter().enumerate().map(|(e, r)| {
            vec![e.to_string(), r.n.to_string(), num(r.ks_distance), num(r.qq_correlation), num(r.standardized_mean), num(r.standardized_variance)]
        }),
    )?;
    let pooled: Vec<Vec<f64>> = report.samples.iter().flatten().cloned().collect();
    let qq = qq_points(&pooled, d, 0)?;
    out.csv("qq.csv", &["theoretical", "empirical"], qq.iter().map(|(t, e)| [num(*t), num(*e)]))?;
    let tolerance = 4.0 / (cfg.replicas as f64).sqrt();
    out.json(
        "clt.json",
        &json!({
            "report": report,
            "steps": cfg.steps,
            "replicas": cfg.replicas,
            "environments": if mode == CltMode::Quenched { cfg.environments } else { 1 },
            "mean_gap_tolerance": tolerance,
        }),
    )
}
