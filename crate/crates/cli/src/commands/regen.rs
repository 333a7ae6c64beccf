use opcwalk_core::pairwalk::PairOptions;
use opcwalk_core::regeneration::find_regenerations_with;
use opcwalk_core::seeds::derive_seed;
use opcwalk_core::{
    condition_on_origin, condition_on_sites, fit_tail, is_s2m, run_pair, EnvironmentHandle, Error, PairEnvironments, PermutationField, Site,
};
use rayon::prelude::*;
use serde_json::json;

use super::mean_and_stderr;
use crate::config::{ExperimentConfig, TailSection};
use crate::output::Outputs;
use crate::RunError;

/// Sites scanned per environment in the `S_2m` census.
const SITES_PER_ENVIRONMENT: i64 = 1000;
/// Environments scanned per parallel batch of the census.
const CENSUS_BATCH: u64 = 16;
const MAX_CENSUS_ENVIRONMENTS: u64 = 1 << 16;

pub fn tail(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let sec = cfg.tail.clone().unwrap_or_default();
    let seed = cfg.master_seed;
    out.seed("tail-env", "sample", "environment of one T_1 sample");
    out.seed("tail-walk", "sample", "walk permutations of one T_1 sample");
    let t1: Vec<Option<u64>> = (0..sec.samples as u64)
        .into_par_iter()
        .map(|i| {
            let env = condition_on_origin(derive_seed(seed, "tail-env", i), cfg.lattice, &cfg.weight_spec, cfg.rejection_cap)?.env;
            let perms = PermutationField::new(derive_seed(seed, "tail-walk", i));
            let rec = find_regenerations_with(&Site::origin(), 1, cfg.m, &env, perms, cfg.budget)?;
            Ok(rec.times.get(1).map(|t| (t - rec.times[0]) as u64))
        })
        .collect::<Result<_, Error>>()?;
    out.csv("tail_t1.csv", &["sample", "t1"], t1.iter().enumerate().map(|(i, t)| [i.to_string(), t.map_or(String::new(), |t| t.to_string())]))?;
    let t1_report = summarize(&t1, "T_1", out)?;

    let tsim_report = if sec.pair_samples > 0 {
        let tsim = pair_times(cfg, &sec, out)?;
        out.csv("tail_tsim.csv", &["sample", "tsim1"], tsim.iter().enumerate().map(|(i, t)| [i.to_string(), t.map_or(String::new(), |t| t.to_string())]))?;
        Some(summarize(&tsim, "T^sim_1", out)?)
    } else {
        None
    };
    let s2m = if sec.s2m_sites > 0 { Some(census(cfg, &sec, out)?) } else { None };
    out.json("tail.json", &json!({ "t1": t1_report, "tsim1": tsim_report, "s2m": s2m, "m": cfg.m }))
}

fn summarize(samples: &[Option<u64>], name: &str, out: &mut Outputs) -> Result<serde_json::Value, RunError> {
    let done: Vec<u64> = samples.iter().flatten().copied().collect();
    let censored = samples.len() - done.len();
    if censored > 0 {
        out.partial(format!("{censored} {name} sample(s) hit the step budget and are left out of the fit"));
    }
    let fit = fit_tail(&done)?;
    let (mean, se) = mean_and_stderr(&done.iter().map(|&t| t as f64).collect::<Vec<_>>());
    Ok(json!({ "samples": done.len(), "censored": censored, "mean": mean, "mean_stderr": se, "fit": fit }))
}

/// First simultaneous regeneration of two walks in one environment.
fn pair_times(cfg: &ExperimentConfig, sec: &TailSection, out: &mut Outputs) -> Result<Vec<Option<u64>>, RunError> {
    let seed = cfg.master_seed;
    let other = Site::new(&sec.pair_offset, 0);
    out.seed("tail-pair-env", "sample", "environment shared by both walks, conditioned on both starts");
    out.seed("tail-pair-walk", "2 * sample + walk", "walk permutations");
    let options = PairOptions { budget: cfg.budget, record_paths: false };
    Ok((0..sec.pair_samples as u64)
        .into_par_iter()
        .map(|i| {
            let env =
                condition_on_sites(derive_seed(seed, "tail-pair-env", i), cfg.lattice, &cfg.weight_spec, cfg.rejection_cap, &[Site::origin(), other])?
                    .env;
            let perms =
                (PermutationField::new(derive_seed(seed, "tail-pair-walk", 2 * i)), PermutationField::new(derive_seed(seed, "tail-pair-walk", 2 * i + 1)));
            let rec = run_pair(PairEnvironments::Joint(&env), (Site::origin(), other), perms, 1, cfg.m, options)?;
            Ok(rec.sim_times.first().map(|&t| t as u64))
        })
        .collect::<Result<_, Error>>()?)
}

/// Frequency of `S_2m` among backbone sites `(k * spacing, 0)`, scanning
/// environments in order until enough backbone sites are found.
fn census(cfg: &ExperimentConfig, sec: &TailSection, out: &mut Outputs) -> Result<serde_json::Value, RunError> {
    let seed = cfg.master_seed;
    out.seed("s2m-percolation", "environment", "percolation of one census environment (not conditioned)");
    out.seed("s2m-weights", "environment", "weights of one census environment");
    let mut flags: Vec<bool> = Vec::with_capacity(sec.s2m_sites);
    let mut next_env = 0u64;
    let mut scanned = 0usize;
    while flags.len() < sec.s2m_sites {
        if next_env >= MAX_CENSUS_ENVIRONMENTS {
            return Err(Error::InsufficientData(format!("only {} backbone sites in {next_env} environments", flags.len())).into());
        }
        let batch: Vec<Vec<bool>> = (next_env..next_env + CENSUS_BATCH)
            .into_par_iter()
            .map(|e| {
                let env = EnvironmentHandle::new(
                    derive_seed(seed, "s2m-percolation", e),
                    derive_seed(seed, "s2m-weights", e),
                    cfg.lattice,
                    cfg.weight_spec.clone(),
                )?;
                Ok((0..SITES_PER_ENVIRONMENT)
                    .map(|k| Site::new(&[k * sec.s2m_spacing], 0))
                    .filter(|s| env.in_backbone(s))
                    .map(|s| is_s2m(&s, cfg.m, &env))
                    .collect())
            })
            .collect::<Result<_, Error>>()?;
        next_env += CENSUS_BATCH;
        scanned += (CENSUS_BATCH as i64 * SITES_PER_ENVIRONMENT) as usize;
        for f in batch.into_iter().flatten() {
            if flags.len() < sec.s2m_sites {
                flags.push(f);
            }
        }
    }
    let n = flags.len() as f64;
    let hits = flags.iter().filter(|&&f| f).count();
    let d = cfg.lattice.d as i32;
    let lower_bound = (1.0 - cfg.lattice.p).powi(2 * cfg.m as i32 * (2 * d - 1));
    let sd = (lower_bound * (1.0 - lower_bound) / n).sqrt();
    Ok(json!({
        "backbone_sites": flags.len(),
        "scanned_sites": scanned,
        "hits": hits,
        "frequency": hits as f64 / n,
        "lower_bound": lower_bound,
        "binomial_sd": sd,
        "threshold": lower_bound - 4.0 * sd,
        "spacing": sec.s2m_spacing,
    }))
}
