use std::collections::BTreeMap;

use opcwalk_core::seeds::derive_seed;
use opcwalk_core::walker::exact_walk_distribution;
use opcwalk_core::weights::{estimate_mixing, MixingOptions};
use opcwalk_core::{local_path, sample_walk, EnvironmentHandle, Error, PermutationField, SharedEnvironment, Site, WeightFieldSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use super::coord_header;
use crate::config::ExperimentConfig;
use crate::output::{num, Outputs};
use crate::RunError;

pub fn mixing(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let sec = cfg.mixing.clone().expect("validated");
    out.seed("mixing", "0", "seed of the estimator's own stream (field samples and bootstrap)");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, "mixing", 0));
    let opts = MixingOptions { phi_min_prob: sec.phi_min_prob, confidence: sec.confidence, bootstrap_resamples: sec.bootstrap_resamples };
    let est = estimate_mixing(&cfg.weight_spec, cfg.lattice.d, sec.mode, sec.axis, &sec.gaps, sec.family, sec.samples, &mut rng, &opts)?;
    out.csv(
        "mixing.csv",
        &["gap", "coefficient", "ci_halfwidth"],
        est.gaps.iter().zip(&est.coefficients).zip(&est.ci_halfwidth).map(|((g, c), h)| [g.to_string(), num(*c), num(*h)]),
    )?;
    out.json("mixing.json", &json!({ "estimate": est, "dependence_range": cfg.weight_spec.dependence_range() }))
}

/// Walks per parallel task in the oracle check.
const ORACLE_CHUNK: u64 = 1024;

pub fn oracle_check(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let sec = cfg.oracle.clone().expect("validated");
    let d = cfg.lattice.d;
    let steps = cfg.steps as usize;
    let k = steps + cfg.lattice.horizon as usize;
    let start = sec.start;
    out.seed("oracle-kernel", "window << 40 | run", "kernel sampler randomness (ChaCha8)");
    out.seed("oracle-local", "window << 40 | run", "permutation field of one local path");
    let mut summary = Vec::new();
    let mut rows = Vec::new();
    for (wi, w) in sec.windows.iter().enumerate() {
        let exact = exact_walk_distribution(w, &cfg.lattice, &start, steps)?.to_f64();
        let env = EnvironmentHandle::from_window(w, cfg.lattice, WeightFieldSpec::constant(1.0), 0)?;
        let shared = SharedEnvironment::new(&env);
        let key = |i: u64| (wi as u64) << 40 | i;
        let chunks = sec.runs.div_ceil(ORACLE_CHUNK as usize) as u64;
        let tally = |sampler: &(dyn Fn(&EnvironmentHandle, u64) -> Result<Site, Error> + Sync)| -> Result<BTreeMap<Vec<i64>, u64>, Error> {
            let parts: Vec<BTreeMap<Vec<i64>, u64>> = (0..chunks)
                .into_par_iter()
                .map_init(
                    || shared.fork(),
                    |local, c| {
                        let mut counts = BTreeMap::new();
                        for i in c * ORACLE_CHUNK..((c + 1) * ORACLE_CHUNK).min(sec.runs as u64) {
                            let end = sampler(local, key(i))?;
                            *counts.entry(end.x[..d].to_vec()).or_insert(0) += 1;
                        }
                        Ok(counts)
                    },
                )
                .collect::<Result<_, Error>>()?;
            let mut total = BTreeMap::new();
            for part in parts {
                for (x, c) in part {
                    *total.entry(x).or_insert(0) += c;
                }
            }
            Ok(total)
        };
        let kernel = tally(&|env, seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, "oracle-kernel", seed));
            Ok(sample_walk(&start, steps, env, &mut rng)?.end())
        })?;
        let local = tally(&|env, seed| {
            let perms = PermutationField::new(derive_seed(cfg.master_seed, "oracle-local", seed));
            Ok(local_path(&start, k, env, &perms).sites().nth(steps).expect("k >= steps"))
        })?;
        let runs = sec.runs as f64;
        let mut support: Vec<&Vec<i64>> = exact.keys().chain(kernel.keys()).chain(local.keys()).collect();
        support.sort();
        support.dedup();
        let freq = |m: &BTreeMap<Vec<i64>, u64>, x: &Vec<i64>| m.get(x).copied().unwrap_or(0) as f64 / runs;
        let prob = |x: &Vec<i64>| exact.get(x).copied().unwrap_or(0.0);
        let tv = |m: &BTreeMap<Vec<i64>, u64>| 0.5 * support.iter().map(|x| (freq(m, x) - prob(x)).abs()).sum::<f64>();
        // Mean plug-in TV under exact sampling is about this size.
        let noise = 0.5 * exact.values().map(|p| (2.0 * p * (1.0 - p) / (std::f64::consts::PI * runs)).sqrt()).sum::<f64>();
        for (name, m) in [("kernel", &kernel), ("local_path", &local)] {
            summary.push(json!({ "window": wi, "sampler": name, "runs": sec.runs, "support": exact.len(), "tv": tv(m), "noise_scale": noise }));
        }
        for x in &support {
            let mut row = vec![wi.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            row.extend([num(prob(x)), num(freq(&kernel, x)), num(freq(&local, x))]);
            rows.push(row);
        }
    }
    let mut header = vec!["window".to_string()];
    header.extend(coord_header("x_", d));
    header.extend(["exact".into(), "kernel".into(), "local_path".into()]);
    out.csv("oracle_distribution.csv", &header.iter().map(String::as_str).collect::<Vec<_>>(), rows)?;
    out.csv(
        "oracle.csv",
        &["window", "sampler", "runs", "support", "tv", "noise_scale"],
        summary.iter().map(|s| {
            vec![
                s["window"].to_string(),
                s["sampler"].as_str().unwrap_or_default().to_string(),
                s["runs"].to_string(),
                s["support"].to_string(),
                num(s["tv"].as_f64().unwrap_or(f64::NAN)),
                num(s["noise_scale"].as_f64().unwrap_or(f64::NAN)),
            ]
        }),
    )?;
    out.json("oracle.json", &json!({ "steps": steps, "local_path_length": k, "start": start, "results": summary }))
}
