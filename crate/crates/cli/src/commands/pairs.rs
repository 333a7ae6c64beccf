use opcwalk_core::seeds::derive_seed;
use opcwalk_core::{annulus_experiment, estimate_tv, loglinear_fit, AnnulusConfig, AnnulusSpec, Site, TvConfig};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::output::{num, Outputs};
use crate::RunError;

pub fn pair_tv(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let sec = cfg.pair_tv.clone().expect("validated");
    let tv_cfg = TvConfig {
        lattice: cfg.lattice,
        weight_spec: cfg.weight_spec.clone(),
        m: cfg.m,
        summary: sec.summary,
        budget: cfg.budget,
        rejection_cap: cfg.rejection_cap,
        bootstrap_resamples: sec.bootstrap_resamples,
        confidence: sec.confidence,
    };
    out.seed("pair-tv", "separation (as u64)", "base seed of one separation; the streams below hang off it");
    out.seed("tv-joint-env / tv-joint", "sample / 2 * sample + walk", "joint environment and walk permutations (under the base seed)");
    out.seed("tv-independent-a, -b / tv-independent", "sample / 2 * sample + walk", "independent environments and permutations (under the base seed)");
    out.seed("tv-bootstrap", "0", "bootstrap resampling (under the base seed)");
    let mut estimates = Vec::with_capacity(sec.separations.len());
    for &sep in &sec.separations {
        let other = Site::new(&[sep], 0);
        let est = estimate_tv(&Site::origin(), &other, sec.pairs, &tv_cfg, derive_seed(cfg.master_seed, "pair-tv", sep as u64))?;
        if est.incomplete > 0 {
            out.partial(format!("separation {sep}: {} pair(s) hit the step budget", est.incomplete));
        }
        estimates.push((sep, est));
    }
    out.csv(
        "tv.csv",
        &["separation", "tv", "ci_lo", "ci_hi", "joint_samples", "independent_samples", "incomplete"],
        estimates.iter().map(|(s, e)| {
            vec![
                s.to_string(),
                num(e.tv),
                num(e.ci.0),
                num(e.ci.1),
                e.joint_samples.to_string(),
                e.independent_samples.to_string(),
                e.incomplete.to_string(),
            ]
        }),
    )?;
    // Consecutive separations: a rise counts only when the intervals do not overlap.
    let monotone = estimates.windows(2).all(|w| w[1].1.tv <= w[0].1.tv || w[1].1.ci.0 <= w[0].1.ci.1);
    let (xs, ys): (Vec<f64>, Vec<f64>) = estimates.iter().filter(|(_, e)| e.tv > 0.0).map(|(s, e)| (*s as f64, e.tv.ln())).unzip();
    let fit = if xs.len() >= 2 { loglinear_fit(&xs, &ys).ok() } else { None };
    out.json(
        "tv.json",
        &json!({
            "summary": sec.summary,
            "pairs": sec.pairs,
            "estimates": estimates.iter().map(|(_, e)| e).collect::<Vec<_>>(),
            "non_increasing_within_ci": monotone,
            "log_tv_fit": fit,
        }),
    )
}

pub fn annulus(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), RunError> {
    let sec = cfg.annulus.clone().expect("validated");
    let mut spec = match &sec.sigma {
        Some(sigma) => AnnulusSpec::from_covariance(sigma, sec.r1, sec.r2)?,
        None => AnnulusSpec::identity(cfg.lattice.d, sec.r1, sec.r2),
    };
    spec.min_radius = sec.min_radius;
    let ann_cfg = AnnulusConfig {
        lattice: cfg.lattice,
        weight_spec: cfg.weight_spec.clone(),
        m: cfg.m,
        skeleton: sec.skeleton,
        budget: cfg.budget,
        rejection_cap: cfg.rejection_cap,
    };
    out.seed("annulus", "radius index", "base seed of one radius; the streams below hang off it");
    out.seed("annulus-a, annulus-b", "pair", "the two independent environments (under the base seed)");
    out.seed("annulus-perm", "2 * pair + walk", "walk permutations (under the base seed)");
    let mut results = Vec::with_capacity(sec.radii.len());
    for (i, &r) in sec.radii.iter().enumerate() {
        let res = annulus_experiment(&spec, r, sec.pairs, &ann_cfg, derive_seed(cfg.master_seed, "annulus", i as u64))?;
        if res.unresolved > 0 {
            out.partial(format!("radius {r}: {} pair(s) stayed in the annulus for the whole budget", res.unresolved));
        }
        results.push(res);
    }
    out.csv(
        "annulus.csv",
        &["r", "r_realized", "p_hat", "ci_lo", "ci_hi", "f_d", "outward", "inward", "unresolved"],
        results.iter().map(|a| {
            vec![
                num(a.r),
                num(a.r_realized),
                num(a.p_hat),
                num(a.ci.0),
                num(a.ci.1),
                num(a.f_d_value),
                a.outward.to_string(),
                a.inward.to_string(),
                a.unresolved.to_string(),
            ]
        }),
    )?;
    out.json("annulus.json", &json!({ "spec": spec, "skeleton": sec.skeleton, "pairs": sec.pairs, "results": results }))
}
