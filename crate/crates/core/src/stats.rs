//! Normality diagnostics, least-squares fits, and the annealed and quenched
//! CLT drivers.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::environment::{condition_on_origin, EnvironmentHandle, SharedEnvironment};
use crate::error::{Error, Result};
use crate::lattice::{LatticeConfig, Site};
use crate::regeneration::{estimate_drift, DEFAULT_STEP_BUDGET};
use crate::seeds::derive_seed;
use crate::walker::{PermutationField, PermutationWalker};
use crate::weights::WeightFieldSpec;

pub const MIN_NORMALITY_SAMPLES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn loglinear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidConfig(format!("{} xs but {} ys", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData(format!("{} points", xs.len())));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= f64::EPSILON * n * (1.0 + mx * mx) {
        return Err(Error::Degenerate("xs are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).min(1.0) };
    Ok(LinearFit { slope, intercept, r_squared })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub n: usize,
    /// Largest per-coordinate Kolmogorov-Smirnov distance to `Phi`.
    pub ks_distance: f64,
    /// Smallest per-coordinate QQ correlation.
    pub qq_correlation: f64,
    /// Sample mean of the first coordinate, before whitening.
    pub standardized_mean: f64,
    /// Average per-coordinate sample variance, before whitening.
    pub standardized_variance: f64,
    pub means: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

fn sample_moments(samples: &[Vec<f64>], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples.len() as f64;
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += DVector::from_column_slice(&s[..d]);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let z = DVector::from_column_slice(&s[..d]) - &mean;
        cov += &z * z.transpose();
    }
    cov /= n - 1.0;
    (mean, cov)
}

/// Whitens samples by their sample mean and the Cholesky factor of their
/// sample covariance.
pub fn standardize(samples: &[Vec<f64>], d: usize) -> Result<Vec<Vec<f64>>> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!("{} samples", samples.len())));
    }
    if d == 0 || samples.iter().any(|s| s.len() < d) {
        return Err(Error::InvalidConfig(format!("samples must have {d} coordinates")));
    }
    let (mean, cov) = sample_moments(samples, d);
    let scale = cov.trace().abs().max(f64::MIN_POSITIVE);
    let eig = cov.clone().symmetric_eigenvalues();
    if eig.min() <= 1e-12 * scale || !eig.min().is_finite() {
        return Err(Error::Degenerate("sample covariance is singular".into()));
    }
    let chol = cov.cholesky().ok_or_else(|| Error::Degenerate("sample covariance is not positive definite".into()))?;
    let l = chol.l();
    Ok(samples
        .iter()
        .map(|s| {
            let z = DVector::from_column_slice(&s[..d]) - &mean;
            let w = l.solve_lower_triangular(&z).expect("Cholesky factor is invertible");
            w.iter().copied().collect()
        })
        .collect())
}

fn ks_and_qq(values: &mut [f64]) -> (f64, f64) {
    let phi = Normal::standard();
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mut ks: f64 = 0.0;
    let quantiles: Vec<f64> = (0..values.len()).map(|i| phi.inverse_cdf((i as f64 + 0.5) / n)).collect();
    for (i, v) in values.iter().enumerate() {
        let f = phi.cdf(*v);
        ks = ks.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    let mq = quantiles.iter().sum::<f64>() / n;
    let mv = values.iter().sum::<f64>() / n;
    let (mut sqv, mut sqq, mut sqvq) = (0.0, 0.0, 0.0);
    for (q, v) in quantiles.iter().zip(values.iter()) {
        sqv += (v - mv).powi(2);
        sqq += (q - mq).powi(2);
        sqvq += (v - mv) * (q - mq);
    }
    (ks.min(1.0), (sqvq / (sqv * sqq).sqrt()).clamp(-1.0, 1.0))
}

/// Per-coordinate KS distance and QQ correlation of the whitened samples.
pub fn normality_report(samples: &[Vec<f64>], d: usize) -> Result<NormalityReport> {
    if samples.len() < MIN_NORMALITY_SAMPLES {
        return Err(Error::InsufficientData(format!("{} samples, need {MIN_NORMALITY_SAMPLES}", samples.len())));
    }
    let whitened = standardize(samples, d)?;
    let (mean, cov) = sample_moments(samples, d);
    let mut ks_distance: f64 = 0.0;
    let mut qq_correlation: f64 = 1.0;
    for k in 0..d {
        let mut col: Vec<f64> = whitened.iter().map(|w| w[k]).collect();
        let (ks, qq) = ks_and_qq(&mut col);
        ks_distance = ks_distance.max(ks);
        qq_correlation = qq_correlation.min(qq);
    }
    Ok(NormalityReport {
        n: samples.len(),
        ks_distance,
        qq_correlation,
        standardized_mean: mean[0],
        standardized_variance: cov.trace() / d as f64,
        means: mean.iter().copied().collect(),
        covariance: (0..d).map(|i| (0..d).map(|j| cov[(i, j)]).collect()).collect(),
    })
}

/// `(theoretical, empirical)` quantile pairs of one whitened coordinate.
pub fn qq_points(samples: &[Vec<f64>], d: usize, coordinate: usize) -> Result<Vec<(f64, f64)>> {
    let whitened = standardize(samples, d)?;
    let mut col: Vec<f64> = whitened.iter().map(|w| w[coordinate]).collect();
    col.sort_by(f64::total_cmp);
    let phi = Normal::standard();
    let n = col.len() as f64;
    Ok(col.into_iter().enumerate().map(|(i, v)| (phi.inverse_cdf((i as f64 + 0.5) / n), v)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CltMode {
    Annealed,
    Quenched,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltConfig {
    pub lattice: LatticeConfig,
    pub weight_spec: WeightFieldSpec,
    pub m: u32,
    pub steps: u64,
    /// Walks per environment in quenched mode, walks in total in annealed mode.
    pub replicas: usize,
    /// Fixed environments; used in quenched mode only.
    pub environments: usize,
    /// Regeneration increments collected for the drift when `p < 1`.
    pub drift_increments: usize,
    /// Cap on `condition_on_origin` attempts.
    pub rejection_cap: u64,
}

impl CltConfig {
    pub fn new(lattice: LatticeConfig, weight_spec: WeightFieldSpec, steps: u64, replicas: usize) -> Self {
        CltConfig { lattice, weight_spec, m: 1, steps, replicas, environments: 1, drift_increments: 10_000, rejection_cap: 100_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub mode: CltMode,
    pub per_environment: Vec<NormalityReport>,
    pub drift_used: Vec<f64>,
    pub drift_stderr: Vec<f64>,
    /// `sqrt(n)` times the identity.
    pub scale_used: Vec<Vec<f64>>,
    /// Largest gap between per-environment standardized means.
    pub max_mean_gap: f64,
    /// All samples pooled.
    pub pooled: NormalityReport,
    #[serde(skip)]
    pub samples: Vec<Vec<Vec<f64>>>,
}

fn end_point(env: &EnvironmentHandle, perms: PermutationField, steps: u64) -> Result<Site> {
    let mut walker = PermutationWalker::new(Site::origin(), env, perms)?;
    for _ in 0..steps {
        walker.advance()?;
    }
    Ok(walker.current())
}

/// Drift for centering: the regeneration ratio estimator when `p < 1`, the
/// ergodic average of the endpoints when `p = 1`.
fn drift(cfg: &CltConfig, endpoints: &[Vec<Site>], seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = cfg.lattice.d;
    if cfg.lattice.p >= 1.0 {
        let all: Vec<&Site> = endpoints.iter().flatten().collect();
        let n = all.len() as f64 * cfg.steps as f64;
        let mu: Vec<f64> = (0..d).map(|k| all.iter().map(|s| s.x[k] as f64).sum::<f64>() / n).collect();
        let se: Vec<f64> = (0..d)
            .map(|k| {
                let xs: Vec<f64> = all.iter().map(|s| s.x[k] as f64 / cfg.steps as f64).collect();
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0) / xs.len() as f64).sqrt()
            })
            .collect();
        return Ok((mu, se));
    }
    let per_record = (cfg.drift_increments / 16).max(1);
    let records = (0..16u64)
        .into_par_iter()
        .map(|i| {
            let env = condition_on_origin(derive_seed(seed, "drift-env", i), cfg.lattice, &cfg.weight_spec, cfg.rejection_cap)?.env;
            let perms = PermutationField::new(derive_seed(seed, "drift-perm", i));
            crate::regeneration::find_regenerations_with(&Site::origin(), per_record, cfg.m, &env, perms, DEFAULT_STEP_BUDGET)
        })
        .collect::<Result<Vec<_>>>()?;
    let est = estimate_drift(&records)?;
    Ok((est.mu_hat, est.stderr))
}

/// Collects `(X_n - n mu) / sqrt(n)` over replicas. Annealed mode draws a
/// fresh environment per walk; quenched mode runs `replicas` walks in each of
/// `environments` fixed environments.
pub fn clt_experiment(mode: CltMode, cfg: &CltConfig, seed: u64) -> Result<CltReport> {
    let d = cfg.lattice.d;
    if cfg.steps == 0 || cfg.replicas == 0 {
        return Err(Error::InvalidConfig("steps and replicas must be positive".into()));
    }
    if mode == CltMode::Quenched && cfg.environments < 2 {
        return Err(Error::InvalidConfig("quenched mode needs at least two environments".into()));
    }
    let endpoints: Vec<Vec<Site>> = match mode {
        CltMode::Annealed => {
            let ends = (0..cfg.replicas as u64)
                .into_par_iter()
                .map(|r| {
                    let env = condition_on_origin(derive_seed(seed, "clt-env", r), cfg.lattice, &cfg.weight_spec, cfg.rejection_cap)?.env;
                    end_point(&env, PermutationField::new(derive_seed(seed, "clt-walk", r)), cfg.steps)
                })
                .collect::<Result<Vec<_>>>()?;
            vec![ends]
        }
        CltMode::Quenched => (0..cfg.environments as u64)
            .map(|e| {
                let env = condition_on_origin(derive_seed(seed, "clt-env", e), cfg.lattice, &cfg.weight_spec, cfg.rejection_cap)?.env;
                let shared = SharedEnvironment::new(&env);
                (0..cfg.replicas as u64)
                    .into_par_iter()
                    .map_init(|| shared.fork(), |local, r| end_point(local, PermutationField::new(derive_seed(seed, "clt-walk", e << 32 | r)), cfg.steps))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let (drift_used, drift_stderr) = drift(cfg, &endpoints, seed)?;
    let n = cfg.steps as f64;
    let samples: Vec<Vec<Vec<f64>>> = endpoints
        .iter()
        .map(|ends| ends.iter().map(|s| (0..d).map(|k| (s.x[k] as f64 - n * drift_used[k]) / n.sqrt()).collect()).collect())
        .collect();
    let per_environment = samples.iter().map(|s| normality_report(s, d)).collect::<Result<Vec<_>>>()?;
    let pooled_samples: Vec<Vec<f64>> = samples.iter().flatten().cloned().collect();
    let pooled = normality_report(&pooled_samples, d)?;
    let mut max_mean_gap: f64 = 0.0;
    for a in &per_environment {
        for b in &per_environment {
            max_mean_gap = max_mean_gap.max((a.standardized_mean - b.standardized_mean).abs());
        }
    }
    let scale_used = (0..d).map(|i| (0..d).map(|j| if i == j { n.sqrt() } else { 0.0 }).collect()).collect();
    Ok(CltReport { mode, per_environment, drift_used, drift_stderr, scale_used, max_mean_gap, pooled, samples })
}
