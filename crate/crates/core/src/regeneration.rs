//! Regeneration times of the local construction, their increments, and the
//! drift, covariance and tail estimators built on them.
//!
//! The search keeps a confirmed time `c`: once the endpoint of the local path
//! of length `c` is in the (horizon) backbone, every longer local path agrees
//! with the walk up to time `c`. A local path of length `j` also agrees with
//! the walk at every step whose remaining length is at least the horizon, so
//! its endpoint is computed from `X_{max(c, j-h-1)}` in at most `h + 1` steps.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::environment::EnvironmentHandle;
use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::stats::{loglinear_fit, LinearFit};
use crate::walker::PermutationField;

pub const DEFAULT_STEP_BUDGET: u64 = 10_000_000;
pub const DEFAULT_LAG_CUTOFF: usize = 20;
const DRIFT_BATCHES: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Increment {
    pub y: Vec<i64>,
    pub tau: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegenerationRecord {
    pub m: u32,
    /// Horizon used to certify backbone membership.
    pub horizon: u32,
    /// `T_0, T_1, ...` in absolute time; `T_0` is the start time.
    pub times: Vec<i64>,
    /// `X_{T_n}` for each entry of `times`.
    pub space_marks: Vec<Vec<i64>>,
    pub increments: Vec<Increment>,
    /// Set when the step budget ran out before the requested count.
    pub incomplete: bool,
}

impl RegenerationRecord {
    fn new(start: &Site, m: u32, horizon: u32, d: usize) -> Self {
        RegenerationRecord {
            m,
            horizon,
            times: vec![start.n],
            space_marks: vec![start.coords(d).to_vec()],
            increments: Vec::new(),
            incomplete: false,
        }
    }

    fn push(&mut self, t: i64, x: &[i64]) {
        let last_t = *self.times.last().expect("T_0 is always present");
        let last_x = self.space_marks.last().expect("T_0 is always present");
        let y = x.iter().zip(last_x).map(|(a, b)| a - b).collect();
        self.increments.push(Increment { y, tau: (t - last_t) as u64 });
        self.times.push(t);
        self.space_marks.push(x.to_vec());
    }
}

/// `R_{2m} = {x}` where `R_0 = {s}` and `R_{j+1}` collects the backbone
/// successors of `R_j`.
pub fn is_s2m(s: &Site, m: u32, env: &EnvironmentHandle) -> bool {
    if env.fully_open() {
        return false;
    }
    let mut layer: Vec<Site> = vec![*s];
    for _ in 0..2 * m {
        let mut next: Vec<Site> = layer.iter().flat_map(|z| env.neighbors(z)).filter(|z| env.in_backbone(z)).collect();
        next.sort_unstable();
        next.dedup();
        if next.is_empty() {
            return false;
        }
        layer = next;
    }
    layer.len() == 1 && layer[0].x == s.x
}

/// Incremental search for the regeneration times of one walk.
pub struct RegenerationSearch<'a> {
    env: &'a EnvironmentHandle,
    perms: PermutationField,
    m: i64,
    h: i64,
    start: Site,
    /// Walk positions from time `base` onward.
    walk: VecDeque<Site>,
    base: i64,
    confirmed: i64,
    next_candidate: i64,
    budget_end: i64,
}

impl<'a> RegenerationSearch<'a> {
    pub fn new(start: Site, m: u32, env: &'a EnvironmentHandle, perms: PermutationField, budget: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidConfig("m must be positive".into()));
        }
        if env.fully_open() {
            return Err(Error::InvalidConfig("regenerations never occur when every site is open".into()));
        }
        if !env.in_backbone(&start) {
            return Err(Error::NotInBackbone(start));
        }
        Ok(RegenerationSearch {
            env,
            perms,
            m: m as i64,
            h: env.horizon() as i64,
            start,
            walk: VecDeque::from([start]),
            base: start.n,
            confirmed: start.n,
            next_candidate: start.n,
            budget_end: start.n.saturating_add(budget.min(i64::MAX as u64) as i64),
        })
    }

    pub fn start(&self) -> Site {
        self.start
    }

    /// Position of the walk at absolute time `t`; `t` must not precede
    /// positions already discarded.
    pub fn walk_at(&mut self, t: i64) -> Result<Site> {
        debug_assert!(t >= self.base);
        while self.base + (self.walk.len() as i64) <= t {
            let last = *self.walk.back().expect("walk is never empty");
            self.walk.push_back(self.perms.walk_step(&last, self.env)?);
        }
        Ok(self.walk[(t - self.base) as usize])
    }

    fn discard_before(&mut self, t: i64) {
        while self.base < t && self.walk.len() > 1 {
            self.walk.pop_front();
            self.base += 1;
        }
    }

    /// Endpoint of the local path of length `j - start.n`.
    fn candidate(&mut self, j: i64) -> Result<Site> {
        let from = self.confirmed.max(j - self.h - 1);
        self.discard_before(from);
        let mut d = self.walk_at(from)?;
        for i in from + 1..=j {
            d = self.perms.choose(&d, j - i - 1, self.env);
        }
        self.env.maybe_trim(from);
        Ok(d)
    }

    /// Next regeneration site `(X_T, T)`, or `None` once the budget is spent.
    pub fn next_regeneration(&mut self) -> Result<Option<Site>> {
        loop {
            let j = self.next_candidate;
            if j > self.budget_end {
                return Ok(None);
            }
            let d = self.candidate(j)?;
            let l = self.env.path_length(&d) as i64;
            if l >= self.h {
                debug_assert_eq!(d, self.walk_at(j)?);
                self.confirmed = j;
                if is_s2m(&d, self.m as u32, self.env) {
                    let t = j + 2 * self.m;
                    self.next_candidate = t;
                    return Ok(Some(d.at_time(t)));
                }
                self.next_candidate = j + 1;
            } else {
                // The branch through d dies within l steps; no local path
                // ending before it does can end in the backbone.
                self.next_candidate = j + l.max(0) + 1;
            }
        }
    }
}

/// Collects up to `count` regenerations of the walk started at `start`.
pub fn find_regenerations<R: RngCore + ?Sized>(start: &Site, count: usize, m: u32, env: &EnvironmentHandle, rng: &mut R) -> Result<RegenerationRecord> {
    find_regenerations_with(start, count, m, env, PermutationField::from_rng(rng), DEFAULT_STEP_BUDGET)
}

pub fn find_regenerations_with(
    start: &Site,
    count: usize,
    m: u32,
    env: &EnvironmentHandle,
    perms: PermutationField,
    budget: u64,
) -> Result<RegenerationRecord> {
    let d = env.d();
    let mut search = RegenerationSearch::new(*start, m, env, perms, budget)?;
    let mut record = RegenerationRecord::new(start, m, env.horizon() as u32, d);
    while record.increments.len() < count {
        match search.next_regeneration()? {
            Some(site) => record.push(site.n, site.coords(d)),
            None => {
                record.incomplete = true;
                break;
            }
        }
    }
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    pub mu_hat: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_increments: usize,
}

fn increments<'r>(records: &'r [RegenerationRecord]) -> impl Iterator<Item = &'r Increment> + 'r {
    records.iter().flat_map(|r| r.increments.iter())
}

/// Ratio estimator `mean(Y) / mean(tau)` with batch-means standard errors of
/// the linearised residuals `Y - mu_hat * tau`.
pub fn estimate_drift(records: &[RegenerationRecord]) -> Result<DriftEstimate> {
    let incs: Vec<&Increment> = increments(records).collect();
    let n = incs.len();
    if n == 0 {
        return Err(Error::InsufficientData("no regeneration increments".into()));
    }
    let d = incs[0].y.len();
    let total_tau: f64 = incs.iter().map(|i| i.tau as f64).sum();
    let mu_hat: Vec<f64> = (0..d).map(|k| incs.iter().map(|i| i.y[k] as f64).sum::<f64>() / total_tau).collect();
    let batches = DRIFT_BATCHES.min(n);
    let stderr = (0..d)
        .map(|k| {
            if batches < 2 {
                return f64::INFINITY;
            }
            let sums: Vec<f64> = (0..batches)
                .map(|b| incs[b * n / batches..(b + 1) * n / batches].iter().map(|i| i.y[k] as f64 - mu_hat[k] * i.tau as f64).sum())
                .collect();
            let mean = sums.iter().sum::<f64>() / batches as f64;
            let var = sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
            (batches as f64 * var).sqrt() / total_tau
        })
        .collect();
    Ok(DriftEstimate { mu_hat, stderr, n_increments: n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub sigma: Vec<Vec<f64>>,
    pub lag_cutoff: usize,
    /// Empirical `Cov(Z_0, Z_k)` for `k = 0..=lag_cutoff`; not symmetrized.
    pub per_lag_terms: Vec<Vec<Vec<f64>>>,
}

/// `Sigma_ij = Cov(Z_0i, Z_0j) + 2 sum_{k <= lag_cutoff} Cov(Z_0i, Z_kj)`
/// with `Z = Y - mean(Y)`, symmetrized and clipped to be positive
/// semidefinite. Lags never straddle two records.
pub fn estimate_covariance(records: &[RegenerationRecord], lag_cutoff: usize) -> Result<CovarianceEstimate> {
    let n = increments(records).count();
    if n < lag_cutoff + 10 {
        return Err(Error::InsufficientData(format!("{n} increments, need at least {}", lag_cutoff + 10)));
    }
    let d = increments(records).next().expect("n > 0").y.len();
    let mut mean = vec![0.0; d];
    for inc in increments(records) {
        for (m, y) in mean.iter_mut().zip(&inc.y) {
            *m += *y as f64 / n as f64;
        }
    }
    let centred: Vec<Vec<Vec<f64>>> =
        records.iter().map(|r| r.increments.iter().map(|i| i.y.iter().zip(&mean).map(|(y, m)| *y as f64 - m).collect()).collect()).collect();
    let mut per_lag_terms = Vec::with_capacity(lag_cutoff + 1);
    for k in 0..=lag_cutoff {
        let mut c = vec![vec![0.0; d]; d];
        let mut pairs = 0usize;
        for z in &centred {
            for t in 0..z.len().saturating_sub(k) {
                pairs += 1;
                for i in 0..d {
                    for j in 0..d {
                        c[i][j] += z[t][i] * z[t + k][j];
                    }
                }
            }
        }
        if pairs > 0 {
            c.iter_mut().flatten().for_each(|v| *v /= pairs as f64);
        }
        per_lag_terms.push(c);
    }
    let raw = DMatrix::from_fn(d, d, |i, j| per_lag_terms[0][i][j] + 2.0 * per_lag_terms[1..].iter().map(|c| c[i][j]).sum::<f64>());
    let sym = (&raw + raw.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let psd = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let sigma = (0..d).map(|i| (0..d).map(|j| psd[(i, j)]).collect()).collect();
    Ok(CovarianceEstimate { sigma, lag_cutoff, per_lag_terms })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// `C` in `P(T > n) ~ C e^{-cn}`.
    pub prefactor: f64,
    /// `c`, the negated slope.
    pub rate: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub const MIN_TAIL_SAMPLES: usize = 100;

/// Least-squares line through `(n, log P(T > n))` for `n` from the smallest
/// sample upward while the empirical survival is at least `10 / samples`.
pub fn fit_tail(samples: &[u64]) -> Result<TailFit> {
    if samples.len() < MIN_TAIL_SAMPLES {
        return Err(Error::InsufficientData(format!("{} samples, need {MIN_TAIL_SAMPLES}", samples.len())));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if lo == hi {
        return Err(Error::Degenerate("constant samples have no tail".into()));
    }
    let total = sorted.len() as f64;
    let floor = 10.0 / total;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut above = sorted.len();
    let mut idx = 0;
    for n in lo..hi {
        while idx < sorted.len() && sorted[idx] <= n {
            idx += 1;
            above -= 1;
        }
        let surv = above as f64 / total;
        if surv < floor {
            break;
        }
        xs.push(n as f64);
        ys.push(surv.ln());
    }
    let LinearFit { slope, intercept, r_squared } = loglinear_fit(&xs, &ys)?;
    Ok(TailFit { prefactor: intercept.exp(), rate: -slope, slope, intercept, r_squared, points: xs.len() })
}
