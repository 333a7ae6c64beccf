//! Two walks on one environment (joint) or on two independent ones, their
//! simultaneous regeneration times, the total-variation distance between the
//! two laws of the first block, and annulus escape probabilities.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{condition_on_sites, EnvironmentHandle};
use crate::error::{Error, Result};
use crate::lattice::{LatticeConfig, Point, Site};
use crate::regeneration::{RegenerationSearch, DEFAULT_STEP_BUDGET};
use crate::seeds::derive_seed;
use crate::walker::{PermutationField, PermutationWalker, WalkPath};
use crate::weights::WeightFieldSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    Joint,
    Independent,
}

/// The environment(s) a pair runs on.
#[derive(Clone, Copy, Debug)]
pub enum PairEnvironments<'a> {
    Joint(&'a EnvironmentHandle),
    Independent(&'a EnvironmentHandle, &'a EnvironmentHandle),
}

impl<'a> PairEnvironments<'a> {
    pub fn mode(&self) -> PairMode {
        match self {
            PairEnvironments::Joint(_) => PairMode::Joint,
            PairEnvironments::Independent(..) => PairMode::Independent,
        }
    }

    fn pair(&self) -> (&'a EnvironmentHandle, &'a EnvironmentHandle) {
        match *self {
            PairEnvironments::Joint(e) => (e, e),
            PairEnvironments::Independent(a, b) => (a, b),
        }
    }
}

/// Summary of the piece between two simultaneous regenerations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct XiSummary {
    pub tau: u64,
    pub y: Vec<i64>,
    pub y_prime: Vec<i64>,
    /// `X - X'` at the end of the piece.
    pub separation: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairWalkRecord {
    pub mode: PairMode,
    pub starts: (Site, Site),
    /// Paths up to the last simultaneous regeneration, when requested.
    pub paths: Option<(WalkPath, WalkPath)>,
    /// Individual regeneration times of each walk, `T_0` included.
    pub times: (Vec<i64>, Vec<i64>),
    /// `T^sim_1, T^sim_2, ...`.
    pub sim_times: Vec<i64>,
    pub xi_summaries: Vec<XiSummary>,
    pub incomplete: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOptions {
    /// Step budget of each walk's regeneration search.
    pub budget: u64,
    pub record_paths: bool,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions { budget: DEFAULT_STEP_BUDGET, record_paths: false }
    }
}

fn diff(a: &Point, b: &Point, d: usize) -> Vec<i64> {
    (0..d).map(|i| a[i] - b[i]).collect()
}

fn replay(start: Site, env: &EnvironmentHandle, perms: PermutationField, until: i64) -> Result<WalkPath> {
    let mut path = WalkPath::new(start);
    let mut walker = PermutationWalker::new(start, env, perms)?;
    while walker.current().n < until {
        let prev = walker.current();
        let next = walker.advance()?;
        path.push(std::array::from_fn(|i| next.x[i] - prev.x[i]));
    }
    Ok(path)
}

/// Runs both walks until `target` simultaneous regenerations, where
/// `T^sim_k` is the smallest time exceeding `T^sim_{k-1}` that is a
/// regeneration time of both walks.
pub fn run_pair(
    envs: PairEnvironments<'_>,
    starts: (Site, Site),
    perms: (PermutationField, PermutationField),
    target: usize,
    m: u32,
    options: PairOptions,
) -> Result<PairWalkRecord> {
    let (e1, e2) = envs.pair();
    if starts.0.n != starts.1.n {
        return Err(Error::InvalidConfig("both walks must start at the same time".into()));
    }
    let d = e1.d();
    let mut s1 = RegenerationSearch::new(starts.0, m, e1, perms.0, options.budget)?;
    let mut s2 = RegenerationSearch::new(starts.1, m, e2, perms.1, options.budget)?;
    let mut record = PairWalkRecord {
        mode: envs.mode(),
        starts,
        paths: None,
        times: (vec![starts.0.n], vec![starts.1.n]),
        sim_times: Vec::new(),
        xi_summaries: Vec::new(),
        incomplete: false,
    };
    let (mut last, mut last_t) = (starts.0, starts.0.n);
    let mut last_prime = starts.1;
    let mut a = s1.next_regeneration()?;
    let mut b = s2.next_regeneration()?;
    while record.sim_times.len() < target {
        let (Some(ra), Some(rb)) = (a, b) else {
            record.incomplete = true;
            break;
        };
        if ra.n == rb.n {
            record.times.0.push(ra.n);
            record.times.1.push(rb.n);
            record.sim_times.push(ra.n);
            record.xi_summaries.push(XiSummary {
                tau: (ra.n - last_t) as u64,
                y: diff(&ra.x, &last.x, d),
                y_prime: diff(&rb.x, &last_prime.x, d),
                separation: diff(&ra.x, &rb.x, d),
            });
            (last, last_prime, last_t) = (ra, rb, ra.n);
            a = s1.next_regeneration()?;
            b = s2.next_regeneration()?;
        } else if ra.n < rb.n {
            record.times.0.push(ra.n);
            a = s1.next_regeneration()?;
        } else {
            record.times.1.push(rb.n);
            b = s2.next_regeneration()?;
        }
    }
    if options.record_paths {
        let until = *record.sim_times.last().unwrap_or(&starts.0.n);
        record.paths = Some((replay(starts.0, e1, perms.0, until)?, replay(starts.1, e2, perms.1, until)?));
    }
    Ok(record)
}

/// Finite summary of the first block of a pair, used as a histogram key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SummarySpec {
    /// `Xi_1` up to `T^sim_1`: `(min(tau, tau_clip), Y / bin, Y' / bin)`.
    Simultaneous { tau_clip: u64, bin: i64 },
    /// Displacements of both walks over a fixed number of steps, binned.
    FixedBlock { length: u64, bin: i64 },
}

impl Default for SummarySpec {
    fn default() -> Self {
        SummarySpec::Simultaneous { tau_clip: 64, bin: 1 }
    }
}

impl SummarySpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SummarySpec::Simultaneous { tau_clip, bin } => tau_clip > 0 && bin > 0,
            SummarySpec::FixedBlock { length, bin } => length > 0 && bin > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("summary parameters must be positive".into()))
        }
    }
}

type SummaryKey = Vec<i64>;

fn bin_all(v: &[i64], bin: i64) -> impl Iterator<Item = i64> + '_ {
    v.iter().map(move |y| y.div_euclid(bin))
}

/// Summary key of the first block, or `None` if the budget ran out first.
pub fn first_block_summary(
    envs: PairEnvironments<'_>,
    starts: (Site, Site),
    perms: (PermutationField, PermutationField),
    m: u32,
    summary: &SummarySpec,
    budget: u64,
) -> Result<Option<SummaryKey>> {
    match *summary {
        SummarySpec::Simultaneous { tau_clip, bin } => {
            let rec = run_pair(envs, starts, perms, 1, m, PairOptions { budget, record_paths: false })?;
            Ok(rec.xi_summaries.first().map(|xi| {
                std::iter::once(xi.tau.min(tau_clip) as i64).chain(bin_all(&xi.y, bin)).chain(bin_all(&xi.y_prime, bin)).collect()
            }))
        }
        SummarySpec::FixedBlock { length, bin } => {
            let (e1, e2) = envs.pair();
            let d = e1.d();
            let mut w1 = PermutationWalker::new(starts.0, e1, perms.0)?;
            let mut w2 = PermutationWalker::new(starts.1, e2, perms.1)?;
            for _ in 0..length {
                w1.advance()?;
                w2.advance()?;
            }
            let y = diff(&w1.current().x, &starts.0.x, d);
            let y_prime = diff(&w2.current().x, &starts.1.x, d);
            Ok(Some(bin_all(&y, bin).chain(bin_all(&y_prime, bin)).collect()))
        }
    }
}

/// Plug-in total variation distance between the empirical laws of `a` and `b`.
pub fn plug_in_tv<K: Ord>(a: &[K], b: &[K]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 0.0 } else { 1.0 };
    }
    let mut counts: BTreeMap<&K, (f64, f64)> = BTreeMap::new();
    for k in a {
        counts.entry(k).or_default().0 += 1.0;
    }
    for k in b {
        counts.entry(k).or_default().1 += 1.0;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    (0.5 * counts.values().map(|(x, y)| (x / na - y / nb).abs()).sum::<f64>()).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvEstimate {
    pub separation: Vec<i64>,
    pub tv: f64,
    /// Basic bootstrap interval.
    pub ci: (f64, f64),
    pub joint_samples: usize,
    pub independent_samples: usize,
    /// Samples dropped because the budget ran out before the block ended.
    pub incomplete: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvConfig {
    pub lattice: LatticeConfig,
    pub weight_spec: WeightFieldSpec,
    pub m: u32,
    pub summary: SummarySpec,
    pub budget: u64,
    pub rejection_cap: u64,
    pub bootstrap_resamples: usize,
    pub confidence: f64,
}

impl TvConfig {
    pub fn new(lattice: LatticeConfig, weight_spec: WeightFieldSpec) -> Self {
        TvConfig {
            lattice,
            weight_spec,
            m: 1,
            summary: SummarySpec::default(),
            budget: DEFAULT_STEP_BUDGET,
            rejection_cap: 100_000,
            bootstrap_resamples: 200,
            confidence: 0.95,
        }
    }
}

pub const MIN_TV_SAMPLES: usize = 1000;

fn bootstrap_tv(a: &[SummaryKey], b: &[SummaryKey], resamples: usize, confidence: f64, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let ra: Vec<&SummaryKey> = (0..a.len()).map(|_| &a[rng.random_range(0..a.len())]).collect();
            let rb: Vec<&SummaryKey> = (0..b.len()).map(|_| &b[rng.random_range(0..b.len())]).collect();
            plug_in_tv(&ra, &rb)
        })
        .collect();
    if stats.is_empty() {
        return (0.0, 1.0);
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    let at = |q: f64| stats[((q * stats.len() as f64) as usize).min(stats.len() - 1)];
    // Basic bootstrap: reflect the quantiles about the estimate, which also
    // removes the upward bias of the plug-in statistic to first order.
    let tv = plug_in_tv(a, b);
    ((2.0 * tv - at(1.0 - tail)).clamp(0.0, 1.0), (2.0 * tv - at(tail)).clamp(0.0, 1.0))
}

/// Draws `n_samples` first-block summaries under the joint law (one
/// environment, both starts in its backbone) and under the independent law
/// (one environment per walk) and compares their empirical laws.
pub fn estimate_tv(x: &Site, x_prime: &Site, n_samples: usize, cfg: &TvConfig, seed: u64) -> Result<TvEstimate> {
    if n_samples < MIN_TV_SAMPLES {
        return Err(Error::InsufficientData(format!("{n_samples} samples, need {MIN_TV_SAMPLES}")));
    }
    cfg.summary.validate()?;
    let sample = |mode: PairMode, i: u64| -> Result<Option<SummaryKey>> {
        let label = match mode {
            PairMode::Joint => "tv-joint",
            PairMode::Independent => "tv-independent",
        };
        let perms = (PermutationField::new(derive_seed(seed, label, 2 * i)), PermutationField::new(derive_seed(seed, label, 2 * i + 1)));
        match mode {
            PairMode::Joint => {
                let env = condition_on_sites(derive_seed(seed, "tv-joint-env", i), cfg.lattice, &cfg.weight_spec, cfg.rejection_cap, &[*x, *x_prime])?.env;
                first_block_summary(PairEnvironments::Joint(&env), (*x, *x_prime), perms, cfg.m, &cfg.summary, cfg.budget)
            }
            PairMode::Independent => {
                let a = condition_on_sites(derive_seed(seed, "tv-independent-a", i), cfg.lattice, &cfg.weight_spec, cfg.rejection_cap, &[*x])?.env;
                let b = condition_on_sites(derive_seed(seed, "tv-independent-b", i), cfg.lattice, &cfg.weight_spec, cfg.rejection_cap, &[*x_prime])?.env;
                first_block_summary(PairEnvironments::Independent(&a, &b), (*x, *x_prime), perms, cfg.m, &cfg.summary, cfg.budget)
            }
        }
    };
    let collect = |mode: PairMode| -> Result<Vec<Option<SummaryKey>>> { (0..n_samples as u64).into_par_iter().map(|i| sample(mode, i)).collect() };
    let joint = collect(PairMode::Joint)?;
    let independent = collect(PairMode::Independent)?;
    let incomplete = joint.iter().chain(&independent).filter(|k| k.is_none()).count();
    let joint: Vec<SummaryKey> = joint.into_iter().flatten().collect();
    let independent: Vec<SummaryKey> = independent.into_iter().flatten().collect();
    let tv = plug_in_tv(&joint, &independent);
    let ci = bootstrap_tv(&joint, &independent, cfg.bootstrap_resamples, cfg.confidence, derive_seed(seed, "tv-bootstrap", 0));
    Ok(TvEstimate {
        separation: diff(&x_prime.x, &x.x, cfg.lattice.d),
        tv,
        ci,
        joint_samples: joint.len(),
        independent_samples: independent.len(),
        incomplete,
    })
}

/// Probability that Brownian motion started on the sphere of radius `r`
/// leaves the annulus `r1 < |z| < r2` through the outer sphere:
/// `log(r/r1) / log(r2/r1)` for `d = 2` and
/// `(r1^{2-d} - r^{2-d}) / (r1^{2-d} - r2^{2-d})` for `d >= 3`.
pub fn f_d_reference(r: f64, r1: f64, r2: f64, d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::OutOfRange(format!("f_d needs d >= 2, got {d}")));
    }
    if !(r1 > 0.0 && r1 < r2 && r1 <= r && r <= r2) {
        return Err(Error::OutOfRange(format!("need 0 < r1 <= r <= r2 and r1 < r2, got r1={r1}, r={r}, r2={r2}")));
    }
    if d == 2 {
        return Ok((r.ln() - r1.ln()) / (r2.ln() - r1.ln()));
    }
    let e = 2.0 - d as f64;
    Ok((r1.powf(e) - r.powf(e)) / (r1.powf(e) - r2.powf(e)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusSpec {
    pub r1: f64,
    pub r2: f64,
    /// Whitening map with `Sigma^{-1} = U^T U`, row-major.
    pub u: Vec<Vec<f64>>,
    /// Smallest admissible inner radius.
    pub min_radius: f64,
}

pub const DEFAULT_MIN_RADIUS: f64 = 2.0;

impl AnnulusSpec {
    pub fn identity(d: usize, r1: f64, r2: f64) -> Self {
        AnnulusSpec { r1, r2, u: (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(), min_radius: DEFAULT_MIN_RADIUS }
    }

    /// `U` from a covariance matrix: the transposed Cholesky factor of its
    /// inverse.
    pub fn from_covariance(sigma: &[Vec<f64>], r1: f64, r2: f64) -> Result<Self> {
        let d = sigma.len();
        let m = DMatrix::from_fn(d, d, |i, j| sigma[i][j]);
        let inv = m.try_inverse().ok_or_else(|| Error::Degenerate("covariance is singular".into()))?;
        let sym = (&inv + inv.transpose()) * 0.5;
        let chol = sym.cholesky().ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))?;
        let u = chol.l().transpose();
        Ok(AnnulusSpec { r1, r2, u: (0..d).map(|i| (0..d).map(|j| u[(i, j)]).collect()).collect(), min_radius: DEFAULT_MIN_RADIUS })
    }

    pub fn d(&self) -> usize {
        self.u.len()
    }

    fn matrix(&self) -> DMatrix<f64> {
        let d = self.d();
        DMatrix::from_fn(d, d, |i, j| self.u[i][j])
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        if d == 0 || self.u.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidConfig("U must be square".into()));
        }
        if !(self.r1 > 0.0 && self.r1 < self.r2) {
            return Err(Error::InvalidConfig(format!("need 0 < r1 < r2, got {} and {}", self.r1, self.r2)));
        }
        if self.r1 < self.min_radius {
            return Err(Error::OutOfRange(format!("r1 = {} is below the minimum radius {}", self.r1, self.min_radius)));
        }
        if self.matrix().determinant().abs() < 1e-12 {
            return Err(Error::Degenerate("U is singular".into()));
        }
        Ok(())
    }

    /// `||U z||_inf`.
    pub fn whitened_norm(&self, z: &[i64]) -> f64 {
        self.u.iter().map(|row| row.iter().zip(z).map(|(a, b)| a * *b as f64).sum::<f64>().abs()).fold(0.0, f64::max)
    }

    /// The lattice point along `e_1` whose whitened norm is closest to `r`.
    pub fn realize(&self, r: f64) -> Vec<i64> {
        let d = self.d();
        let mut e1 = vec![0; d];
        e1[0] = 1;
        let unit = self.whitened_norm(&e1);
        let k = (r / unit).round() as i64;
        let mut z = vec![0; d];
        z[0] = k;
        z
    }
}

/// Times at which the whitened separation is inspected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skeleton {
    /// The simultaneous regeneration times `T^sim_k`.
    #[default]
    Simultaneous,
    /// Every time step.
    EveryStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusConfig {
    pub lattice: LatticeConfig,
    pub weight_spec: WeightFieldSpec,
    pub m: u32,
    pub skeleton: Skeleton,
    /// Time steps per pair before it is given up as unresolved.
    pub budget: u64,
    pub rejection_cap: u64,
}

impl AnnulusConfig {
    pub fn new(lattice: LatticeConfig, weight_spec: WeightFieldSpec) -> Self {
        AnnulusConfig { lattice, weight_spec, m: 1, skeleton: Skeleton::default(), budget: DEFAULT_STEP_BUDGET, rejection_cap: 100_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusResult {
    /// Requested and realized whitened start separation.
    pub r: f64,
    pub r_realized: f64,
    pub p_hat: f64,
    /// 95% Wilson interval.
    pub ci: (f64, f64),
    pub f_d_value: f64,
    pub outward: usize,
    pub inward: usize,
    pub unresolved: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Exit {
    Outward,
    Inward,
    Unresolved,
}

fn wilson(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn classify(spec: &AnnulusSpec, sep: &[i64]) -> Option<Exit> {
    let r = spec.whitened_norm(sep);
    if r <= spec.r1 {
        Some(Exit::Inward)
    } else if r >= spec.r2 {
        Some(Exit::Outward)
    } else {
        None
    }
}

fn annulus_pair(spec: &AnnulusSpec, offset: &[i64], cfg: &AnnulusConfig, seed: u64, i: u64) -> Result<Exit> {
    let d = spec.d();
    let x = Site::origin();
    let x_prime = Site::new(offset, 0);
    if let Some(exit) = classify(spec, offset) {
        return Ok(exit);
    }
    let a = condition_on_sites(derive_seed(seed, "annulus-a", i), cfg.lattice, &cfg.weight_spec, cfg.rejection_cap, &[x])?.env;
    let b = condition_on_sites(derive_seed(seed, "annulus-b", i), cfg.lattice, &cfg.weight_spec, cfg.rejection_cap, &[x_prime])?.env;
    let perms = (PermutationField::new(derive_seed(seed, "annulus-perm", 2 * i)), PermutationField::new(derive_seed(seed, "annulus-perm", 2 * i + 1)));
    match cfg.skeleton {
        Skeleton::EveryStep => {
            let mut w1 = PermutationWalker::new(x, &a, perms.0)?;
            let mut w2 = PermutationWalker::new(x_prime, &b, perms.1)?;
            for _ in 0..cfg.budget {
                let sep = diff(&w1.advance()?.x, &w2.advance()?.x, d);
                if let Some(exit) = classify(spec, &sep) {
                    return Ok(exit);
                }
            }
            Ok(Exit::Unresolved)
        }
        Skeleton::Simultaneous => {
            let mut s1 = RegenerationSearch::new(x, cfg.m, &a, perms.0, cfg.budget)?;
            let mut s2 = RegenerationSearch::new(x_prime, cfg.m, &b, perms.1, cfg.budget)?;
            let (mut ra, mut rb) = (s1.next_regeneration()?, s2.next_regeneration()?);
            while let (Some(p), Some(q)) = (ra, rb) {
                if p.n == q.n {
                    if let Some(exit) = classify(spec, &diff(&p.x, &q.x, d)) {
                        return Ok(exit);
                    }
                    ra = s1.next_regeneration()?;
                    rb = s2.next_regeneration()?;
                } else if p.n < q.n {
                    ra = s1.next_regeneration()?;
                } else {
                    rb = s2.next_regeneration()?;
                }
            }
            Ok(Exit::Unresolved)
        }
    }
}

/// Runs `n_samples` independent pairs from separation `r` (whitened) and
/// counts those whose whitened separation reaches `r2` before `r1`.
pub fn annulus_experiment(spec: &AnnulusSpec, r: f64, n_samples: usize, cfg: &AnnulusConfig, seed: u64) -> Result<AnnulusResult> {
    spec.validate()?;
    if spec.d() != cfg.lattice.d {
        return Err(Error::InvalidConfig(format!("U is {0}x{0} but d = {1}", spec.d(), cfg.lattice.d)));
    }
    let f_d_value = f_d_reference(r, spec.r1, spec.r2, cfg.lattice.d)?;
    let offset = spec.realize(r);
    let exits = (0..n_samples as u64).into_par_iter().map(|i| annulus_pair(spec, &offset, cfg, seed, i)).collect::<Result<Vec<_>>>()?;
    let outward = exits.iter().filter(|e| **e == Exit::Outward).count();
    let inward = exits.iter().filter(|e| **e == Exit::Inward).count();
    let resolved = outward + inward;
    Ok(AnnulusResult {
        r,
        r_realized: spec.whitened_norm(&offset),
        p_hat: if resolved == 0 { f64::NAN } else { outward as f64 / resolved as f64 },
        ci: wilson(outward, resolved, 1.959964),
        f_d_value,
        outward,
        inward,
        unresolved: n_samples - resolved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::condition_on_origin;
    use crate::regeneration::find_regenerations_with;

    #[test]
    fn tv_of_hand_histograms() {
        assert_eq!(plug_in_tv(&["a", "b", "a"], &["b", "a", "a"]), 0.0);
        assert_eq!(plug_in_tv(&[1, 2], &[3, 4]), 1.0);
        let tv = plug_in_tv(&["a", "b"], &["a", "b", "b", "b"]);
        assert!((tv - 0.25).abs() < 1e-15);
    }

    #[test]
    fn f_d_values() {
        for d in 2..5 {
            assert_eq!(f_d_reference(10.0, 10.0, 40.0, d).unwrap(), 0.0);
            assert!((f_d_reference(40.0, 10.0, 40.0, d).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!((f_d_reference(20.0, 10.0, 40.0, 2).unwrap() - 0.5).abs() < 1e-15);
        let third = (1.0 / 10.0 - 1.0 / 20.0) / (1.0 / 10.0 - 1.0 / 40.0);
        assert!((f_d_reference(20.0, 10.0, 40.0, 3).unwrap() - third).abs() < 1e-15);
        assert!(f_d_reference(5.0, 10.0, 40.0, 2).is_err());
        assert!(f_d_reference(20.0, 10.0, 40.0, 1).is_err());
    }

    #[test]
    fn whitening_from_covariance() {
        let spec = AnnulusSpec::from_covariance(&[vec![4.0, 1.0], vec![1.0, 2.0]], 10.0, 40.0).unwrap();
        let u = spec.matrix();
        let sigma = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let prod = u.transpose() * &u * sigma;
        assert!((prod - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!(AnnulusSpec::from_covariance(&[vec![1.0, 1.0], vec![1.0, 1.0]], 10.0, 40.0).is_err());
    }

    #[test]
    fn small_inner_radius_is_rejected() {
        let spec = AnnulusSpec::identity(2, 1.0, 40.0);
        let cfg = AnnulusConfig::new(LatticeConfig::new(2, 0.8), WeightFieldSpec::constant(1.0));
        assert!(matches!(annulus_experiment(&spec, 20.0, 10, &cfg, 0), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn boundary_starts_exit_immediately() {
        let spec = AnnulusSpec::identity(2, 10.0, 40.0);
        let cfg = AnnulusConfig::new(LatticeConfig::new(2, 0.8), WeightFieldSpec::constant(1.0));
        let inner = annulus_experiment(&spec, 10.0, 20, &cfg, 0).unwrap();
        assert_eq!((inner.p_hat, inner.inward), (0.0, 20));
        let outer = annulus_experiment(&spec, 40.0, 20, &cfg, 0).unwrap();
        assert_eq!((outer.p_hat, outer.outward), (1.0, 20));
    }

    #[test]
    fn simultaneous_times_are_common_regenerations() {
        let lattice = LatticeConfig::new(1, 0.8);
        let starts = (Site::origin(), Site::new(&[6], 0));
        let env = condition_on_sites(4, lattice, &WeightFieldSpec::constant(1.0), 10_000, &[starts.0, starts.1]).unwrap().env;
        let perms = (PermutationField::new(1), PermutationField::new(2));
        let rec = run_pair(PairEnvironments::Joint(&env), starts, perms, 5, 1, PairOptions { budget: 1_000_000, record_paths: true }).unwrap();
        assert!(!rec.incomplete);
        assert_eq!(rec.sim_times.len(), 5);
        let last = *rec.sim_times.last().unwrap();
        let single_a = find_regenerations_with(&starts.0, usize::MAX, 1, &env, perms.0, last as u64).unwrap();
        let single_b = find_regenerations_with(&starts.1, usize::MAX, 1, &env, perms.1, last as u64).unwrap();
        for t in &rec.sim_times {
            assert!(single_a.times.contains(t) && single_b.times.contains(t));
        }
        for w in single_a.times.iter().filter(|t| **t <= last) {
            assert!(rec.times.0.contains(w));
        }
        let (pa, pb) = rec.paths.as_ref().unwrap();
        assert_eq!(pa.steps() as i64, last);
        for s in pa.sites().chain(pb.sites()) {
            assert!(env.xi_value(&s) > 0.0);
        }
        for xi in &rec.xi_summaries {
            assert!(xi.tau >= 2);
        }
    }

    #[test]
    fn independent_pairs_use_two_environments() {
        let lattice = LatticeConfig::new(1, 0.8);
        let a = condition_on_origin(1, lattice, &WeightFieldSpec::constant(1.0), 10_000).unwrap().env;
        let b = condition_on_origin(2, lattice, &WeightFieldSpec::constant(1.0), 10_000).unwrap().env;
        let rec = run_pair(
            PairEnvironments::Independent(&a, &b),
            (Site::origin(), Site::origin()),
            (PermutationField::new(3), PermutationField::new(4)),
            3,
            1,
            PairOptions::default(),
        )
        .unwrap();
        assert_eq!(rec.mode, PairMode::Independent);
        assert_eq!(rec.sim_times.len(), 3);
        assert!(rec.sim_times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tv_needs_enough_samples() {
        let cfg = TvConfig::new(LatticeConfig::new(1, 0.8), WeightFieldSpec::constant(1.0));
        assert!(estimate_tv(&Site::origin(), &Site::origin(), 10, &cfg, 0).is_err());
    }
}
