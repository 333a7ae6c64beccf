//! Empirical alpha- and phi-mixing coefficients of a weight field.
//!
//! The supremum in the mixing coefficients runs over the whole sigma-algebra
//! of the field; here it is restricted to a finite family of threshold
//! events on one- and two-site blocks. The estimates are therefore lower
//! bounds for the true coefficients.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{WeightField, WeightFieldSpec};
use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::seeds::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingMode {
    Alpha,
    Phi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingAxis {
    Time,
    Space,
    Spacetime,
}

/// Cylinder events used in the restricted supremum. Thresholds are at the
/// empirical median of the single-site marginal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventFamily {
    /// `{K(s) <= med}` on single sites only.
    SingleSite,
    /// Single-site events plus `{K(s) <= med, K(s') <= med}` on adjacent pairs.
    #[default]
    SingleAndPair,
}

impl EventFamily {
    fn describe(self) -> &'static str {
        match self {
            EventFamily::SingleSite => "threshold {K<=median} on single sites",
            EventFamily::SingleAndPair => "threshold {K<=median} on single sites and adjacent 2-site blocks",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixingOptions {
    /// phi terms only use events with estimated probability at least this.
    pub phi_min_prob: f64,
    /// Coverage of the simultaneous bootstrap band.
    pub confidence: f64,
    pub bootstrap_resamples: usize,
}

impl Default for MixingOptions {
    fn default() -> Self {
        MixingOptions { phi_min_prob: 0.05, confidence: 0.999, bootstrap_resamples: 5000 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixingEstimate {
    pub gaps: Vec<u64>,
    pub coefficients: Vec<f64>,
    /// Half-width of the bootstrap band, one per gap.
    pub ci_halfwidth: Vec<f64>,
    pub mode: MixingMode,
    pub axis: MixingAxis,
    pub event_family: String,
    pub samples: usize,
}

/// Four indicator bits per sample: A single, A pair, B single, B pair.
const A1: u8 = 1;
const A2: u8 = 2;
const B1: u8 = 4;
const B2: u8 = 8;

/// Estimates the mixing coefficients of `spec` at each gap `n`: the maximum
/// over event pairs whose supports are more than `n` apart along `axis`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_mixing<R: RngCore>(
    spec: &WeightFieldSpec,
    d: usize,
    mode: MixingMode,
    axis: MixingAxis,
    gaps: &[u64],
    family: EventFamily,
    samples: usize,
    rng: &mut R,
    opts: &MixingOptions,
) -> Result<MixingEstimate> {
    spec.validate(d)?;
    if !(opts.confidence > 0.0 && opts.confidence < 1.0) {
        return Err(Error::InvalidConfig(format!("confidence must be in (0,1), got {}", opts.confidence)));
    }
    let needed = (5.0 / (1.0 - opts.confidence)).ceil() as usize;
    if samples < needed.max(100) {
        return Err(Error::InsufficientData(format!(
            "{samples} samples cannot support confidence {}; need at least {}",
            opts.confidence,
            needed.max(100)
        )));
    }
    if opts.bootstrap_resamples < needed {
        return Err(Error::InsufficientData(format!(
            "{} bootstrap resamples cannot resolve confidence {}",
            opts.bootstrap_resamples, opts.confidence
        )));
    }
    let base = rng.next_u64();
    let mut coefficients = Vec::with_capacity(gaps.len());
    let mut halfwidths = Vec::with_capacity(gaps.len());
    for &gap in gaps {
        let shift = gap as i64 + 1;
        let blocks = Blocks::new(axis, shift);
        let values: Vec<[f64; 4]> = (0..samples)
            .into_par_iter()
            .map(|i| {
                let field = WeightField::new(spec, derive_seed(base, "mixing-field", i as u64), d)
                    .expect("validated spec");
                blocks.sites.map(|s| field.weight(&s))
            })
            .collect();
        let median = threshold(values.iter().map(|v| v[0]).collect());
        let mut counts = [0u64; 16];
        for v in &values {
            let le = v.map(|k| k <= median);
            let mut bits = 0u8;
            if le[0] {
                bits |= A1;
            }
            if le[0] && le[1] {
                bits |= A2;
            }
            if le[2] {
                bits |= B1;
            }
            if le[2] && le[3] {
                bits |= B2;
            }
            counts[bits as usize] += 1;
        }
        let point = pair_terms(&counts, mode, family, opts.phi_min_prob);
        let coefficient = point.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));

        let mut boot_rng = ChaCha8Rng::seed_from_u64(derive_seed(base, "mixing-bootstrap", gap));
        let mut deviations: Vec<f64> = (0..opts.bootstrap_resamples)
            .map(|_| {
                let resampled = multinomial(&counts, &mut boot_rng);
                let terms = pair_terms(&resampled, mode, family, opts.phi_min_prob);
                terms
                    .iter()
                    .zip(&point)
                    .filter_map(|(b, p)| Some((b.as_ref()? - p.as_ref()?).abs()))
                    .fold(0.0f64, f64::max)
            })
            .collect();
        deviations.sort_by(f64::total_cmp);
        let idx = ((opts.confidence * deviations.len() as f64).ceil() as usize).min(deviations.len()) - 1;
        coefficients.push(coefficient.clamp(0.0, 1.0));
        halfwidths.push(deviations[idx]);
    }
    Ok(MixingEstimate {
        gaps: gaps.to_vec(),
        coefficients,
        ci_halfwidth: halfwidths,
        mode,
        axis,
        event_family: family.describe().to_string(),
        samples,
    })
}

/// The value `t` of the sample for which the empirical `P(K <= t)` is closest
/// to 1/2 while staying below 1, so discrete marginals still give
/// non-trivial events.
fn threshold(mut marginal: Vec<f64>) -> f64 {
    marginal.sort_by(f64::total_cmp);
    let n = marginal.len();
    let mut best = (f64::INFINITY, marginal[n / 2]);
    let mut i = 0;
    while i < n {
        let v = marginal[i];
        let mut j = i;
        while j < n && marginal[j] == v {
            j += 1;
        }
        if j < n {
            let gap = (j as f64 / n as f64 - 0.5).abs();
            if gap < best.0 {
                best = (gap, v);
            }
        }
        i = j;
    }
    best.1
}

struct Blocks {
    /// A-single, A-partner, B-single, B-partner.
    sites: [Site; 4],
}

impl Blocks {
    fn new(axis: MixingAxis, shift: i64) -> Self {
        let origin = Site::origin();
        let e1 = Site::new(&[1], 0);
        let (partner, b_base) = match axis {
            MixingAxis::Time => (e1, Site::new(&[0], shift)),
            MixingAxis::Space => (Site::new(&[0], 1), Site::new(&[shift], 0)),
            MixingAxis::Spacetime => (e1, Site::new(&[shift], shift)),
        };
        let add = |a: Site, b: Site| {
            let mut x = a.x;
            for (u, v) in x.iter_mut().zip(b.x) {
                *u += v;
            }
            Site { x, n: a.n + b.n }
        };
        Blocks { sites: [origin, partner, b_base, add(b_base, partner)] }
    }
}

/// Signed dependence terms for every admissible (A, B) pair; `None` for
/// pairs excluded by the phi probability floor or by the event family.
fn pair_terms(counts: &[u64; 16], mode: MixingMode, family: EventFamily, phi_min: f64) -> Vec<Option<f64>> {
    let total: u64 = counts.iter().sum();
    let n = total as f64;
    let prob = |mask: u8| counts.iter().enumerate().filter(|(b, _)| (*b as u8) & mask == mask).map(|(_, c)| *c).sum::<u64>() as f64 / n;
    let a_events: &[u8] = match family {
        EventFamily::SingleSite => &[A1],
        EventFamily::SingleAndPair => &[A1, A2],
    };
    let b_events: &[u8] = match family {
        EventFamily::SingleSite => &[B1],
        EventFamily::SingleAndPair => &[B1, B2],
    };
    let mut out = Vec::with_capacity(4);
    for &a in a_events {
        for &b in b_events {
            let pa = prob(a);
            let pb = prob(b);
            let pab = prob(a | b);
            out.push(match mode {
                MixingMode::Alpha => Some(pab - pa * pb),
                MixingMode::Phi => (pa >= phi_min).then(|| pab / pa - pb),
            });
        }
    }
    out
}

fn multinomial<R: Rng>(counts: &[u64; 16], rng: &mut R) -> [u64; 16] {
    let total: u64 = counts.iter().sum();
    let last = counts.iter().rposition(|&c| c > 0).unwrap_or(15);
    let mut remaining_n = total;
    let mut remaining_p = 1.0f64;
    let mut out = [0u64; 16];
    for (i, &c) in counts.iter().enumerate() {
        if remaining_n == 0 {
            break;
        }
        let p = c as f64 / total as f64;
        if i == last || remaining_p <= 0.0 {
            out[i] = remaining_n;
            break;
        }
        let q = (p / remaining_p).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining_n, q).expect("valid binomial").sample(rng);
        out[i] = draw;
        remaining_n -= draw;
        remaining_p -= p;
    }
    out
}
