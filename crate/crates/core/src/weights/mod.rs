//! Stationary, strictly positive weight fields `K` on the lattice.
//!
//! A field is a pure function of `(weight_seed, site)`, so it can be evaluated
//! anywhere in any order without materialising the lattice.

mod mixing;

pub use mixing::{estimate_mixing, EventFamily, MixingAxis, MixingEstimate, MixingMode, MixingOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::seeds::{hash2, hash_site, unit_f64, Stream};

/// Description of a weight field. Serialized with a `kind` tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightFieldSpec {
    /// `K == value`.
    Constant { value: f64 },
    /// I.i.d. uniform on `[a, b]`.
    Iid { a: f64, b: f64 },
    /// An independent stationary finite-state Markov chain in time at every
    /// space point. `initial`, when given, must be stationary for `transition`.
    TimeMarkov {
        states: Vec<f64>,
        transition: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial: Option<Vec<f64>>,
    },
    /// `K(x, n) = ((beta(n) + 3|x| + x) mod 3) + 1` with `beta(n)` i.i.d.
    /// uniform on `{0, 1, 2}`. One space dimension only.
    Berger,
    /// `a + (b - a) * mean(U)` where the `U` are i.i.d. uniforms on the
    /// space-time box of sup-radius `w` around the site.
    MDependent { w: u32, a: f64, b: f64 },
}

impl Default for WeightFieldSpec {
    fn default() -> Self {
        WeightFieldSpec::Constant { value: 1.0 }
    }
}

impl WeightFieldSpec {
    pub fn constant(value: f64) -> Self {
        WeightFieldSpec::Constant { value }
    }

    /// Two-state chain on `{low, high}` that stays put with probability `stay`.
    pub fn two_state_markov(low: f64, high: f64, stay: f64) -> Self {
        WeightFieldSpec::TimeMarkov {
            states: vec![low, high],
            transition: vec![vec![stay, 1.0 - stay], vec![1.0 - stay, stay]],
            initial: Some(vec![0.5, 0.5]),
        }
    }

    /// Lower bound on every weight the field can produce.
    pub fn floor(&self) -> f64 {
        match self {
            WeightFieldSpec::Constant { value } => *value,
            WeightFieldSpec::Iid { a, .. } | WeightFieldSpec::MDependent { a, .. } => *a,
            WeightFieldSpec::TimeMarkov { states, .. } => states.iter().cloned().fold(f64::INFINITY, f64::min),
            WeightFieldSpec::Berger => 1.0,
        }
    }

    /// Dependence range in sup-norm: sites further apart than this are independent.
    /// `None` for fields with unbounded (but decaying) dependence.
    pub fn dependence_range(&self) -> Option<u64> {
        match self {
            WeightFieldSpec::Constant { .. } | WeightFieldSpec::Iid { .. } => Some(0),
            WeightFieldSpec::MDependent { w, .. } => Some(2 * *w as u64),
            WeightFieldSpec::TimeMarkov { .. } | WeightFieldSpec::Berger => None,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match self {
            WeightFieldSpec::Constant { value } => {
                if !(value.is_finite() && *value > 0.0) {
                    return bad(format!("constant weight must be positive, got {value}"));
                }
            }
            WeightFieldSpec::Iid { a, b } | WeightFieldSpec::MDependent { a, b, .. } => {
                if !(a.is_finite() && b.is_finite() && *a > 0.0 && a <= b) {
                    return bad(format!("weights need 0 < a <= b, got a={a}, b={b}"));
                }
            }
            WeightFieldSpec::Berger => {
                if d != 1 {
                    return bad(format!("berger field is defined for d = 1 only, got d = {d}"));
                }
            }
            WeightFieldSpec::TimeMarkov { states, transition, initial } => {
                MarkovChain::new(states, transition, initial.as_deref())?;
            }
        }
        Ok(())
    }
}

/// Finite-state chain evaluated by inverse-CDF updates with a grand coupling.
/// The state at time `n` is recovered exactly by scanning back to the last
/// update whose uniform maps every state to the same target.
#[derive(Clone, Debug)]
struct MarkovChain {
    states: Vec<f64>,
    cdf: Vec<Vec<f64>>,
    /// Sub-intervals of `[0, 1)` on which the update is constant in the
    /// current state: `(lo, hi, target)`.
    coalescing: Vec<(f64, f64, usize)>,
}

const STATIONARITY_TOL: f64 = 1e-9;

impl MarkovChain {
    fn new(states: &[f64], transition: &[Vec<f64>], initial: Option<&[f64]>) -> Result<Self> {
        let k = states.len();
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if k == 0 {
            return bad("time_markov needs at least one state".into());
        }
        if states.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("time_markov states must be positive".into());
        }
        if transition.len() != k || transition.iter().any(|r| r.len() != k) {
            return bad(format!("time_markov transition must be {k}x{k}"));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return bad(format!("transition row {i} has a negative entry"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return bad(format!("transition row {i} sums to {s}, not 1"));
            }
        }
        if let Some(pi) = initial {
            if pi.len() != k {
                return bad(format!("initial law must have {k} entries"));
            }
            for j in 0..k {
                let next: f64 = (0..k).map(|i| pi[i] * transition[i][j]).sum();
                if (next - pi[j]).abs() > STATIONARITY_TOL {
                    return bad("initial law is not stationary for the transition matrix".into());
                }
            }
        }
        let cdf: Vec<Vec<f64>> = transition
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                let mut c: Vec<f64> = row.iter().map(|p| { acc += p; acc }).collect();
                *c.last_mut().unwrap() = 1.0;
                c
            })
            .collect();
        let mut cuts: Vec<f64> = cdf.iter().flatten().cloned().chain(std::iter::once(0.0)).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut coalescing = Vec::new();
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            let mid = 0.5 * (lo + hi);
            let first = Self::next_state(&cdf[0], mid);
            if cdf.iter().all(|row| Self::next_state(row, mid) == first) {
                coalescing.push((lo, hi, first));
            }
        }
        if coalescing.is_empty() {
            return bad("time_markov transition admits no coalescing update; rows must share mass on a common state band".into());
        }
        Ok(MarkovChain { states: states.to_vec(), cdf, coalescing })
    }

    #[inline]
    fn next_state(cdf_row: &[f64], u: f64) -> usize {
        cdf_row.iter().position(|&c| u < c).unwrap_or(cdf_row.len() - 1)
    }

    fn coalesced(&self, u: f64) -> Option<usize> {
        self.coalescing.iter().find(|(lo, hi, _)| u >= *lo && u < *hi).map(|c| c.2)
    }

    fn state_at(&self, seed: u64, site: &Site) -> f64 {
        let uniform = |t: i64| unit_f64(hash_site(seed, Stream::Weight, &site.at_time(t), 0));
        let mut t = site.n;
        let mut state = loop {
            if let Some(s) = self.coalesced(uniform(t)) {
                break s;
            }
            t -= 1;
        };
        while t < site.n {
            t += 1;
            state = Self::next_state(&self.cdf[state], uniform(t));
        }
        self.states[state]
    }
}

#[derive(Clone, Debug)]
enum Compiled {
    Constant(f64),
    Iid { a: f64, b: f64 },
    Markov(MarkovChain),
    Berger,
    MDependent { w: i64, a: f64, b: f64 },
}

/// A weight field bound to a seed.
#[derive(Clone, Debug)]
pub struct WeightField {
    seed: u64,
    d: usize,
    compiled: Compiled,
}

impl WeightField {
    pub fn new(spec: &WeightFieldSpec, seed: u64, d: usize) -> Result<Self> {
        spec.validate(d)?;
        let compiled = match spec {
            WeightFieldSpec::Constant { value } => Compiled::Constant(*value),
            WeightFieldSpec::Iid { a, b } => Compiled::Iid { a: *a, b: *b },
            WeightFieldSpec::TimeMarkov { states, transition, initial } => {
                Compiled::Markov(MarkovChain::new(states, transition, initial.as_deref())?)
            }
            WeightFieldSpec::Berger => Compiled::Berger,
            WeightFieldSpec::MDependent { w, a, b } => Compiled::MDependent { w: *w as i64, a: *a, b: *b },
        };
        Ok(WeightField { seed, d, compiled })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.compiled, Compiled::Constant(_))
    }

    /// `K(s)`.
    pub fn weight(&self, s: &Site) -> f64 {
        match &self.compiled {
            Compiled::Constant(v) => *v,
            Compiled::Iid { a, b } => a + (b - a) * unit_f64(hash_site(self.seed, Stream::Weight, s, 0)),
            Compiled::Markov(chain) => chain.state_at(self.seed, s),
            Compiled::Berger => berger_weight(s.x[0], self.berger_beta(s.n)) as f64,
            Compiled::MDependent { w, a, b } => a + (b - a) * self.window_mean(s, *w),
        }
    }

    /// The time-only randomness `beta(n)` of the Berger field.
    pub fn berger_beta(&self, n: i64) -> u8 {
        (unit_f64(hash2(self.seed, Stream::WeightTime, n as u64, 0)) * 3.0) as u8
    }

    fn window_mean(&self, s: &Site, w: i64) -> f64 {
        let side = (2 * w + 1) as usize;
        let dims = self.d + 1;
        let total = side.pow(dims as u32);
        let mut sum = 0.0;
        let mut probe = *s;
        for idx in 0..total {
            let mut rest = idx;
            for axis in 0..dims {
                let off = (rest % side) as i64 - w;
                rest /= side;
                if axis < self.d {
                    probe.x[axis] = s.x[axis] + off;
                } else {
                    probe.n = s.n + off;
                }
            }
            sum += unit_f64(hash_site(self.seed, Stream::Weight, &probe, 1));
        }
        sum / total as f64
    }
}

/// `((beta + 3|x| + x) mod 3) + 1`.
pub fn berger_weight(x: i64, beta: u8) -> u8 {
    ((beta as i64 + 3 * x.abs() + x).rem_euclid(3) + 1) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn berger_formula_hand_values() {
        assert_eq!(berger_weight(1, 1), 3);
        assert_eq!(berger_weight(-1, 1), 1);
        assert_eq!(berger_weight(-4, 2), 2);
        assert_eq!(berger_weight(1, 0), 2);
    }

    #[test]
    fn berger_reduces_mod_three() {
        for x in -50..50 {
            for beta in 0..3u8 {
                let reduced = ((beta as i64 + x).rem_euclid(3) + 1) as u8;
                assert_eq!(berger_weight(x, beta), reduced);
            }
        }
    }

    #[test]
    fn berger_beta_is_time_only() {
        let f = WeightField::new(&WeightFieldSpec::Berger, 3, 1).unwrap();
        for n in 0..100 {
            let beta = f.berger_beta(n);
            assert!(beta < 3);
            for x in -5..5 {
                assert_eq!(f.weight(&Site::new(&[x], n)), berger_weight(x, beta) as f64);
            }
        }
    }

    #[test]
    fn constant_field() {
        let f = WeightField::new(&WeightFieldSpec::constant(1.0), 0, 2).unwrap();
        assert_eq!(f.weight(&Site::new(&[4, -2], 17)), 1.0);
    }

    #[test]
    fn positivity_floor() {
        let specs = [
            WeightFieldSpec::Iid { a: 0.5, b: 2.0 },
            WeightFieldSpec::MDependent { w: 1, a: 0.25, b: 1.0 },
            WeightFieldSpec::two_state_markov(1.0, 3.0, 0.8),
        ];
        for spec in &specs {
            let f = WeightField::new(spec, 11, 2).unwrap();
            for i in 0..2000 {
                let s = Site::new(&[i % 37 - 18, i / 37], i % 11);
                let k = f.weight(&s);
                assert!(k >= spec.floor() && k > 0.0, "{spec:?} produced {k}");
            }
        }
    }

    #[test]
    fn markov_chain_is_consistent_with_its_transitions() {
        // Sticky chain: consecutive equal values should appear with frequency
        // close to the stay probability.
        let f = WeightField::new(&WeightFieldSpec::two_state_markov(1.0, 2.0, 0.9), 5, 1).unwrap();
        let mut same = 0usize;
        let n = 20_000;
        for t in 0..n {
            let a = f.weight(&Site::new(&[3], t));
            let b = f.weight(&Site::new(&[3], t + 1));
            same += (a == b) as usize;
        }
        let freq = same as f64 / n as f64;
        assert!((freq - 0.9).abs() < 4.0 * (0.09f64 / n as f64).sqrt() * 3.0, "freq {freq}");
    }

    #[test]
    fn markov_rejects_non_stationary_initial() {
        let spec = WeightFieldSpec::TimeMarkov {
            states: vec![1.0, 2.0],
            transition: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            initial: Some(vec![0.7, 0.3]),
        };
        assert!(spec.validate(1).is_err());
    }

    #[test]
    fn markov_rejects_bad_rows() {
        let spec = WeightFieldSpec::TimeMarkov {
            states: vec![1.0, 2.0],
            transition: vec![vec![0.9, 0.2], vec![0.1, 0.9]],
            initial: None,
        };
        assert!(spec.validate(1).is_err());
        let periodic = WeightFieldSpec::TimeMarkov {
            states: vec![1.0, 2.0],
            transition: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            initial: None,
        };
        assert!(periodic.validate(1).is_err());
    }

    #[test]
    fn rejects_nonpositive_weights() {
        assert!(WeightFieldSpec::constant(0.0).validate(1).is_err());
        assert!(WeightFieldSpec::Iid { a: 0.0, b: 1.0 }.validate(1).is_err());
        assert!(WeightFieldSpec::Iid { a: 2.0, b: 1.0 }.validate(1).is_err());
        assert!(WeightFieldSpec::Berger.validate(2).is_err());
    }

    #[test]
    fn spec_json_shape() {
        let spec: WeightFieldSpec = serde_json::from_str(r#"{"kind":"m_dependent","w":2,"a":1.0,"b":2.0}"#).unwrap();
        assert_eq!(spec, WeightFieldSpec::MDependent { w: 2, a: 1.0, b: 2.0 });
        let spec: WeightFieldSpec = serde_json::from_str(r#"{"kind":"berger"}"#).unwrap();
        assert_eq!(spec, WeightFieldSpec::Berger);
    }
}
