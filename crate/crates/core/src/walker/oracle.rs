//! Exact law of `X_n` on a hand-built window, by dynamic programming over
//! the transition kernel in rational arithmetic.
//!
//! Backbone membership is decided here by its own backward recursion (an
//! open path to the all-open top layer), not through the horizon oracle of
//! the environment module, so the two can be checked against each other.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use crate::environment::Window;
use crate::error::{Error, Result};
use crate::lattice::{LatticeConfig, Site};

/// Upper limit on (distinct sites per layer) x (steps).
pub const MAX_ORACLE_STATES: usize = 1_000_000;

/// Exact distribution of the end point, keyed by space coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactDistribution {
    pub probabilities: BTreeMap<Vec<i64>, BigRational>,
}

impl ExactDistribution {
    pub fn to_f64(&self) -> BTreeMap<Vec<i64>, f64> {
        self.probabilities.iter().map(|(k, v)| (k.clone(), v.to_f64().unwrap_or(f64::NAN))).collect()
    }

    pub fn get(&self, x: &[i64]) -> BigRational {
        self.probabilities.get(x).cloned().unwrap_or_else(BigRational::zero)
    }
}

struct WindowBackbone<'a> {
    window: &'a Window,
    d: usize,
    offsets: Vec<crate::lattice::Point>,
    memo: HashMap<Site, bool>,
}

impl WindowBackbone<'_> {
    fn contains(&mut self, s: &Site) -> bool {
        if s.n >= self.window.t_end {
            return true;
        }
        if !self.window.is_open(s, self.d) {
            return false;
        }
        if let Some(v) = self.memo.get(s) {
            return *v;
        }
        let offsets = self.offsets.clone();
        let v = offsets.iter().any(|o| self.contains(&s.step(o)));
        self.memo.insert(*s, v);
        v
    }
}

/// Exact law of the walk's position after `steps` steps from `start` on
/// `window`. Sites without an explicit weight weigh 1.
pub fn exact_walk_distribution(window: &Window, lattice: &LatticeConfig, start: &Site, steps: usize) -> Result<ExactDistribution> {
    let d = lattice.d;
    let offsets = lattice.neighborhood.offsets(d);
    let box_volume: usize = (0..d)
        .map(|i| (window.hi.get(i).copied().unwrap_or(0) - window.lo.get(i).copied().unwrap_or(0) + 1 + 2 * steps as i64).max(1) as usize)
        .product();
    let layer_bound = box_volume.min(offsets.len().saturating_pow(steps as u32).max(1));
    let states = layer_bound.saturating_mul(steps.max(1));
    if states > MAX_ORACLE_STATES {
        return Err(Error::WindowTooLarge(states));
    }
    let mut backbone = WindowBackbone { window, d, offsets: offsets.clone(), memo: HashMap::new() };
    if !backbone.contains(start) {
        return Err(Error::NotInBackbone(*start));
    }
    let weight = |s: &Site| BigInt::from(window.weight_override(s).unwrap_or(1));

    let mut layer: BTreeMap<Site, BigRational> = BTreeMap::new();
    layer.insert(*start, BigRational::from_integer(1.into()));
    for _ in 0..steps {
        let mut next: BTreeMap<Site, BigRational> = BTreeMap::new();
        for (site, mass) in &layer {
            let targets: Vec<(Site, BigInt)> =
                offsets.iter().map(|o| site.step(o)).filter(|z| backbone.contains(z)).map(|z| (z, weight(&z))).collect();
            let total: BigInt = targets.iter().map(|(_, w)| w.clone()).sum();
            for (z, w) in targets {
                let share = mass * BigRational::new(w, total.clone());
                *next.entry(z).or_insert_with(BigRational::zero) += share;
            }
        }
        layer = next;
    }
    let probabilities = layer.into_iter().map(|(s, p)| (s.coords(d).to_vec(), p)).collect();
    Ok(ExactDistribution { probabilities })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratio(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    fn open_window() -> Window {
        Window { t_end: 4, lo: vec![-10], hi: vec![10], closed: vec![], weights: vec![] }
    }

    #[test]
    fn fair_coin_two_steps() {
        let dist = exact_walk_distribution(&open_window(), &LatticeConfig::new(1, 1.0), &Site::origin(), 2).unwrap();
        assert_eq!(dist.get(&[-2]), ratio(1, 4));
        assert_eq!(dist.get(&[0]), ratio(1, 2));
        assert_eq!(dist.get(&[2]), ratio(1, 4));
        assert_eq!(dist.probabilities.len(), 3);
    }

    #[test]
    fn weighted_single_step() {
        let mut w = open_window();
        w.weights = vec![(Site::new(&[-1], 1), 1), (Site::new(&[1], 1), 3)];
        let dist = exact_walk_distribution(&w, &LatticeConfig::new(1, 1.0), &Site::origin(), 1).unwrap();
        assert_eq!(dist.get(&[-1]), ratio(1, 4));
        assert_eq!(dist.get(&[1]), ratio(3, 4));
    }

    #[test]
    fn corridor_point_mass() {
        let mut w = open_window();
        for n in 1..4 {
            for x in -10..=10 {
                if x != n {
                    w.closed.push(Site::new(&[x], n));
                }
            }
        }
        let dist = exact_walk_distribution(&w, &LatticeConfig::new(1, 1.0), &Site::origin(), 3).unwrap();
        assert_eq!(dist.probabilities.len(), 1);
        assert_eq!(dist.get(&[3]), ratio(1, 1));
    }

    #[test]
    fn dead_branches_get_no_mass() {
        // (-1,1) is open but all of its successors are closed.
        let mut w = open_window();
        w.closed = vec![Site::new(&[-2], 2), Site::new(&[0], 2)];
        let dist = exact_walk_distribution(&w, &LatticeConfig::new(1, 1.0), &Site::origin(), 2).unwrap();
        assert_eq!(dist.get(&[2]), ratio(1, 1));
    }

    #[test]
    fn refuses_huge_windows() {
        let w = Window { t_end: 3, lo: vec![-1000, -1000], hi: vec![1000, 1000], closed: vec![], weights: vec![] };
        let r = exact_walk_distribution(&w, &LatticeConfig::new(2, 1.0), &Site::origin(), 40);
        assert!(matches!(r, Err(Error::WindowTooLarge(_))));
    }
}
