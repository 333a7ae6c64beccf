//! The percolation field `omega`, horizon-truncated longest open paths, the
//! approximate backbone and the weighted environment `xi^K`.
//!
//! Backbone membership (`(x,n) -> infinity`) is replaced by the horizon
//! backbone: sites from which an open directed path of length `h` starts.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeConfig, Point, Site};
use crate::seeds::{derive_seed, hash_site, Stream};
use crate::weights::{WeightField, WeightFieldSpec};

/// A hand-built finite environment. Inside the time range `[0, t_end)` a site
/// is open iff its space coordinate lies in the box `[lo, hi]` and it is not
/// listed in `closed`. Every site at time `>= t_end` is open, so an open path
/// reaching the top layer continues forever. Weights default to the base
/// field and may be overridden per site with positive integers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t_end: i64,
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
    #[serde(default)]
    pub closed: Vec<Site>,
    #[serde(default)]
    pub weights: Vec<(Site, u32)>,
}

#[derive(Debug)]
struct CompiledWindow {
    t_end: i64,
    lo: Point,
    hi: Point,
    d: usize,
    closed: HashSet<Site>,
    weights: HashMap<Site, u32>,
}

impl CompiledWindow {
    fn new(w: &Window, d: usize) -> Result<Self> {
        if w.lo.len() != d || w.hi.len() != d {
            return Err(Error::InvalidConfig(format!("window box must have {d} coordinates")));
        }
        if w.weights.iter().any(|(_, k)| *k == 0) {
            return Err(Error::InvalidConfig("window weights must be positive".into()));
        }
        let mut lo = [0; crate::lattice::MAX_DIM];
        let mut hi = [0; crate::lattice::MAX_DIM];
        lo[..d].copy_from_slice(&w.lo);
        hi[..d].copy_from_slice(&w.hi);
        Ok(CompiledWindow {
            t_end: w.t_end,
            lo,
            hi,
            d,
            closed: w.closed.iter().cloned().collect(),
            weights: w.weights.iter().cloned().collect(),
        })
    }

    fn is_open(&self, s: &Site) -> bool {
        if s.n >= self.t_end {
            return true;
        }
        if s.n < 0 {
            return false;
        }
        let inside = (0..self.d).all(|i| s.x[i] >= self.lo[i] && s.x[i] <= self.hi[i]);
        inside && !self.closed.contains(s)
    }
}

impl Window {
    pub(crate) fn weight_override(&self, s: &Site) -> Option<u32> {
        self.weights.iter().find(|(site, _)| site == s).map(|(_, k)| *k)
    }

    /// Open-site test used by the brute-force oracle.
    pub(crate) fn is_open(&self, s: &Site, d: usize) -> bool {
        if s.n >= self.t_end {
            return true;
        }
        if s.n < 0 {
            return false;
        }
        let inside = (0..d).all(|i| s.x[i] >= self.lo[i] && s.x[i] <= self.hi[i]);
        inside && !self.closed.contains(s)
    }
}

#[derive(Clone, Debug)]
enum Percolation {
    Bernoulli { threshold: u64, all_open: bool },
    Window(Arc<CompiledWindow>),
}

#[derive(Clone, Copy, Debug)]
struct Memo {
    /// `min(l(s), bound)` where `exact` says whether the bound was reached.
    value: i32,
    exact: bool,
    /// End of an open path from the site at least `value` steps long, so a
    /// later query with a larger bound can extend it instead of searching.
    tip: Site,
}

/// Default number of memo entries kept before old time layers are dropped.
pub const DEFAULT_MEMO_CAP: usize = 1 << 19;

/// Deterministic oracle for one environment `(omega, K)`.
///
/// The memo is private to the handle; [`EnvironmentHandle::fork`] gives an
/// independent handle over the same environment for use on another thread.
#[derive(Debug)]
pub struct EnvironmentHandle {
    perc_seed: u64,
    weight_seed: u64,
    lattice: LatticeConfig,
    weight_spec: WeightFieldSpec,
    percolation: Percolation,
    weights: WeightField,
    offsets: Vec<Point>,
    /// Offset index of each corner, keyed by the bitmask of its `+1` axes.
    corners: Vec<usize>,
    memo: RefCell<FxHashMap<Site, Memo>>,
    memo_cap: usize,
}

impl EnvironmentHandle {
    pub fn new(perc_seed: u64, weight_seed: u64, lattice: LatticeConfig, weight_spec: WeightFieldSpec) -> Result<Self> {
        lattice.validate()?;
        let weights = WeightField::new(&weight_spec, weight_seed, lattice.d)?;
        let all_open = lattice.p >= 1.0;
        let threshold = if all_open { u64::MAX } else { (lattice.p * 2f64.powi(64)) as u64 };
        Ok(Self::assemble(
            perc_seed,
            weight_seed,
            lattice,
            weight_spec,
            Percolation::Bernoulli { threshold, all_open },
            weights,
        ))
    }

    /// Environment backed by an explicit window instead of Bernoulli sites.
    /// `lattice.p` is ignored.
    pub fn from_window(window: &Window, lattice: LatticeConfig, weight_spec: WeightFieldSpec, weight_seed: u64) -> Result<Self> {
        lattice.validate()?;
        let weights = WeightField::new(&weight_spec, weight_seed, lattice.d)?;
        let compiled = CompiledWindow::new(window, lattice.d)?;
        Ok(Self::assemble(0, weight_seed, lattice, weight_spec, Percolation::Window(Arc::new(compiled)), weights))
    }

    fn assemble(
        perc_seed: u64,
        weight_seed: u64,
        lattice: LatticeConfig,
        weight_spec: WeightFieldSpec,
        percolation: Percolation,
        weights: WeightField,
    ) -> Self {
        EnvironmentHandle {
            perc_seed,
            weight_seed,
            offsets: lattice.neighborhood.offsets(lattice.d),
            corners: corner_indices(&lattice.neighborhood.offsets(lattice.d), lattice.d),
            lattice,
            weight_spec,
            percolation,
            weights,
            memo: RefCell::new(FxHashMap::default()),
            memo_cap: DEFAULT_MEMO_CAP,
        }
    }

    /// Same environment, empty memo.
    pub fn fork(&self) -> Self {
        EnvironmentHandle {
            perc_seed: self.perc_seed,
            weight_seed: self.weight_seed,
            lattice: self.lattice,
            weight_spec: self.weight_spec.clone(),
            percolation: self.percolation.clone(),
            weights: self.weights.clone(),
            offsets: self.offsets.clone(),
            corners: self.corners.clone(),
            memo: RefCell::new(FxHashMap::default()),
            memo_cap: self.memo_cap,
        }
    }

    /// Same environment evaluated at a different horizon.
    pub fn with_horizon(&self, horizon: u32) -> Self {
        let mut env = self.fork();
        env.lattice.horizon = horizon;
        env
    }

    pub fn with_memo_cap(mut self, cap: usize) -> Self {
        self.memo_cap = cap;
        self
    }

    pub fn lattice(&self) -> &LatticeConfig {
        &self.lattice
    }

    pub fn d(&self) -> usize {
        self.lattice.d
    }

    pub fn horizon(&self) -> i32 {
        self.lattice.horizon as i32
    }

    pub fn perc_seed(&self) -> u64 {
        self.perc_seed
    }

    pub fn weight_seed(&self) -> u64 {
        self.weight_seed
    }

    pub fn weight_spec(&self) -> &WeightFieldSpec {
        &self.weight_spec
    }

    pub fn weight_field(&self) -> &WeightField {
        &self.weights
    }

    /// Space offsets of `U^+` in canonical order.
    pub fn offsets(&self) -> &[Point] {
        &self.offsets
    }

    pub fn neighbors(&self, s: &Site) -> impl Iterator<Item = Site> + '_ {
        let s = *s;
        self.offsets.iter().map(move |o| s.step(o))
    }

    /// True when every site is open, so every site is in the backbone.
    pub fn fully_open(&self) -> bool {
        matches!(self.percolation, Percolation::Bernoulli { all_open: true, .. })
    }

    /// `omega(s) = 1`.
    #[inline]
    pub fn is_open(&self, s: &Site) -> bool {
        match &self.percolation {
            Percolation::Bernoulli { all_open: true, .. } => true,
            Percolation::Bernoulli { threshold, .. } => hash_site(self.perc_seed, Stream::Percolation, s, 0) < *threshold,
            Percolation::Window(w) => w.is_open(s),
        }
    }

    /// Sites where every site from here on is open, so `l = infinity`.
    #[inline]
    fn in_open_region(&self, s: &Site) -> bool {
        match &self.percolation {
            Percolation::Bernoulli { all_open, .. } => *all_open,
            Percolation::Window(w) => s.n >= w.t_end,
        }
    }

    /// `min(l(s), bound)` with `l = -1` on closed sites and `0` on open
    /// dead ends. `bound >= 0`.
    pub fn longest_path(&self, s: &Site, bound: i32) -> i32 {
        self.search(s, bound).0
    }

    /// `longest_path` plus the end of a witness path reaching at least that far.
    fn search(&self, s: &Site, bound: i32) -> (i32, Site) {
        if !self.is_open(s) {
            return (-1, *s);
        }
        if bound == 0 {
            return (0, *s);
        }
        if self.in_open_region(s) {
            let mut t = *s;
            for _ in 0..bound {
                t = t.step(&self.offsets[0]);
            }
            return (bound, t);
        }
        let cached = self.memo.borrow().get(s).copied();
        if let Some(m) = cached {
            if m.exact {
                return (m.value.min(bound), m.tip);
            }
            if m.value >= bound {
                return (bound, m.tip);
            }
            let need = bound - (m.tip.n - s.n) as i32;
            if need <= 0 {
                self.store(s, Memo { value: bound, exact: false, tip: m.tip });
                return (bound, m.tip);
            }
            let (v, tip) = self.search(&m.tip, need);
            if v == need {
                self.store(s, Memo { value: bound, exact: false, tip });
                return (bound, tip);
            }
        }
        // The preferred corner pulls each coordinate into a period-two orbit,
        // so witness paths from nearby sites merge and share memo entries.
        let first = self.preferred_child(s);
        let mut best = self.search(&s.step(&self.offsets[first]), bound - 1);
        if best.0 < bound - 1 {
            for (i, o) in self.offsets.iter().enumerate() {
                if i == first {
                    continue;
                }
                let r = self.search(&s.step(o), bound - 1);
                if r.0 > best.0 {
                    best = r;
                    if best.0 == bound - 1 {
                        break;
                    }
                }
            }
        }
        if best.0 < 0 {
            best.1 = *s;
        }
        let value = best.0 + 1;
        self.store(s, Memo { value, exact: value < bound, tip: best.1 });
        (value, best.1)
    }

    #[inline]
    fn preferred_child(&self, s: &Site) -> usize {
        let mut mask = 0;
        for i in 0..self.lattice.d {
            if matches!(s.x[i].rem_euclid(4), 0 | 3) {
                mask |= 1 << i;
            }
        }
        self.corners[mask]
    }

    fn store(&self, s: &Site, m: Memo) {
        let mut memo = self.memo.borrow_mut();
        let entry = memo.entry(*s).or_insert(m);
        if m.exact || (!entry.exact && m.value > entry.value) {
            *entry = m;
        }
    }

    /// `min(l(s), h)`, in `{-1, 0, ..., h}`.
    pub fn path_length(&self, s: &Site) -> i32 {
        self.longest_path(s, self.horizon())
    }

    /// Membership in the horizon backbone.
    #[inline]
    pub fn in_backbone(&self, s: &Site) -> bool {
        self.fully_open() || self.path_length(s) >= self.horizon()
    }

    /// `K(s)`, ignoring percolation.
    #[inline]
    pub fn weight(&self, s: &Site) -> f64 {
        if let Percolation::Window(w) = &self.percolation {
            if let Some(k) = w.weights.get(s) {
                return *k as f64;
            }
        }
        self.weights.weight(s)
    }

    /// `xi^K(s)`: the weight on the backbone, zero elsewhere.
    pub fn xi_value(&self, s: &Site) -> f64 {
        if self.in_backbone(s) {
            self.weight(s)
        } else {
            0.0
        }
    }

    pub fn memo_len(&self) -> usize {
        self.memo.borrow().len()
    }

    /// Drops memo entries for time layers before `n`.
    pub fn trim_before(&self, n: i64) {
        self.memo.borrow_mut().retain(|s, _| s.n >= n);
    }

    /// Drops old time layers when the memo exceeds its cap. Walkers call this
    /// with their current time; answers are unaffected.
    #[inline]
    pub fn maybe_trim(&self, n: i64) {
        if self.memo.borrow().len() > self.memo_cap {
            self.trim_before(n);
        }
    }
}

fn corner_indices(offsets: &[Point], d: usize) -> Vec<usize> {
    (0..1usize << d)
        .map(|mask| {
            offsets
                .iter()
                .position(|o| (0..d).all(|i| o[i] == if mask >> i & 1 == 1 { 1 } else { -1 }))
                .expect("every neighbourhood contains the corners")
        })
        .collect()
}

/// Lets worker threads take their own forks of one environment.
#[derive(Debug)]
pub struct SharedEnvironment(Mutex<EnvironmentHandle>);

impl SharedEnvironment {
    pub fn new(env: &EnvironmentHandle) -> Self {
        SharedEnvironment(Mutex::new(env.fork()))
    }

    pub fn fork(&self) -> EnvironmentHandle {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).fork()
    }
}

/// Result of [`condition_on_origin`].
#[derive(Debug)]
pub struct Conditioned {
    pub env: EnvironmentHandle,
    /// Number of candidate environments drawn, including the accepted one.
    pub attempts: u64,
}

/// Draws environments from seeds derived from `base_seed` until the origin
/// lies in the backbone.
pub fn condition_on_origin(base_seed: u64, lattice: LatticeConfig, spec: &WeightFieldSpec, cap: u64) -> Result<Conditioned> {
    condition_on_sites(base_seed, lattice, spec, cap, &[Site::origin()])
}

/// Like [`condition_on_origin`] but requires every site in `sites` to be in
/// the backbone.
pub fn condition_on_sites(base_seed: u64, lattice: LatticeConfig, spec: &WeightFieldSpec, cap: u64, sites: &[Site]) -> Result<Conditioned> {
    for attempt in 0..cap {
        let env = EnvironmentHandle::new(
            derive_seed(base_seed, "percolation", attempt),
            derive_seed(base_seed, "weights", attempt),
            lattice,
            spec.clone(),
        )?;
        if sites.iter().all(|s| env.in_backbone(s)) {
            env.trim_before(i64::MAX);
            return Ok(Conditioned { env, attempts: attempt + 1 });
        }
    }
    Err(Error::RejectionCapExceeded(cap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Neighborhood;

    fn env(p: f64, d: usize, h: u32, seed: u64) -> EnvironmentHandle {
        EnvironmentHandle::new(seed, seed ^ 0xabc, LatticeConfig::new(d, p).with_horizon(h), WeightFieldSpec::constant(1.0)).unwrap()
    }

    /// Exhaustive longest open path from `s`, capped at `bound`.
    fn brute_longest(env: &EnvironmentHandle, s: &Site, bound: i32) -> i32 {
        if !env.is_open(s) {
            return -1;
        }
        if bound == 0 {
            return 0;
        }
        let best = env.neighbors(s).map(|z| brute_longest(env, &z, bound - 1)).max().unwrap();
        (best + 1).min(bound)
    }

    #[test]
    fn full_lattice_is_backbone() {
        let e = env(1.0, 2, 20, 1);
        for i in -5..5 {
            let s = Site::new(&[i, -i], i);
            assert!(e.is_open(&s));
            assert_eq!(e.path_length(&s), 20);
            assert!(e.in_backbone(&s));
        }
    }

    #[test]
    fn closed_site_has_length_minus_one() {
        let e = env(0.5, 1, 10, 2);
        let closed = (0..100).map(|i| Site::new(&[i], 0)).find(|s| !e.is_open(s)).unwrap();
        assert_eq!(e.path_length(&closed), -1);
        assert!(!e.in_backbone(&closed));
        assert_eq!(e.xi_value(&closed), 0.0);
    }

    #[test]
    fn hand_window_path_length() {
        // (0,0),(1,1) open; (-1,1),(0,2),(2,2) closed.
        let w = Window {
            t_end: 10,
            lo: vec![-10],
            hi: vec![10],
            closed: vec![Site::new(&[-1], 1), Site::new(&[0], 2), Site::new(&[2], 2)],
            weights: vec![],
        };
        let e = EnvironmentHandle::from_window(&w, LatticeConfig::new(1, 1.0).with_horizon(5), WeightFieldSpec::constant(1.0), 0).unwrap();
        assert_eq!(e.path_length(&Site::new(&[0], 0)), 1);
        assert_eq!(e.path_length(&Site::new(&[1], 1)), 0);
    }

    #[test]
    fn memoized_recursion_matches_brute_force() {
        for seed in 0..5 {
            let e = env(0.65, 1, 12, seed);
            let fresh = e.fork();
            for x in -6..6 {
                for n in 0..4 {
                    let s = Site::new(&[x], n);
                    let expected = brute_longest(&fresh, &s, 12);
                    assert_eq!(e.path_length(&s), expected, "seed {seed} site {s:?}");
                }
            }
        }
    }

    #[test]
    fn shell_neighborhood_matches_brute_force() {
        let lattice = LatticeConfig::new(2, 0.4).with_horizon(6).with_neighborhood(Neighborhood::Shell);
        let e = EnvironmentHandle::new(9, 1, lattice, WeightFieldSpec::constant(1.0)).unwrap();
        let fresh = e.fork();
        for x in -3..3 {
            for y in -3..3 {
                let s = Site::new(&[x, y], 0);
                assert_eq!(e.path_length(&s), brute_longest(&fresh, &s, 6));
            }
        }
    }

    #[test]
    fn query_order_does_not_matter() {
        let e1 = env(0.7, 1, 30, 3);
        let e2 = e1.fork();
        let sites: Vec<Site> = (0..200).map(|i| Site::new(&[i % 20 - 10], i / 20)).collect();
        let forward: Vec<i32> = sites.iter().map(|s| e1.path_length(s)).collect();
        let backward: Vec<i32> = sites.iter().rev().map(|s| e2.path_length(s)).collect();
        assert_eq!(forward, backward.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn horizon_monotonicity() {
        let e40 = env(0.72, 1, 40, 4);
        let e20 = e40.with_horizon(20);
        for x in -20..20 {
            let s = Site::new(&[x], 0);
            assert_eq!(e20.path_length(&s), e40.path_length(&s).min(20));
        }
    }

    #[test]
    fn trimming_is_transparent() {
        let e = env(0.7, 1, 25, 5);
        let reference = e.fork();
        for n in 0..50 {
            let s = Site::new(&[0], n);
            assert_eq!(e.path_length(&s), reference.path_length(&s));
            e.trim_before(n);
        }
    }

    #[test]
    fn conditioning_full_lattice_accepts_first() {
        let c = condition_on_origin(1, LatticeConfig::new(1, 1.0), &WeightFieldSpec::constant(1.0), 10).unwrap();
        assert_eq!(c.attempts, 1);
    }

    #[test]
    fn conditioning_subcritical_hits_cap() {
        let r = condition_on_origin(1, LatticeConfig::new(1, 0.01), &WeightFieldSpec::constant(1.0), 1000);
        assert!(matches!(r, Err(Error::RejectionCapExceeded(1000))));
    }

    #[test]
    fn conditioned_origin_is_backbone() {
        let c = condition_on_origin(7, LatticeConfig::new(1, 0.8), &WeightFieldSpec::constant(1.0), 1000).unwrap();
        assert!(c.env.in_backbone(&Site::origin()));
    }
}
