//! The weighted walk on the backbone, sampled either directly from the
//! transition kernel or through the permutation-based local construction.

mod oracle;

pub use oracle::{exact_walk_distribution, ExactDistribution, MAX_ORACLE_STATES};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::environment::EnvironmentHandle;
use crate::error::{Error, Result};
use crate::lattice::{Point, Site};
use crate::seeds::{hash_site, unit_f64, Stream};

/// Neighbour indices into [`EnvironmentHandle::offsets`].
pub type Ordering = SmallVec<[u8; 16]>;

/// Time-indexed sequence of visited sites, stored as a start and one space
/// offset per step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkPath {
    pub start: Site,
    pub displacements: Vec<Point>,
}

impl WalkPath {
    pub fn new(start: Site) -> Self {
        WalkPath { start, displacements: Vec::new() }
    }

    pub fn steps(&self) -> usize {
        self.displacements.len()
    }

    pub fn push(&mut self, offset: Point) {
        self.displacements.push(offset);
    }

    /// All visited sites, starting with `start`.
    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        std::iter::once(self.start).chain(self.displacements.iter().scan(self.start, |cur, o| {
            *cur = cur.step(o);
            Some(*cur)
        }))
    }

    pub fn end(&self) -> Site {
        self.sites().last().unwrap_or(self.start)
    }
}

/// Transition probabilities from `s` over `U^+(s)` in canonical order:
/// proportional to `K(z)` on backbone neighbours, zero elsewhere.
pub fn step_distribution(s: &Site, env: &EnvironmentHandle) -> Result<Vec<f64>> {
    if !env.in_backbone(s) {
        return Err(Error::NotInBackbone(*s));
    }
    let mut probs: Vec<f64> = env.neighbors(s).map(|z| env.xi_value(&z)).collect();
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Err(Error::HorizonExhausted(*s));
    }
    for p in &mut probs {
        *p /= total;
    }
    Ok(probs)
}

/// One step of the walk drawn from the kernel at `s`.
pub fn kernel_step<R: Rng + ?Sized>(s: &Site, env: &EnvironmentHandle, rng: &mut R) -> Result<Site> {
    if env.fully_open() && env.weight_field().is_constant() {
        let offsets = env.offsets();
        let i = rng.random_range(0..offsets.len());
        return Ok(s.step(&offsets[i]));
    }
    let mut weights: SmallVec<[f64; 16]> = SmallVec::new();
    let mut total = 0.0;
    for z in env.neighbors(s) {
        let w = env.xi_value(&z);
        total += w;
        weights.push(w);
    }
    if total <= 0.0 || !env.in_backbone(s) {
        return Err(dead_end_error(s, env));
    }
    let mut target = rng.random::<f64>() * total;
    let offsets = env.offsets();
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            last = i;
            if target < *w {
                return Ok(s.step(&offsets[i]));
            }
            target -= w;
        }
    }
    Ok(s.step(&offsets[last]))
}

/// Samples `steps` steps of the walk from the transition kernel.
pub fn sample_walk<R: Rng + ?Sized>(start: &Site, steps: usize, env: &EnvironmentHandle, rng: &mut R) -> Result<WalkPath> {
    if !env.in_backbone(start) {
        return Err(Error::NotInBackbone(*start));
    }
    let mut path = WalkPath::new(*start);
    path.displacements.reserve(steps);
    let mut cur = *start;
    for _ in 0..steps {
        let next = kernel_step(&cur, env, rng)?;
        let mut off = [0; crate::lattice::MAX_DIM];
        for (o, (a, b)) in off.iter_mut().zip(next.x.iter().zip(&cur.x)) {
            *o = a - b;
        }
        path.push(off);
        cur = next;
        env.maybe_trim(cur.n);
    }
    Ok(path)
}

/// Selects an index with probability proportional to `weights[i]` among
/// `remaining`, using the uniform `u`.
#[inline]
fn weighted_pick(remaining: &[u8], weights: &[f64], u: f64) -> usize {
    let total: f64 = remaining.iter().map(|&i| weights[i as usize]).sum();
    let mut target = u * total;
    for (pos, &i) in remaining.iter().enumerate() {
        let w = weights[i as usize];
        if target < w {
            return pos;
        }
        target -= w;
    }
    remaining.len() - 1
}

/// A random permutation `omega~(x, n)` of `U^+(x, n)`, drawn by successive
/// weighted selection without replacement with weights `K(., n+1)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationSample {
    pub site: Site,
    pub ordering: Vec<u8>,
}

/// Draws one permutation at `s` using `rng`.
pub fn sample_permutation<R: Rng + ?Sized>(s: &Site, env: &EnvironmentHandle, rng: &mut R) -> PermutationSample {
    let weights: SmallVec<[f64; 16]> = env.neighbors(s).map(|z| env.weight(&z)).collect();
    let mut remaining: Ordering = (0..weights.len() as u8).collect();
    let mut ordering = Vec::with_capacity(weights.len());
    while !remaining.is_empty() {
        let pos = weighted_pick(&remaining, &weights, rng.random::<f64>());
        ordering.push(remaining.remove(pos));
    }
    PermutationSample { site: *s, ordering }
}

/// The family of permutations `omega~` of one walker, keyed by site. Each
/// permutation is a pure function of `(seed, site)` and the weights, so it is
/// identical every time the construction revisits a site.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PermutationField {
    seed: u64,
}

impl PermutationField {
    pub fn new(seed: u64) -> Self {
        PermutationField { seed }
    }

    pub fn from_rng<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        PermutationField { seed: rng.next_u64() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    fn uniform(&self, s: &Site, round: usize) -> f64 {
        unit_f64(hash_site(self.seed, Stream::Permutation, s, round as u64))
    }

    /// The full permutation at `s`.
    pub fn ordering(&self, s: &Site, env: &EnvironmentHandle) -> Ordering {
        let weights: SmallVec<[f64; 16]> = env.neighbors(s).map(|z| env.weight(&z)).collect();
        let mut remaining: Ordering = (0..weights.len() as u8).collect();
        let mut out = Ordering::new();
        let mut round = 0;
        while remaining.len() > 1 {
            let pos = weighted_pick(&remaining, &weights, self.uniform(s, round));
            out.push(remaining.remove(pos));
            round += 1;
        }
        out.extend(remaining);
        out
    }

    pub fn sample(&self, s: &Site, env: &EnvironmentHandle) -> PermutationSample {
        PermutationSample { site: *s, ordering: self.ordering(s, env).to_vec() }
    }

    /// First element of the permutation at `s` that satisfies `accept`.
    /// Elements are generated lazily, so `accept` is called only on the
    /// prefix up to the first hit.
    #[inline]
    pub fn first_matching<F: FnMut(usize, &Site) -> bool>(&self, s: &Site, env: &EnvironmentHandle, mut accept: F) -> Option<Site> {
        let offsets = env.offsets();
        let weights: SmallVec<[f64; 16]> = env.neighbors(s).map(|z| env.weight(&z)).collect();
        let mut remaining: Ordering = (0..weights.len() as u8).collect();
        let mut round = 0;
        while !remaining.is_empty() {
            let pos = if remaining.len() == 1 { 0 } else { weighted_pick(&remaining, &weights, self.uniform(s, round)) };
            let idx = remaining.remove(pos);
            round += 1;
            let z = s.step(&offsets[idx as usize]);
            if accept(idx as usize, &z) {
                return Some(z);
            }
        }
        None
    }

    /// `m_q(s)`: the first element of the permutation inside
    /// `M_q(s) = argmax_z min(l(z), q)`, with `M_{-1} = U^+(s)`. The path
    /// lengths are the horizon-truncated ones of `env`.
    pub fn choose(&self, s: &Site, q: i64, env: &EnvironmentHandle) -> Site {
        if q < 0 {
            return self.first_matching(s, env, |_, _| true).expect("nonempty neighbourhood");
        }
        let bound = q.min(env.horizon() as i64) as i32;
        let lengths: SmallVec<[i32; 16]> = env.neighbors(s).map(|z| env.longest_path(&z, bound)).collect();
        let best = *lengths.iter().max().expect("nonempty neighbourhood");
        self.first_matching(s, env, |idx, _| lengths[idx] == best).expect("argmax is nonempty")
    }

    /// One step of `gamma_infinity`: the first backbone neighbour in the permutation.
    #[inline]
    pub fn walk_step(&self, s: &Site, env: &EnvironmentHandle) -> Result<Site> {
        self.first_matching(s, env, |_, z| env.in_backbone(z)).ok_or_else(|| dead_end_error(s, env))
    }
}

fn dead_end_error(s: &Site, env: &EnvironmentHandle) -> Error {
    if env.in_backbone(s) {
        Error::HorizonExhausted(*s)
    } else {
        Error::NotInBackbone(*s)
    }
}

/// The local path `gamma_k` from `start`: step `j` moves to
/// `m_{k-j-1}(gamma_k(j-1))`.
pub fn local_path(start: &Site, k: usize, env: &EnvironmentHandle, perms: &PermutationField) -> WalkPath {
    let mut path = WalkPath::new(*start);
    let mut cur = *start;
    for j in 1..=k {
        let next = perms.choose(&cur, k as i64 - j as i64 - 1, env);
        let mut off = [0; crate::lattice::MAX_DIM];
        for (o, (a, b)) in off.iter_mut().zip(next.x.iter().zip(&cur.x)) {
            *o = a - b;
        }
        path.push(off);
        cur = next;
    }
    path
}

/// Endpoint `gamma_k(k)` of the local path of length `k`.
pub fn local_endpoint(start: &Site, k: usize, env: &EnvironmentHandle, perms: &PermutationField) -> Site {
    let mut cur = *start;
    for j in 1..=k {
        cur = perms.choose(&cur, k as i64 - j as i64 - 1, env);
    }
    cur
}

/// Streams `gamma_infinity` from `start` without storing the path.
pub struct PermutationWalker<'a> {
    env: &'a EnvironmentHandle,
    perms: PermutationField,
    current: Site,
}

impl<'a> PermutationWalker<'a> {
    pub fn new(start: Site, env: &'a EnvironmentHandle, perms: PermutationField) -> Result<Self> {
        if !env.in_backbone(&start) {
            return Err(Error::NotInBackbone(start));
        }
        Ok(PermutationWalker { env, perms, current: start })
    }

    pub fn current(&self) -> Site {
        self.current
    }

    pub fn advance(&mut self) -> Result<Site> {
        self.current = self.perms.walk_step(&self.current, self.env)?;
        self.env.maybe_trim(self.current.n);
        Ok(self.current)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Window;
    use crate::lattice::LatticeConfig;
    use crate::weights::WeightFieldSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn open_window(d: usize, weights: Vec<(Site, u32)>, closed: Vec<Site>) -> EnvironmentHandle {
        let w = Window { t_end: 6, lo: vec![-20; d], hi: vec![20; d], closed, weights };
        EnvironmentHandle::from_window(&w, LatticeConfig::new(d, 1.0).with_horizon(10), WeightFieldSpec::constant(1.0), 0).unwrap()
    }

    #[test]
    fn symmetric_kernel() {
        let env = open_window(1, vec![], vec![]);
        let p = step_distribution(&Site::origin(), &env).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn weighted_kernel() {
        let env = open_window(1, vec![(Site::new(&[-1], 1), 1), (Site::new(&[1], 1), 3)], vec![]);
        let p = step_distribution(&Site::origin(), &env).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn single_support_kernel() {
        let env = open_window(1, vec![], vec![Site::new(&[-1], 1)]);
        let p = step_distribution(&Site::origin(), &env).unwrap();
        assert_eq!(p, vec![0.0, 1.0]);
    }

    #[test]
    fn kernel_rejects_non_backbone() {
        let env = open_window(1, vec![], vec![Site::origin()]);
        assert!(matches!(step_distribution(&Site::origin(), &env), Err(Error::NotInBackbone(_))));
    }

    #[test]
    fn kernel_normalises_on_random_environments() {
        let env = EnvironmentHandle::new(3, 4, LatticeConfig::new(2, 0.7).with_horizon(20), WeightFieldSpec::Iid { a: 0.5, b: 3.0 }).unwrap();
        let mut checked = 0;
        for x in -10..10 {
            for y in -10..10 {
                let s = Site::new(&[x, y], 0);
                if env.in_backbone(&s) {
                    let p = step_distribution(&s, &env).unwrap();
                    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    checked += 1;
                }
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn zero_step_walk() {
        let env = open_window(1, vec![], vec![]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let path = sample_walk(&Site::origin(), 0, &env, &mut rng).unwrap();
        assert_eq!(path.steps(), 0);
        assert_eq!(path.end(), Site::origin());
    }

    #[test]
    fn corridor_forces_the_path() {
        // Only the zig-zag corridor 0,1,0,1,... is open up to t_end.
        let mut closed = Vec::new();
        for n in 1..6 {
            for x in -20..=20 {
                let on_corridor = x == (n % 2);
                if !on_corridor {
                    closed.push(Site::new(&[x], n));
                }
            }
        }
        let env = open_window(1, vec![], closed);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let path = sample_walk(&Site::origin(), 5, &env, &mut rng).unwrap();
        let xs: Vec<i64> = path.sites().map(|s| s.x[0]).collect();
        assert_eq!(xs, vec![0, 1, 0, 1, 0, 1]);
        let perms = PermutationField::new(9);
        let local = local_path(&Site::origin(), 5 + 10, &env, &perms);
        let xs: Vec<i64> = local.sites().take(6).map(|s| s.x[0]).collect();
        assert_eq!(xs, vec![0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn permutation_product_law_d1() {
        // Weights (1, 3): the heavy neighbour comes first with probability 3/4.
        let env = open_window(1, vec![(Site::new(&[-1], 1), 1), (Site::new(&[1], 1), 3)], vec![]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let heavy_first = (0..n).filter(|_| sample_permutation(&Site::origin(), &env, &mut rng).ordering[0] == 1).count();
        let freq = heavy_first as f64 / n as f64;
        let sd = (0.75f64 * 0.25 / n as f64).sqrt();
        assert!((freq - 0.75).abs() < 4.0 * sd, "freq {freq}");
    }

    #[test]
    fn permutation_uniform_for_equal_weights_d2() {
        let env = open_window(2, vec![], vec![]);
        let field_counts = |n: usize| {
            let mut counts = std::collections::HashMap::new();
            for i in 0..n {
                let pf = PermutationField::new(i as u64);
                *counts.entry(pf.ordering(&Site::origin(), &env).to_vec()).or_insert(0usize) += 1;
            }
            counts
        };
        let n = 48_000;
        let counts = field_counts(n);
        assert_eq!(counts.len(), 24);
        let expected = n as f64 / 24.0;
        let sd = (expected * (1.0 - 1.0 / 24.0)).sqrt();
        for c in counts.values() {
            assert!((*c as f64 - expected).abs() < 4.5 * sd, "count {c}");
        }
    }

    #[test]
    fn permutation_field_is_a_bijection_and_stable() {
        let env = EnvironmentHandle::new(1, 2, LatticeConfig::new(2, 0.8), WeightFieldSpec::Iid { a: 1.0, b: 5.0 }).unwrap();
        let pf = PermutationField::new(77);
        for x in -3..3 {
            let s = Site::new(&[x, 1], 4);
            let o = pf.ordering(&s, &env);
            let mut sorted = o.to_vec();
            sorted.sort();
            assert_eq!(sorted, vec![0, 1, 2, 3]);
            assert_eq!(o, pf.ordering(&s, &env));
        }
    }

    #[test]
    fn local_path_zero_length() {
        let env = open_window(1, vec![], vec![]);
        let path = local_path(&Site::origin(), 0, &env, &PermutationField::new(1));
        assert_eq!(path.steps(), 0);
    }

    #[test]
    fn local_path_on_full_lattice_follows_first_elements() {
        let env = EnvironmentHandle::new(0, 0, LatticeConfig::new(1, 1.0), WeightFieldSpec::Iid { a: 1.0, b: 2.0 }).unwrap();
        let pf = PermutationField::new(5);
        let path = local_path(&Site::origin(), 30, &env, &pf);
        for (a, b) in path.sites().zip(path.sites().skip(1)) {
            let first = pf.ordering(&a, &env)[0] as usize;
            assert_eq!(a.step(&env.offsets()[first]), b);
        }
    }

    #[test]
    fn local_path_follows_the_infinite_branch() {
        // From (0,0): the left branch dies at time 3, the right one reaches the top.
        let mut closed = Vec::new();
        for n in 1..8 {
            for x in -20..=20i64 {
                let left = n <= 3 && x == -n;
                let right = x == n;
                if !(left || right) {
                    closed.push(Site::new(&[x], n));
                }
            }
        }
        let w = Window { t_end: 8, lo: vec![-20], hi: vec![20], closed, weights: vec![] };
        let env = EnvironmentHandle::from_window(&w, LatticeConfig::new(1, 1.0).with_horizon(12), WeightFieldSpec::constant(1.0), 0).unwrap();
        assert_eq!(env.path_length(&Site::new(&[-1], 1)), 2);
        assert!(env.in_backbone(&Site::new(&[1], 1)));
        for seed in 0..20 {
            let pf = PermutationField::new(seed);
            let path = local_path(&Site::origin(), 20, &env, &pf);
            let xs: Vec<i64> = path.sites().take(8).map(|s| s.x[0]).collect();
            assert_eq!(xs, (0..8).collect::<Vec<_>>());
        }
    }

    #[test]
    fn permutation_walker_stays_on_backbone() {
        let env = EnvironmentHandle::new(11, 12, LatticeConfig::new(1, 0.75), WeightFieldSpec::Iid { a: 1.0, b: 2.0 }).unwrap();
        let start = (0..).map(|x| Site::new(&[x], 0)).find(|s| env.in_backbone(s)).unwrap();
        let mut walker = PermutationWalker::new(start, &env, PermutationField::new(3)).unwrap();
        for _ in 0..500 {
            let s = walker.advance().unwrap();
            assert!(env.xi_value(&s) > 0.0);
        }
    }
}
