//! Space-time lattice `Z^d x Z`, sites and the forward neighbourhood `U^+`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported number of space dimensions.
pub const MAX_DIM: usize = 4;

/// Space coordinates. Entries at index `>= d` are always zero.
pub type Point = [i64; MAX_DIM];

/// A site `(x, n)` of the space-time lattice. Deserializes from `x` lists
/// shorter than `MAX_DIM`, padding with zeros.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "SiteRepr")]
pub struct Site {
    pub x: Point,
    pub n: i64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SiteRepr {
    x: Vec<i64>,
    n: i64,
}

impl TryFrom<SiteRepr> for Site {
    type Error = String;

    fn try_from(r: SiteRepr) -> std::result::Result<Self, String> {
        if r.x.len() > MAX_DIM {
            return Err(format!("at most {MAX_DIM} space coordinates, got {}", r.x.len()));
        }
        Ok(Site::new(&r.x, r.n))
    }
}

impl Site {
    /// Builds a site from a coordinate slice of length `d <= MAX_DIM`.
    pub fn new(x: &[i64], n: i64) -> Self {
        assert!(x.len() <= MAX_DIM, "at most {MAX_DIM} space dimensions");
        let mut p = [0; MAX_DIM];
        p[..x.len()].copy_from_slice(x);
        Site { x: p, n }
    }

    pub fn origin() -> Self {
        Site::default()
    }

    /// The site reached by moving `offset` in space and one step forward in time.
    #[inline]
    pub fn step(&self, offset: &Point) -> Site {
        let mut x = self.x;
        for (a, b) in x.iter_mut().zip(offset) {
            *a += b;
        }
        Site { x, n: self.n + 1 }
    }

    /// Same space coordinate, shifted in time.
    pub fn at_time(&self, n: i64) -> Site {
        Site { x: self.x, n }
    }

    pub fn coords(&self, d: usize) -> &[i64] {
        &self.x[..d]
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let last = self.x.iter().rposition(|&c| c != 0).map_or(1, |i| i + 1);
        write!(f, "({:?}, {})", &self.x[..last], self.n)
    }
}

/// Sup-norm of the difference of two points.
pub fn sup_dist(a: &Point, b: &Point) -> i64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).max().unwrap_or(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    /// Offsets in `{-1, +1}^d`: the `2^d` corners of the unit hypercube.
    #[default]
    Corners,
    /// Offsets with sup-norm exactly 1: `3^d - 1` sites.
    Shell,
    /// Offsets with sup-norm at most 1: `3^d` sites.
    ShellWithSelf,
}

impl Neighborhood {
    pub fn size(self, d: usize) -> usize {
        let d = d as u32;
        match self {
            Neighborhood::Corners => 2usize.pow(d),
            Neighborhood::Shell => 3usize.pow(d) - 1,
            Neighborhood::ShellWithSelf => 3usize.pow(d),
        }
    }

    /// Space offsets in lexicographic order.
    pub fn offsets(self, d: usize) -> Vec<Point> {
        let coord_values: &[i64] = match self {
            Neighborhood::Corners => &[-1, 1],
            Neighborhood::Shell | Neighborhood::ShellWithSelf => &[-1, 0, 1],
        };
        let mut out: Vec<Point> = vec![[0; MAX_DIM]];
        for axis in 0..d {
            let mut next = Vec::with_capacity(out.len() * coord_values.len());
            for prefix in &out {
                for &v in coord_values {
                    let mut p = *prefix;
                    p[axis] = v;
                    next.push(p);
                }
            }
            out = next;
        }
        if self == Neighborhood::Shell {
            out.retain(|p| p.iter().any(|&c| c != 0));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub d: usize,
    #[serde(default)]
    pub neighborhood: Neighborhood,
    pub p: f64,
    #[serde(default = "LatticeConfig::default_horizon")]
    pub horizon: u32,
}

impl LatticeConfig {
    pub const DEFAULT_HORIZON: u32 = 50;

    fn default_horizon() -> u32 {
        Self::DEFAULT_HORIZON
    }

    pub fn new(d: usize, p: f64) -> Self {
        LatticeConfig { d, neighborhood: Neighborhood::Corners, p, horizon: Self::DEFAULT_HORIZON }
    }

    pub fn with_horizon(mut self, horizon: u32) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_neighborhood(mut self, neighborhood: Neighborhood) -> Self {
        self.neighborhood = neighborhood;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > MAX_DIM {
            return Err(Error::InvalidConfig(format!("d must be in 1..={MAX_DIM}, got {}", self.d)));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidConfig(format!("p must be in (0, 1], got {}", self.p)));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be >= 1".into()));
        }
        Ok(())
    }
}

/// `U^+(s)`: the forward neighbours of `s`, in canonical order.
pub fn neighbors(s: &Site, cfg: &LatticeConfig) -> Vec<Site> {
    cfg.neighborhood.offsets(cfg.d).iter().map(|o| s.step(o)).collect()
}
