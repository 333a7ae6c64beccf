//! Monte Carlo laboratory for weighted random walks on the backbone of a
//! supercritical oriented site percolation cluster.

pub mod environment;
pub mod error;
pub mod lattice;
pub mod pairwalk;
pub mod regeneration;
pub mod seeds;
pub mod stats;
pub mod walker;
pub mod weights;

pub use environment::{condition_on_origin, condition_on_sites, Conditioned, EnvironmentHandle, SharedEnvironment, Window};
pub use error::{Error, Result};
pub use lattice::{neighbors, LatticeConfig, Neighborhood, Point, Site, MAX_DIM};
pub use pairwalk::{
    annulus_experiment, estimate_tv, f_d_reference, run_pair, AnnulusConfig, AnnulusResult, AnnulusSpec, PairEnvironments, PairMode, PairWalkRecord,
    Skeleton, SummarySpec, TvConfig, TvEstimate, XiSummary,
};
pub use regeneration::{
    estimate_covariance, estimate_drift, find_regenerations, fit_tail, is_s2m, CovarianceEstimate, DriftEstimate, RegenerationRecord,
    RegenerationSearch, TailFit,
};
pub use stats::{clt_experiment, loglinear_fit, normality_report, CltConfig, CltMode, CltReport, LinearFit, NormalityReport};
pub use walker::{local_path, sample_permutation, sample_walk, step_distribution, PermutationField, WalkPath};
pub use weights::{WeightField, WeightFieldSpec};
