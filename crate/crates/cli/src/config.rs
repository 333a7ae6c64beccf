//! Experiment configuration: schema, defaults and validation.

use std::path::PathBuf;

use opcwalk_core::environment::Window;
use opcwalk_core::lattice::MAX_DIM;
use opcwalk_core::stats::MIN_NORMALITY_SAMPLES;
use opcwalk_core::weights::{EventFamily, MixingAxis, MixingMode};
use opcwalk_core::{LatticeConfig, Site, Skeleton, SummarySpec, WeightFieldSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Drift,
    Clt,
    QuenchedClt,
    Tail,
    Mixing,
    PairTv,
    Annulus,
    OracleCheck,
    Berger,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Drift => "drift",
            Command::Clt => "clt",
            Command::QuenchedClt => "quenched-clt",
            Command::Tail => "tail",
            Command::Mixing => "mixing",
            Command::PairTv => "pair-tv",
            Command::Annulus => "annulus",
            Command::OracleCheck => "oracle-check",
            Command::Berger => "berger",
        }
    }

    fn needs_steps(self) -> bool {
        matches!(self, Command::Clt | Command::QuenchedClt | Command::OracleCheck | Command::Berger)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub weight_spec: WeightFieldSpec,
    #[serde(default = "defaults::m")]
    pub m: u32,
    /// Walk length; required by clt, quenched-clt, oracle-check and berger,
    /// and by drift when `p = 1`.
    #[serde(default)]
    pub steps: u64,
    #[serde(default = "defaults::one")]
    pub replicas: usize,
    #[serde(default = "defaults::one")]
    pub environments: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Walk steps allowed per regeneration search or pair.
    #[serde(default = "defaults::budget")]
    pub budget: u64,
    /// Environments drawn while conditioning on the start being in the backbone.
    #[serde(default = "defaults::rejection_cap")]
    pub rejection_cap: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clt: Option<CltSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing: Option<MixingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_tv: Option<PairTvSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annulus: Option<AnnulusSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    /// Regeneration increments collected per replica.
    #[serde(default = "defaults::regenerations")]
    pub regenerations: usize,
    #[serde(default = "defaults::lag_cutoff")]
    pub lag_cutoff: usize,
}

impl Default for DriftSection {
    fn default() -> Self {
        DriftSection { regenerations: defaults::regenerations(), lag_cutoff: defaults::lag_cutoff() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltSection {
    /// Regeneration increments behind the centering drift when `p < 1`.
    #[serde(default = "defaults::drift_increments")]
    pub drift_increments: usize,
}

impl Default for CltSection {
    fn default() -> Self {
        CltSection { drift_increments: defaults::drift_increments() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailSection {
    /// Samples of `T_1`, one walk in a fresh environment each.
    #[serde(default = "defaults::tail_samples")]
    pub samples: usize,
    /// Samples of `T^sim_1` for two walks in one environment; 0 skips them.
    #[serde(default)]
    pub pair_samples: usize,
    /// Start of the second walk relative to the first.
    #[serde(default = "defaults::pair_offset")]
    pub pair_offset: Vec<i64>,
    /// Backbone sites tested for the `S_2m` property; 0 skips the scan.
    #[serde(default)]
    pub s2m_sites: usize,
    /// Space between scanned sites along the first axis.
    #[serde(default = "defaults::s2m_spacing")]
    pub s2m_spacing: i64,
}

impl Default for TailSection {
    fn default() -> Self {
        TailSection {
            samples: defaults::tail_samples(),
            pair_samples: 0,
            pair_offset: defaults::pair_offset(),
            s2m_sites: 0,
            s2m_spacing: defaults::s2m_spacing(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingSection {
    pub mode: MixingMode,
    pub axis: MixingAxis,
    pub gaps: Vec<u64>,
    #[serde(default)]
    pub family: EventFamily,
    pub samples: usize,
    #[serde(default = "defaults::mixing_confidence")]
    pub confidence: f64,
    #[serde(default = "defaults::mixing_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default = "defaults::phi_min_prob")]
    pub phi_min_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairTvSection {
    /// Separations along the first axis; the second walk starts at `(s, 0, ...)`.
    pub separations: Vec<i64>,
    /// Samples per mode and separation.
    pub pairs: usize,
    #[serde(default)]
    pub summary: SummarySpec,
    #[serde(default = "defaults::tv_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default = "defaults::tv_confidence")]
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnulusSection {
    pub r1: f64,
    pub r2: f64,
    pub radii: Vec<f64>,
    pub pairs: usize,
    /// Covariance used for whitening; the identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub skeleton: Skeleton,
    #[serde(default = "defaults::min_radius")]
    pub min_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub windows: Vec<Window>,
    /// Walks per sampler and window.
    pub runs: usize,
    #[serde(default)]
    pub start: Site,
}

mod defaults {
    pub fn one() -> usize {
        1
    }
    pub fn m() -> u32 {
        1
    }
    pub fn budget() -> u64 {
        opcwalk_core::regeneration::DEFAULT_STEP_BUDGET
    }
    pub fn rejection_cap() -> u64 {
        100_000
    }
    pub fn regenerations() -> usize {
        1000
    }
    pub fn lag_cutoff() -> usize {
        opcwalk_core::regeneration::DEFAULT_LAG_CUTOFF
    }
    pub fn drift_increments() -> usize {
        10_000
    }
    pub fn tail_samples() -> usize {
        10_000
    }
    pub fn pair_offset() -> Vec<i64> {
        vec![2]
    }
    pub fn s2m_spacing() -> i64 {
        8
    }
    pub fn mixing_confidence() -> f64 {
        0.999
    }
    pub fn mixing_resamples() -> usize {
        5000
    }
    pub fn phi_min_prob() -> f64 {
        0.05
    }
    pub fn tv_resamples() -> usize {
        200
    }
    pub fn tv_confidence() -> f64 {
        0.95
    }
    pub fn min_radius() -> f64 {
        opcwalk_core::pairwalk::DEFAULT_MIN_RADIUS
    }
}

/// One schema violation, located by JSON pointer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl ConfigError {
    fn new(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { pointer: pointer.into(), message: message.into() }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", if self.pointer.is_empty() { "/" } else { &self.pointer }, self.message)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub command: Option<Command>,
    pub output_dir: Option<PathBuf>,
    pub master_seed: Option<u64>,
}

/// Parses and validates a config, filling defaults. Every violation found is
/// reported; type errors stop the typed checks but not the range checks.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig, Vec<ConfigError>> {
    validate_with(raw, &Overrides::default())
}

pub fn validate_with(raw: &str, overrides: &Overrides) -> Result<ExperimentConfig, Vec<ConfigError>> {
    let mut value: Value = serde_json::from_str(raw).map_err(|e| vec![ConfigError::new("", format!("invalid JSON: {e}"))])?;
    let Some(obj) = value.as_object_mut() else {
        return Err(vec![ConfigError::new("", "config must be a JSON object")]);
    };
    let mut errors = Vec::new();
    if let Some(cmd) = overrides.command {
        match obj.get("command") {
            Some(Value::String(s)) if s != cmd.name() => {
                errors.push(ConfigError::new("/command", format!("config is for `{s}` but `{}` was requested", cmd.name())));
            }
            _ => {
                obj.insert("command".into(), Value::String(cmd.name().into()));
            }
        }
    }
    if let Some(dir) = &overrides.output_dir {
        obj.insert("output_dir".into(), Value::String(dir.to_string_lossy().into_owned()));
    }
    if let Some(seed) = overrides.master_seed {
        obj.insert("master_seed".into(), Value::from(seed));
    }
    range_checks(&value, &mut errors);
    let parsed: Result<ExperimentConfig, _> = serde_path_to_error::deserialize(value);
    let mut cfg = match parsed {
        Ok(cfg) => cfg,
        Err(e) => {
            let pointer = pointer_of(e.path(), &e.inner().to_string());
            errors.push(ConfigError::new(pointer, e.inner().to_string()));
            return Err(errors);
        }
    };
    typed_checks(&mut cfg, &mut errors);
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}

/// Converts a serde path to a JSON pointer. Missing and unknown fields are
/// reported by serde at their parent, so the field name is appended.
fn pointer_of(path: &serde_path_to_error::Path, message: &str) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } | Segment::Enum { variant: key } => {
                out.push('/');
                out.push_str(&key.replace('~', "~0").replace('/', "~1"));
            }
            Segment::Unknown => {}
        }
    }
    for prefix in ["missing field `", "unknown field `"] {
        if let Some(rest) = message.strip_prefix(prefix) {
            if let Some(name) = rest.split('`').next().filter(|n| !out.ends_with(&format!("/{n}"))) {
                out.push('/');
                out.push_str(name);
            }
        }
    }
    out
}

fn range_checks(v: &Value, errors: &mut Vec<ConfigError>) {
    let at = |p: &str| v.pointer(p);
    if let Some(d) = at("/lattice/d").and_then(Value::as_i64) {
        if !(1..=MAX_DIM as i64).contains(&d) {
            errors.push(ConfigError::new("/lattice/d", format!("d must be in 1..={MAX_DIM}, got {d}")));
        }
    }
    if let Some(p) = at("/lattice/p").and_then(Value::as_f64) {
        if !(p > 0.0 && p <= 1.0) {
            errors.push(ConfigError::new("/lattice/p", format!("p must be in (0, 1], got {p}")));
        }
    }
    for ptr in ["/lattice/horizon", "/m", "/replicas", "/environments", "/budget", "/rejection_cap"] {
        if let Some(x) = at(ptr).and_then(Value::as_f64) {
            if x < 1.0 {
                errors.push(ConfigError::new(ptr, format!("must be a positive count, got {x}")));
            }
        }
    }
    // Zero means "not set"; commands that need steps say so later.
    if let Some(x) = at("/steps").and_then(Value::as_f64) {
        if x < 0.0 {
            errors.push(ConfigError::new("/steps", format!("must be non-negative, got {x}")));
        }
    }
}

fn typed_checks(cfg: &mut ExperimentConfig, errors: &mut Vec<ConfigError>) {
    let d = cfg.lattice.d;
    let mut err = |p: &str, m: String| errors.push(ConfigError::new(p, m));
    if cfg.lattice.validate().is_err() {
        // Already reported by the range checks.
        return;
    }
    if let Err(e) = cfg.weight_spec.validate(d) {
        let field = match &cfg.weight_spec {
            WeightFieldSpec::Constant { .. } => "/weight_spec/value",
            WeightFieldSpec::Iid { .. } | WeightFieldSpec::MDependent { .. } => "/weight_spec/a",
            WeightFieldSpec::TimeMarkov { .. } => "/weight_spec/transition",
            WeightFieldSpec::Berger => "/weight_spec/kind",
        };
        err(field, e.to_string());
    }
    if cfg.output_dir.is_none() {
        err("/output_dir", "no output directory: set output_dir or pass --out".into());
    }
    if cfg.command.needs_steps() && cfg.steps == 0 {
        err("/steps", format!("required for command {}", cfg.command.name()));
    }
    let positive = |x: usize| x > 0;
    match cfg.command {
        Command::Drift => {
            let s = cfg.drift.get_or_insert_with(DriftSection::default);
            if !positive(s.regenerations) {
                err("/drift/regenerations", "must be positive".into());
            }
            if cfg.lattice.p >= 1.0 && cfg.steps == 0 {
                err("/steps", "p = 1 has no regenerations; drift is the ergodic average over `steps` steps".into());
            }
        }
        Command::Clt | Command::QuenchedClt => {
            if cfg.replicas < MIN_NORMALITY_SAMPLES {
                err("/replicas", format!("normality checks need at least {MIN_NORMALITY_SAMPLES} walks, got {}", cfg.replicas));
            }
            let s = cfg.clt.get_or_insert_with(CltSection::default);
            if !positive(s.drift_increments) {
                err("/clt/drift_increments", "must be positive".into());
            }
        }
        Command::Tail => {
            let s = cfg.tail.get_or_insert_with(TailSection::default);
            if cfg.lattice.p >= 1.0 {
                err("/lattice/p", "regeneration needs closed sites; p must be < 1".into());
            }
            if s.samples < opcwalk_core::regeneration::MIN_TAIL_SAMPLES {
                err("/tail/samples", format!("need at least {} samples", opcwalk_core::regeneration::MIN_TAIL_SAMPLES));
            }
            if s.pair_samples > 0 && s.pair_samples < opcwalk_core::regeneration::MIN_TAIL_SAMPLES {
                err("/tail/pair_samples", format!("0 or at least {} samples", opcwalk_core::regeneration::MIN_TAIL_SAMPLES));
            }
            if s.pair_offset.len() > d {
                err("/tail/pair_offset", format!("at most {d} coordinates"));
            }
            if s.s2m_spacing < 1 {
                err("/tail/s2m_spacing", "must be positive".into());
            }
        }
        Command::Mixing => match &cfg.mixing {
            None => err("/mixing", "required for command mixing".into()),
            Some(s) => {
                if s.gaps.is_empty() {
                    err("/mixing/gaps", "at least one gap".into());
                }
                if !(s.confidence > 0.0 && s.confidence < 1.0) {
                    err("/mixing/confidence", "must be in (0, 1)".into());
                }
                if !positive(s.samples) {
                    err("/mixing/samples", "must be positive".into());
                }
            }
        },
        Command::PairTv => match &cfg.pair_tv {
            None => err("/pair_tv", "required for command pair-tv".into()),
            Some(s) => {
                if s.separations.is_empty() {
                    err("/pair_tv/separations", "at least one separation".into());
                }
                if s.pairs < 1000 {
                    err("/pair_tv/pairs", "at least 1000 pairs per separation".into());
                }
                if let Err(e) = s.summary.validate() {
                    err("/pair_tv/summary", e.to_string());
                }
                if !(s.confidence > 0.0 && s.confidence < 1.0) {
                    err("/pair_tv/confidence", "must be in (0, 1)".into());
                }
                if d < 2 {
                    err("/lattice/d", "pair walks need d >= 2".into());
                }
            }
        },
        Command::Annulus => match &cfg.annulus {
            None => err("/annulus", "required for command annulus".into()),
            Some(s) => {
                if !(s.r1 > 0.0 && s.r2 > s.r1) {
                    err("/annulus/r2", "need 0 < r1 < r2".into());
                }
                for (i, r) in s.radii.iter().enumerate() {
                    if !(*r > s.r1 && *r < s.r2) {
                        err(&format!("/annulus/radii/{i}"), format!("radius {r} is not inside ({}, {})", s.r1, s.r2));
                    }
                }
                if s.radii.is_empty() {
                    err("/annulus/radii", "at least one radius".into());
                }
                if !positive(s.pairs) {
                    err("/annulus/pairs", "must be positive".into());
                }
                if let Some(sigma) = &s.sigma {
                    if sigma.len() != d || sigma.iter().any(|r| r.len() != d) {
                        err("/annulus/sigma", format!("must be {d} x {d}"));
                    }
                }
                if d < 2 {
                    err("/lattice/d", "the annulus experiment needs d >= 2".into());
                }
            }
        },
        Command::OracleCheck => match &cfg.oracle {
            None => err("/oracle", "required for command oracle-check".into()),
            Some(s) => {
                if s.windows.is_empty() {
                    err("/oracle/windows", "at least one window".into());
                }
                for (i, w) in s.windows.iter().enumerate() {
                    if w.lo.len() != d || w.hi.len() != d {
                        err(&format!("/oracle/windows/{i}"), format!("lo and hi need {d} coordinates"));
                    }
                }
                if !positive(s.runs) {
                    err("/oracle/runs", "must be positive".into());
                }
                if cfg.weight_spec != WeightFieldSpec::constant(1.0) {
                    err("/weight_spec", "oracle-check weighs sites through the windows; the base field must be constant 1".into());
                }
            }
        },
        Command::Berger => {
            if cfg.weight_spec != WeightFieldSpec::Berger {
                err("/weight_spec/kind", "command berger needs the berger field".into());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pointers(raw: &str) -> Vec<String> {
        validate_config(raw).unwrap_err().into_iter().map(|e| e.pointer).collect()
    }

    #[test]
    fn bad_p_is_located() {
        let p = pointers(r#"{"command":"drift","lattice":{"d":1,"p":1.5},"output_dir":"x"}"#);
        assert_eq!(p, vec!["/lattice/p"]);
    }

    #[test]
    fn missing_kind_is_located() {
        let p = pointers(r#"{"command":"drift","lattice":{"d":1,"p":0.8},"weight_spec":{"value":1.0},"output_dir":"x"}"#);
        assert_eq!(p, vec!["/weight_spec/kind"]);
    }

    #[test]
    fn range_errors_survive_type_errors() {
        let p = pointers(r#"{"command":"drift","lattice":{"d":9,"p":-1},"replicas":"ten","output_dir":"x"}"#);
        assert!(p.contains(&"/lattice/d".to_string()));
        assert!(p.contains(&"/lattice/p".to_string()));
        assert!(p.contains(&"/replicas".to_string()));
    }

    #[test]
    fn unknown_fields_are_located() {
        let p = pointers(r#"{"command":"drift","lattice":{"d":1,"p":0.8,"q":1},"output_dir":"x"}"#);
        assert_eq!(p, vec!["/lattice/q"]);
    }

    #[test]
    fn nested_type_errors_have_index_paths() {
        let p = pointers(
            r#"{"command":"oracle-check","lattice":{"d":1,"p":1},"steps":2,"output_dir":"x",
                "oracle":{"runs":10,"windows":[{"t_end":3,"lo":[0],"hi":[1]},{"t_end":"late","lo":[0],"hi":[1]}]}}"#,
        );
        assert_eq!(p, vec!["/oracle/windows/1/t_end"]);
    }

    #[test]
    fn command_specific_sections_are_required() {
        assert_eq!(pointers(r#"{"command":"pair-tv","lattice":{"d":2,"p":0.8},"output_dir":"x"}"#), vec!["/pair_tv"]);
        assert_eq!(pointers(r#"{"command":"clt","lattice":{"d":1,"p":0.8},"output_dir":"x"}"#), vec!["/steps", "/replicas"]);
    }

    #[test]
    fn minimal_config_echoes_with_defaults() {
        let cfg = validate_config(r#"{"command":"drift","lattice":{"d":1,"p":0.8},"output_dir":"out"}"#).unwrap();
        let echo = serde_json::to_value(&cfg).unwrap();
        let expected = serde_json::json!({
            "command": "drift",
            "lattice": {"d": 1, "neighborhood": "corners", "p": 0.8, "horizon": 50},
            "weight_spec": {"kind": "constant", "value": 1.0},
            "m": 1, "steps": 0, "replicas": 1, "environments": 1, "master_seed": 0,
            "output_dir": "out", "budget": 10_000_000, "rejection_cap": 100_000,
            "drift": {"regenerations": 1000, "lag_cutoff": 20}
        });
        assert_eq!(echo, expected);
        // The echo is itself a valid config with the same meaning.
        assert_eq!(validate_config(&echo.to_string()).unwrap(), cfg);
    }

    #[test]
    fn overrides_win() {
        let o = Overrides { command: Some(Command::Drift), output_dir: Some("o2".into()), master_seed: Some(9) };
        let cfg = validate_with(r#"{"lattice":{"d":1,"p":0.8},"master_seed":1}"#, &o).unwrap();
        assert_eq!((cfg.command, cfg.master_seed, cfg.output_dir.unwrap()), (Command::Drift, 9, PathBuf::from("o2")));
        let o = Overrides { command: Some(Command::Tail), ..Overrides::default() };
        let err = validate_with(r#"{"command":"drift","lattice":{"d":1,"p":0.8},"output_dir":"x"}"#, &o).unwrap_err();
        assert_eq!(err[0].pointer, "/command");
    }
}
