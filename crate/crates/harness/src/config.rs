//! Experiment configuration: JSON or TOML files, dotted-key overrides and a
//! canonical hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[default]
    BbmSweep,
    EigenSweep,
    Poincare,
    NonlocalBbm,
    InequalitySuite,
    Mu,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::BbmSweep => "bbm-sweep",
            Self::EigenSweep => "eigen-sweep",
            Self::Poincare => "poincare",
            Self::NonlocalBbm => "nonlocal-bbm",
            Self::InequalitySuite => "inequality-suite",
            Self::Mu => "mu",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "two")]
    pub p: f64,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub weight: WeightSpec,
    #[serde(default)]
    pub function: FunctionSpec,
    /// Kernel indices (`s` for fractional families, `k` otherwise), ascending.
    #[serde(default)]
    pub schedule: Vec<f64>,
    #[serde(default)]
    pub omega: OmegaSpec,
    #[serde(default)]
    pub energy: EnergySpec,
    #[serde(default)]
    pub eigen: EigenSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub bbm: BbmSpec,
    #[serde(default)]
    pub nonlocal: NonlocalSpec,
    #[serde(default)]
    pub poincare: PoincareSpec,
    #[serde(default)]
    pub suite: SuiteSpec,
    #[serde(default)]
    pub mu: MuSpec,
    /// Worker threads; `BBMLAB_WORKERS` takes precedence.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn two() -> f64 {
    2.0
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("empty config deserializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "one_usize")]
    pub dim: usize,
    /// Spacing; `h_log2` is used when absent.
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub h_log2: Option<i32>,
    /// Box `[-half_width, half_width]^N`; chosen from the support of `u` and
    /// the truncation radius when neither this nor `lo`/`hi` is given.
    #[serde(default)]
    pub half_width: Option<f64>,
    #[serde(default)]
    pub lo: Option<Vec<f64>>,
    #[serde(default)]
    pub hi: Option<Vec<f64>>,
}

fn one_usize() -> usize {
    1
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            dim: 1,
            h: None,
            h_log2: None,
            half_width: None,
            lo: None,
            hi: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IndexKindSpec {
    #[default]
    Integer,
    Fractional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `(1 - s) |z|^{(1 - s) p - N}`; `p` and `N` default to the experiment's.
    Fractional {
        #[serde(default)]
        p: Option<f64>,
        #[serde(default, rename = "N")]
        n: Option<usize>,
    },
    /// Radial profile tabulated on `radii`, one row of `values` per index.
    Table {
        #[serde(default)]
        indices: Option<Vec<f64>>,
        radii: Vec<f64>,
        values: Vec<Vec<f64>>,
        #[serde(default)]
        index_kind: IndexKindSpec,
    },
    /// Expression over `r = |z|`, `z1`, `z2` and the index `k` (alias `s`).
    Expr {
        expr: String,
        #[serde(default)]
        index_kind: IndexKindSpec,
    },
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::Fractional { p: None, n: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightSpec {
    #[default]
    One,
    /// `w(x, y) = f(x) f(y)`; `f` reads `x1`, `x2` (alias `x`), `f_k` also `k`.
    Product {
        f: String,
        #[serde(default)]
        f_k: Option<String>,
        /// Lipschitz constant of `f`.
        #[serde(default)]
        lipschitz: Option<f64>,
        #[serde(default)]
        sup: Option<f64>,
    },
    /// Pointwise `w` over `x1, x2, y1, y2` (aliases `x`, `y`); `w_k` also `k`.
    Expr {
        w: String,
        #[serde(default)]
        w_k: Option<String>,
        #[serde(default)]
        lipschitz: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FunctionSpec {
    Hat {
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default = "one_f64")]
        radius: f64,
    },
    Gaussian {
        #[serde(default = "one_f64")]
        sigma: f64,
    },
    Bump {
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default = "one_f64")]
        radius: f64,
    },
    SinPacket {
        #[serde(default = "pi")]
        freq: f64,
        #[serde(default)]
        lo: f64,
        #[serde(default = "one_f64")]
        hi: f64,
    },
    Beta {
        #[serde(default = "one_f64")]
        a: f64,
        #[serde(default = "one_f64")]
        b: f64,
        #[serde(default)]
        lo: f64,
        #[serde(default = "one_f64")]
        hi: f64,
    },
    IndicatorMollified {
        #[serde(default = "half")]
        half_width: f64,
        #[serde(default = "four")]
        j: f64,
    },
    Constant {
        #[serde(default = "one_f64")]
        value: f64,
    },
    /// A grid function in the `# dim,h,lo...,n...` CSV format; its grid
    /// replaces the configured one.
    Csv { path: String },
    /// Expression over `x1`, `x2` (alias `x`).
    Expr {
        expr: String,
        #[serde(default)]
        support_radius: Option<f64>,
    },
}

fn one_f64() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn four() -> f64 {
    4.0
}
fn pi() -> f64 {
    std::f64::consts::PI
}

impl Default for FunctionSpec {
    fn default() -> Self {
        Self::Hat {
            center: None,
            radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OmegaSpec {
    Interval {
        #[serde(default)]
        a: f64,
        #[serde(default = "one_f64")]
        b: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
}

impl Default for OmegaSpec {
    fn default() -> Self {
        Self::Interval { a: 0.0, b: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RuleSpec {
    #[default]
    SingularCorrected,
    Midpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySpec {
    #[serde(default = "eight")]
    pub truncation: f64,
    #[serde(default = "eighth")]
    pub delta: f64,
    #[serde(default)]
    pub rule: RuleSpec,
}

fn eight() -> f64 {
    8.0
}
fn eighth() -> f64 {
    0.125
}

impl Default for EnergySpec {
    fn default() -> Self {
        Self {
            truncation: 8.0,
            delta: 0.125,
            rule: RuleSpec::SingularCorrected,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SolverSpec {
    #[default]
    Auto,
    Matrix,
    Descent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenSpec {
    /// Cells per axis across the bounding box of Omega.
    #[serde(default = "n256")]
    pub n: usize,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default = "tol13")]
    pub tol: f64,
    #[serde(default = "iters")]
    pub max_iter: usize,
    /// Solve with the local limit energy instead of the nonlocal one.
    #[serde(default)]
    pub local: bool,
}

fn n256() -> usize {
    256
}
fn tol13() -> f64 {
    1e-13
}
fn iters() -> usize {
    20_000
}

impl Default for EigenSpec {
    fn default() -> Self {
        Self {
            n: 256,
            solver: SolverSpec::Auto,
            tol: 1e-13,
            max_iter: 20_000,
            local: false,
        }
    }
}

/// Row tolerance `target * rel_tol + abs_slack + far_tail + h_factor * h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "five_percent")]
    pub rel_tol: f64,
    #[serde(default)]
    pub abs_slack: f64,
    #[serde(default = "one_f64")]
    pub h_factor: f64,
    /// Require strictly decreasing gaps along the schedule.
    #[serde(default = "yes")]
    pub trend: bool,
    /// Sign-aligned eigenfunction distance allowed at the last index.
    #[serde(default = "tenth")]
    pub ef_tol: f64,
    /// Relative slack for inequalities that hold exactly at quadrature level.
    #[serde(default = "exact")]
    pub exact_rel: f64,
}

fn five_percent() -> f64 {
    0.05
}
fn yes() -> bool {
    true
}
fn tenth() -> f64 {
    0.1
}
fn exact() -> f64 {
    1e-10
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rel_tol: 0.05,
            abs_slack: 0.0,
            h_factor: 1.0,
            trend: true,
            ef_tol: 0.1,
            exact_rel: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Directory for `<stem>.csv` and `<stem>.json`; created when missing.
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default)]
    pub stem: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceKind {
    /// `u_k = u`.
    Identity,
    /// `u_k = u + phi / k` with a bump `phi`.
    Perturbed,
    /// `u_k = u * eta_j` with `j` growing with the index.
    Mollified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BbmSpec {
    #[serde(default = "all_sequences")]
    pub sequences: Vec<SequenceKind>,
}

fn all_sequences() -> Vec<SequenceKind> {
    vec![
        SequenceKind::Identity,
        SequenceKind::Perturbed,
        SequenceKind::Mollified,
    ]
}

impl Default for BbmSpec {
    fn default() -> Self {
        Self {
            sequences: all_sequences(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NonlocalVariant {
    /// `rho_k = (k / (k + 1)) kappa |z|^p`.
    #[default]
    Ramp,
    /// `rho_k = (1 + (-1)^k / (2k)) kappa |z|^p`.
    Dominated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlocalSpec {
    /// `kappa` over `r`, `z1`, `z2`.
    #[serde(default = "unit_ball")]
    pub kappa: String,
    #[serde(default)]
    pub variant: NonlocalVariant,
    /// Assert monotonicity in `k`; defaults to true for the ramp.
    #[serde(default)]
    pub monotone: Option<bool>,
}

fn unit_ball() -> String {
    "r < 1".into()
}

impl Default for NonlocalSpec {
    fn default() -> Self {
        Self {
            kappa: unit_ball(),
            variant: NonlocalVariant::Ramp,
            monotone: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoincareSpec {
    /// The constant `A`; the discrete local constant `1 / lambda` when absent.
    #[serde(default)]
    pub constant: Option<f64>,
    /// `eps = eps_factor * A`.
    #[serde(default = "tenth")]
    pub eps_factor: f64,
}

impl Default for PoincareSpec {
    fn default() -> Self {
        Self {
            constant: None,
            eps_factor: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    /// Weights exercised by every row family; `one` and `2 + cos` when empty.
    #[serde(default)]
    pub weights: Vec<WeightSpec>,
    /// Weight indices `k` for the weight-gap and `ell_R` rows.
    #[serde(default = "weight_indices")]
    pub weight_indices: Vec<f64>,
    #[serde(default = "shifts")]
    pub shifts: Vec<f64>,
    #[serde(default = "mollifier_indices")]
    pub mollifier_indices: Vec<u32>,
    #[serde(default = "two_thousand")]
    pub modulus_samples: usize,
    /// Multiple of `h` allowed on the translation estimates.
    #[serde(default = "two")]
    pub ftc_slack_h: f64,
    /// Mollification radii for the compactness rows.
    #[serde(default = "defect_radii")]
    pub defect_radii: Vec<f64>,
}

fn weight_indices() -> Vec<f64> {
    vec![10.0, 1000.0]
}
fn shifts() -> Vec<f64> {
    vec![0.0, 0.05, 0.1, 0.2]
}
fn mollifier_indices() -> Vec<u32> {
    vec![4, 16, 64]
}
fn two_thousand() -> usize {
    2000
}
fn defect_radii() -> Vec<f64> {
    vec![0.25, 0.125, 0.0625]
}

impl Default for SuiteSpec {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("empty suite spec deserializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuSpec {
    /// Ball radius for the near-origin masses.
    #[serde(default = "hundredth")]
    pub delta: f64,
    /// Radii `2^-l`, `l = l0..=l1`, for the double limit in 2D.
    #[serde(default = "l0")]
    pub l0: u32,
    #[serde(default = "l1")]
    pub l1: u32,
    #[serde(default = "sectors")]
    pub sectors: usize,
    /// Relative stabilization tolerance of the double limit.
    #[serde(default = "thousandth")]
    pub schedule_tol: f64,
    /// Absolute tolerance on per-direction masses (1D).
    #[serde(default = "hundredth")]
    pub mass_tol: f64,
    /// Relative spread allowed between sector masses of a radial family (2D).
    #[serde(default = "hundredth")]
    pub sector_tol: f64,
}

fn hundredth() -> f64 {
    0.01
}
fn thousandth() -> f64 {
    1e-3
}
fn l0() -> u32 {
    4
}
fn l1() -> u32 {
    6
}
fn sectors() -> usize {
    16
}

impl Default for MuSpec {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("empty mu spec deserializes")
    }
}

/// Reads a config as a JSON value. A saved report is accepted too: its
/// embedded `config` is returned.
pub fn read_value(path: &Path) -> Result<Value, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let parse_err = |detail: String| HarnessError::Config(format!("{}: {detail}", path.display()));
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    let v: Value = if is_toml {
        toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
    } else {
        match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(je) => toml::from_str(&text)
                .map_err(|te| parse_err(format!("not JSON ({je}) nor TOML ({te})")))?,
        }
    };
    Ok(match v {
        Value::Object(mut m) if m.contains_key("metadata") && m.contains_key("config") => {
            m.remove("config").unwrap_or(Value::Null)
        }
        v => v,
    })
}

/// Sets `a.b.c = value`; the value is parsed as JSON when possible and kept
/// as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), HarnessError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override '{assignment}' is not key=value")))?;
    let value =
        serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    set_path(root, key.trim(), value)
}

pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), HarnessError> {
    if key.is_empty() {
        return Err(HarnessError::Config("empty override key".into()));
    }
    if !root.is_object() {
        *root = Value::Object(Default::default());
    }
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = cur.as_object_mut().ok_or_else(|| {
            HarnessError::Config(format!("'{key}': '{part}' is inside a non-table value"))
        })?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cur = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if !cur.is_object() {
            *cur = Value::Object(Default::default());
        }
    }
    unreachable!("loop returns on the last key")
}

impl ExperimentConfig {
    pub fn from_value(v: Value) -> Result<Self, HarnessError> {
        let cfg: Self =
            serde_json::from_value(v).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut v = read_value(path)?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        Self::from_value(v)
    }

    /// Structural checks; the specs themselves are compiled by
    /// [`crate::specs::Resolved::new`].
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return bad(format!("p must be finite and >= 1, got {}", self.p));
        }
        if !(self.grid.dim == 1 || self.grid.dim == 2) {
            return bad(format!("grid.dim must be 1 or 2, got {}", self.grid.dim));
        }
        let needs_schedule = !matches!(self.kind, ExperimentKind::InequalitySuite);
        if needs_schedule && self.schedule.is_empty() {
            return bad(format!("{} needs a nonempty schedule", self.kind.name()));
        }
        if self.schedule.iter().any(|x| !x.is_finite()) {
            return bad("schedule entries must be finite".into());
        }
        if self.schedule.windows(2).any(|w| w[1] <= w[0]) {
            return bad("schedule must be strictly increasing".into());
        }
        if !(self.energy.truncation > 0.0) || !(self.energy.delta > 0.0 && self.energy.delta < 1.0)
        {
            return bad("energy.truncation must be positive and energy.delta in (0, 1)".into());
        }
        if self.eigen.n < 2 {
            return bad("eigen.n must be at least 2".into());
        }
        if !(self.tolerances.rel_tol >= 0.0) || !(self.tolerances.abs_slack >= 0.0) {
            return bad("tolerances must be nonnegative".into());
        }
        Ok(())
    }

    /// Compact JSON of the fully defaulted config.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`Self::canonical_json`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn stem(&self) -> String {
        self.output
            .stem
            .clone()
            .unwrap_or_else(|| self.kind.name().to_string())
    }
}
