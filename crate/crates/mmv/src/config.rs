//! Run configuration: one TOML document per experiment.
//!
//! ```toml
//! output_dir = "out/ou"
//! theta = 0.5            # optional
//!
//! [model]
//! family = "ou_tanh"     # black_scholes | constant | ou_tanh | affine
//! kappa = 1.0
//! beta = 0.5
//! sigma0 = 0.2
//! lambda0 = 0.3
//! lambda1 = 0.1
//! r = 0.02
//! rho = 0.5
//! horizon = 1.0
//!
//! [grid]
//! z_lo = -6.0
//! z_hi = 6.0
//! n_z = 401
//! n_t = 401
//! ```
//!
//! Every other section is optional. See `configs/` for complete files.

use std::path::{Path, PathBuf};

use mmv_core::game::ControlBox;
use mmv_core::oracle::OracleScheme;
use mmv_core::{Anchor, Error as CoreError, FactorMarketModel, GridSpec, McConfig, ModelFamily};
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    /// Constant coefficients parameterized by market price of risk.
    BlackScholes { lambda: f64, sigma: f64 },
    Constant {
        mu: f64,
        sigma: f64,
        #[serde(default)]
        a: f64,
        #[serde(default)]
        b: f64,
    },
    OuTanh {
        kappa: f64,
        #[serde(default)]
        mean_level: f64,
        beta: f64,
        sigma0: f64,
        lambda0: f64,
        lambda1: f64,
    },
    Affine {
        mu: [f64; 2],
        sigma: [f64; 2],
        a: [f64; 2],
        b: [f64; 2],
    },
}

#[derive(Debug, Clone, Deserialize)]
pub struct ModelSection {
    #[serde(flatten)]
    pub family: FamilySpec,
    pub r: f64,
    pub rho: f64,
    pub horizon: f64,
    /// `[z_lo, z_hi]` for the assumption audit; defaults to the grid.
    pub audit_domain: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub z_lo: f64,
    pub z_hi: f64,
    pub n_z: usize,
    pub n_t: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            n_paths: 10_000,
            n_steps: 256,
            seed: DEFAULT_SEED,
            antithetic: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorSection {
    pub x0: f64,
    pub y0: f64,
    pub z0: f64,
    pub t0: f64,
}

impl Default for AnchorSection {
    fn default() -> Self {
        AnchorSection {
            x0: 1.0,
            y0: 0.5,
            z0: 0.0,
            t0: 0.0,
        }
    }
}

/// Optional overrides. Absent entries fall back to the defaults below.
#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSection {
    /// Max-norm of the nonlinear residual accepted by `solve` (1e-4).
    pub residual: Option<f64>,
    /// HJBI certificate tolerance; default `max(1e-3, 10 * residual)`.
    pub epsilon: Option<f64>,
    /// Pathwise reduction identity at the finest level (1e-2).
    pub reduction: Option<f64>,
    /// Relative strategy gap in `compare-mv` (1e-6).
    pub strategy: Option<f64>,
    /// Standard-error multiple for Monte Carlo checks (3).
    pub z_score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub residual: f64,
    pub epsilon: Option<f64>,
    pub reduction: f64,
    pub strategy: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Euler,
    #[default]
    Richardson,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    /// `(z, t)` probe points.
    pub probes: Vec<[f64; 2]>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub scheme: SchemeName,
    /// Finer grid for the comparison; defaults to `[grid]`.
    pub grid: Option<GridSection>,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            probes: vec![[0.0, 0.0], [0.5, 0.0], [-0.5, 0.25], [1.0, 0.5], [-1.0, 0.75]],
            n_paths: 200_000,
            n_steps: 256,
            scheme: SchemeName::Richardson,
            grid: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub n_z: usize,
    pub n_t: usize,
    /// Distance from the z-boundary in grid steps.
    pub margin: usize,
    pub ys: Vec<f64>,
    pub n_scan: usize,
    pub eta_lo: f64,
    pub eta_hi: f64,
    pub pi_multiple: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        let b = ControlBox::default();
        VerifySection {
            n_z: 21,
            n_t: 11,
            margin: 40,
            ys: vec![0.25, 0.5, 1.0, 2.0],
            n_scan: 41,
            eta_lo: b.eta_lo,
            eta_hi: b.eta_hi,
            pi_multiple: b.pi_multiple,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// Coarsest step count of the reduction-identity refinement.
    pub reduction_steps: usize,
    pub levels: usize,
    /// Stored-path bundles for the functional checks.
    pub bundle_paths: usize,
    pub bundle_steps: usize,
    /// Translation applied to `X_T`.
    pub shift: f64,
    pub run_certificate: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            reduction_steps: 128,
            levels: 4,
            bundle_paths: 4000,
            bundle_steps: 128,
            shift: 0.75,
            run_certificate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum MomentSource {
    #[default]
    Simulate,
    /// Constant-coefficient markets only.
    ClosedForm,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub n_z: usize,
    pub n_t: usize,
    pub margin: usize,
    /// Wealth at which strategies are compared; defaults to `x0 + 1`.
    pub x: Option<f64>,
    pub moments: MomentSource,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            n_z: 11,
            n_t: 6,
            margin: 40,
            x: None,
            moments: MomentSource::Simulate,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub output_dir: Option<PathBuf>,
    pub theta: Option<f64>,
    pub model: ModelSection,
    pub grid: GridSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub anchor: AnchorSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub compare: CompareSection,
}

/// Validated configuration with the core types already built.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: FactorMarketModel,
    pub audit_domain: (f64, f64),
    pub grid: GridSpec,
    pub mc: McConfig,
    pub anchor: Anchor,
    pub theta: Option<f64>,
    pub output_dir: PathBuf,
    pub tolerances: Tolerances,
    pub oracle_probes: Vec<(f64, f64)>,
    pub oracle_mc: McConfig,
    pub oracle_scheme: OracleScheme,
    pub oracle_grid: GridSpec,
    pub verify: VerifySection,
    pub control_box: ControlBox,
    pub simulate: SimulateSection,
    pub compare: CompareSection,
}

fn field(section: &str, e: CoreError) -> CliError {
    let (name, reason) = match &e {
        CoreError::InvalidParameter { name, reason } => ((*name).to_string(), (*reason).to_string()),
        other => ("value".to_string(), other.to_string()),
    };
    CliError::config(format!("{section}.{name}"), reason)
}

fn positive(name: &str, v: Option<f64>, default: f64) -> Result<f64, CliError> {
    match v {
        None => Ok(default),
        Some(x) if x > 0.0 && x.is_finite() => Ok(x),
        Some(_) => Err(CliError::config(format!("tolerances.{name}"), "must be positive")),
    }
}

fn grid_spec(section: &str, g: &GridSection) -> Result<GridSpec, CliError> {
    GridSpec::new(g.z_lo, g.z_hi, g.n_z, g.n_t).map_err(|e| field(section, e))
}

impl FamilySpec {
    fn build(&self, r: f64) -> ModelFamily {
        match *self {
            FamilySpec::BlackScholes { lambda, sigma } => ModelFamily::black_scholes(r, lambda, sigma),
            FamilySpec::Constant { mu, sigma, a, b } => ModelFamily::ConstantCoefficients { mu, sigma, a, b },
            FamilySpec::OuTanh {
                kappa,
                mean_level,
                beta,
                sigma0,
                lambda0,
                lambda1,
            } => ModelFamily::OuTanh {
                kappa,
                mean_level,
                beta,
                sigma0,
                lambda0,
                lambda1,
            },
            FamilySpec::Affine { mu, sigma, a, b } => ModelFamily::Affine { mu, sigma, a, b },
        }
    }
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| {
            let path = e.message().to_string();
            CliError::config(locate(&e, text), path)
        })
    }

    pub fn validate(self) -> Result<RunConfig, CliError> {
        let m = &self.model;
        let model = FactorMarketModel::new(m.family.build(m.r), m.r, m.rho, m.horizon).map_err(|e| field("model", e))?;
        let grid = grid_spec("grid", &self.grid)?;
        let audit_domain = match m.audit_domain {
            Some([lo, hi]) if lo < hi => (lo, hi),
            Some(_) => return Err(CliError::config("model.audit_domain", "needs z_lo < z_hi")),
            None => (grid.z_lo, grid.z_hi),
        };

        let mc = McConfig::new(self.mc.n_paths, self.mc.n_steps, self.mc.seed)
            .map_err(|e| field("mc", e))?
            .with_antithetic(self.mc.antithetic);
        let a = self.anchor;
        let anchor = Anchor::new(a.x0, a.y0, a.z0, a.t0).map_err(|e| field("anchor", e))?;
        if a.t0 >= model.horizon {
            return Err(CliError::config("anchor.t0", "must lie in [0, horizon)"));
        }
        if !grid_contains(&grid, a.z0) {
            return Err(CliError::config("anchor.z0", "must lie inside the grid"));
        }
        if let Some(th) = self.theta {
            if !(th > 0.0 && th.is_finite()) {
                return Err(CliError::config("theta", "must be positive"));
            }
        }

        let t = self.tolerances;
        let tolerances = Tolerances {
            residual: positive("residual", t.residual, 1e-4)?,
            epsilon: t.epsilon.map(|e| positive("epsilon", Some(e), 0.0)).transpose()?,
            reduction: positive("reduction", t.reduction, 1e-2)?,
            strategy: positive("strategy", t.strategy, 1e-6)?,
            z_score: positive("z_score", t.z_score, 3.0)?,
        };

        let o = &self.oracle;
        let oracle_mc = McConfig::new(o.n_paths, o.n_steps, self.mc.seed)
            .map_err(|e| field("oracle", e))?
            .with_antithetic(self.mc.antithetic);
        if o.scheme == SchemeName::Richardson && o.n_steps % 2 == 1 {
            return Err(CliError::config("oracle.n_steps", "must be even for the richardson scheme"));
        }
        let oracle_grid = match &o.grid {
            Some(g) => grid_spec("oracle.grid", g)?,
            None => grid,
        };
        for (k, p) in o.probes.iter().enumerate() {
            if !grid_contains(&oracle_grid, p[0]) || !(p[1] >= 0.0 && p[1] < model.horizon) {
                return Err(CliError::config(format!("oracle.probes[{k}]"), "must lie inside the grid with t in [0, T)"));
            }
        }

        let v = &self.verify;
        if v.ys.is_empty() || v.ys.iter().any(|y| !(*y > 0.0)) {
            return Err(CliError::config("verify.ys", "needs at least one positive y"));
        }
        if v.n_scan < 10 {
            return Err(CliError::config("verify.n_scan", "must be at least 10"));
        }
        if 2 * v.margin + 1 >= grid.n_z {
            return Err(CliError::config("verify.margin", "leaves no interior nodes"));
        }
        if !(v.eta_lo < v.eta_hi) || !(v.pi_multiple > 0.0) {
            return Err(CliError::config("verify.eta_lo", "needs eta_lo < eta_hi and pi_multiple > 0"));
        }
        let control_box = ControlBox {
            eta_lo: v.eta_lo,
            eta_hi: v.eta_hi,
            pi_multiple: v.pi_multiple,
        };

        let s = self.simulate;
        if s.levels == 0 || s.reduction_steps == 0 {
            return Err(CliError::config("simulate.levels", "levels and reduction_steps must be positive"));
        }
        if s.bundle_paths < 2 || s.bundle_steps == 0 {
            return Err(CliError::config("simulate.bundle_paths", "needs at least two paths and one step"));
        }
        if 2 * self.compare.margin + 1 >= grid.n_z {
            return Err(CliError::config("compare.margin", "leaves no interior nodes"));
        }

        Ok(RunConfig {
            model,
            audit_domain,
            grid,
            mc,
            anchor,
            theta: self.theta,
            output_dir: self.output_dir.unwrap_or_else(|| PathBuf::from("out")),
            tolerances,
            oracle_probes: o.probes.iter().map(|p| (p[0], p[1])).collect(),
            oracle_mc,
            oracle_scheme: match o.scheme {
                SchemeName::Euler => OracleScheme::Euler,
                SchemeName::Richardson => OracleScheme::Richardson,
            },
            oracle_grid,
            verify: self.verify,
            control_box,
            simulate: s,
            compare: self.compare,
        })
    }
}

fn grid_contains(g: &GridSpec, z: f64) -> bool {
    z >= g.z_lo && z <= g.z_hi
}

/// Dotted key path of a parse error, recovered from its span.
fn locate(e: &toml::de::Error, text: &str) -> String {
    let Some(span) = e.span() else {
        return "config".into();
    };
    let mut section = String::new();
    let mut key = String::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if offset > span.start {
            break;
        }
        if trimmed.starts_with('[') {
            section = trimmed.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = trimmed.split_once('=') {
            key = k.trim().to_string();
        }
        offset += line.len();
    }
    // A missing field is reported against the whole table, so name the
    // field from the message instead.
    if let Some(missing) = e.message().strip_prefix("missing field `") {
        key = missing.trim_end_matches('`').to_string();
    }
    match (section.is_empty(), key.is_empty()) {
        (true, true) => "config".into(),
        (true, false) => key,
        (false, true) => section,
        (false, false) => format!("{section}.{key}"),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        RawConfig::parse(&text)?.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        RawConfig::parse(text)?.validate()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.mc = self.mc.with_seed(seed);
        self.oracle_mc = self.oracle_mc.with_seed(seed);
        self
    }

    pub fn epsilon(&self, residual_max_norm: f64) -> f64 {
        self.tolerances
            .epsilon
            .unwrap_or_else(|| mmv_core::game::default_epsilon(residual_max_norm))
    }
}
