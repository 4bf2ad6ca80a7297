//! Experiment configuration files.
//!
//! Configs are TOML documents. Every table rejects unknown keys, and the
//! canonical serialization (used for the config hash) parses back to an
//! identical value.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Lyapunov,
    Filtration,
    Splitting,
    Regularity,
    Busemann,
    Drift,
    Ncet,
    Tracking,
    DirectIntegral,
    MeanKingman,
    MzCheck,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Lyapunov => "lyapunov",
            Self::Filtration => "filtration",
            Self::Splitting => "splitting",
            Self::Regularity => "regularity",
            Self::Busemann => "busemann",
            Self::Drift => "drift",
            Self::Ncet => "ncet",
            Self::Tracking => "tracking",
            Self::DirectIntegral => "direct-integral",
            Self::MeanKingman => "mean-kingman",
            Self::MzCheck => "mz-check",
        }
    }

    fn needs_cocycle(self) -> bool {
        matches!(self, Self::Lyapunov | Self::Filtration | Self::Splitting | Self::Regularity | Self::Ncet)
    }

    fn needs_system(self) -> bool {
        self.needs_cocycle() || self == Self::MzCheck
    }

    /// Keys of `[params]` the experiment reads.
    fn params(self) -> &'static [&'static str] {
        match self {
            Self::Lyapunov => &["functorial", "trace"],
            Self::Filtration => &[],
            Self::Splitting => &["block-dim", "max-terms"],
            Self::Regularity => &["probe"],
            Self::Busemann => &["partition", "block-values", "points", "point-scale", "t-max"],
            Self::Drift => &["isometry", "check-steps"],
            Self::Ncet => &["trace"],
            Self::Tracking => &["orbit", "slopes", "noise", "direction"],
            Self::DirectIntegral => &["weights", "sigma", "tau", "isometry"],
            Self::MeanKingman => &["angles", "shifts"],
            Self::MzCheck => &["exponent", "observable"],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Orbit length `N`; every experiment except `busemann` needs one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<i64>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub format: Format,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cocycle: Option<CocycleSpec>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub params: Params,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum SystemSpec {
    Rotation { angle: f64 },
    Doubling,
    Bernoulli { probabilities: Vec<f64> },
    Markov {
        transition: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stationary: Option<Vec<f64>>,
    },
}

/// A matrix given row-major with explicit dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixSpec {
    pub fn to_matrix(&self, field: &str) -> Result<DMatrix<f64>, CliError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(CliError::validation(format!("{field}: rows and cols must be positive")));
        }
        if self.data.len() != self.rows * self.cols {
            return Err(CliError::validation(format!(
                "{field}: {} x {} matrix needs {} entries, got {}",
                self.rows,
                self.cols,
                self.rows * self.cols,
                self.data.len()
            )));
        }
        if let Some(x) = self.data.iter().find(|x| !x.is_finite()) {
            return Err(CliError::validation(format!("{field}: non-finite entry {x}")));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CocycleKind {
    /// `A(w) = matrices[0]`.
    Constant,
    /// `A(w) = matrices[w_0]` over a shift.
    BySymbol,
    /// One random symplectic matrix per symbol, drawn from `family-seed`.
    RandomSymplectic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TagSpec {
    #[default]
    None,
    Symplectic,
    Orthogonal,
    DeterminantOne,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodSpec {
    #[default]
    Qr,
    Svd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct CocycleSpec {
    pub kind: CocycleKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub matrices: Vec<MatrixSpec>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub tag: TagSpec,
    /// `(p, q)` of the indefinite form for `tag = "orthogonal"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genus: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub method: MethodSpec,
}

/// Experiment-specific parameters; each experiment reads its own subset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Params {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub functorial: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_terms: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partition: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub block_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isometry: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orbit: Option<OrbitKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slopes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub direction: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sigma: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tau: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub angles: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shifts: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<Observable>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrbitKind {
    /// `x_n = exp(n diag(slopes))`.
    DiagonalRay,
    /// `x_n = k exp(n diag(slopes)) k^T` with a seeded random rotation `k`.
    RotatedRay,
    /// Diagonal ray plus a trace-free diagonal perturbation of norm at most `noise`.
    NoisyDiagonal,
    /// `x_n = n v` in Euclidean space, `v = direction`.
    Translation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Observable {
    /// `tan(pi (x - 1/2))`, heavy-tailed with `E|f|^p < inf` exactly for `p < 1`.
    Cauchy,
    /// `x - 1/2`.
    Centered,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    /// `|value - expected| <= tolerance`.
    #[default]
    Within,
    /// `value - expected <= tolerance`.
    AtMost,
}

impl CheckKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Within => "within",
            Self::AtMost => "at-most",
        }
    }
}

/// Pass criterion applied by `met report` to every row of a quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Check {
    pub quantity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<u64>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub expected: f64,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "is_default")]
    pub kind: CheckKind,
}

impl Check {
    pub fn passes(&self, value: f64) -> bool {
        match self.kind {
            CheckKind::Within => (value - self.expected).abs() <= self.tolerance,
            CheckKind::AtMost => value - self.expected <= self.tolerance,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::validation(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Canonical TOML form; parses back to an equal config.
    pub fn to_canonical(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    /// The validated horizon; zero for experiments without one.
    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(0) as usize
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let exp = self.experiment;
        match (self.horizon, exp == Experiment::Busemann) {
            (Some(n), false) if n <= 0 => return Err(CliError::validation(format!("horizon must be positive, got {n}"))),
            (None, false) => return Err(CliError::validation(format!("experiment {exp} needs a horizon"))),
            (Some(_), true) => return Err(CliError::validation("experiment busemann does not use a horizon")),
            _ => {}
        }
        if self.seeds.is_empty() {
            return Err(CliError::validation("seeds must list at least one seed"));
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(CliError::validation("seeds must be distinct"));
        }
        if exp.needs_system() && self.system.is_none() {
            return Err(CliError::validation(format!("experiment {exp} needs a [system] table")));
        }
        if !exp.needs_system() && self.system.is_some() {
            return Err(CliError::validation(format!("experiment {exp} does not use a [system] table")));
        }
        if exp.needs_cocycle() != self.cocycle.is_some() {
            let verb = if exp.needs_cocycle() { "needs" } else { "does not use" };
            return Err(CliError::validation(format!("experiment {exp} {verb} a [cocycle] table")));
        }
        if let Some(SystemSpec::Rotation { angle }) = &self.system {
            if !angle.is_finite() {
                return Err(CliError::validation("system.angle must be finite"));
            }
        }
        self.validate_params()?;
        for (i, c) in self.checks.iter().enumerate() {
            if !(c.tolerance >= 0.0) || !c.tolerance.is_finite() {
                return Err(CliError::validation(format!("checks[{i}].tolerance must be non-negative and finite")));
            }
            if !c.expected.is_finite() {
                return Err(CliError::validation(format!("checks[{i}].expected must be finite")));
            }
            if c.quantity.is_empty() {
                return Err(CliError::validation(format!("checks[{i}].quantity must not be empty")));
            }
        }
        Ok(())
    }

    fn validate_params(&self) -> Result<(), CliError> {
        let allowed = self.experiment.params();
        let table = toml::Table::try_from(&self.params).expect("params serialize");
        if let Some(key) = table.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(CliError::validation(format!("params.{key} is not used by experiment {}", self.experiment)));
        }
        let p = &self.params;
        let positive_usize = [
            ("block-dim", p.block_dim),
            ("max-terms", p.max_terms),
            ("probe", p.probe),
            ("points", p.points),
            ("check-steps", p.check_steps),
        ];
        for (name, v) in positive_usize {
            if v == Some(0) {
                return Err(CliError::validation(format!("params.{name} must be positive")));
            }
        }
        for (name, v) in [("point-scale", p.point_scale), ("t-max", p.t_max), ("exponent", p.exponent)] {
            if let Some(x) = v {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(CliError::validation(format!("params.{name} must be positive, got {x}")));
                }
            }
        }
        if let Some(x) = p.noise {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(CliError::validation(format!("params.noise must be non-negative, got {x}")));
            }
        }
        if p.partition.contains(&0) {
            return Err(CliError::validation("params.partition entries must be positive"));
        }
        if p.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(CliError::validation("params.weights must be positive"));
        }
        Ok(())
    }
}
