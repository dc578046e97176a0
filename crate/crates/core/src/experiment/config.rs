//! Experiment configuration: TOML parsing with field/line diagnostics,
//! semantic validation and a stable content hash.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grid::GridContext;
use crate::operator::{OperatorSpec, Profile};
use crate::silt::CHEAP_SECOND_MOMENT_K;
use crate::simplex::snap_gap;

/// Largest grid accepted from a configuration file.
pub const MAX_GRID_N: usize = 4096;
/// Largest simplex dimension accepted from a configuration file.
pub const MAX_K: usize = 6;

/// Rejected configuration, located at a field and (when known) a line of the
/// source text.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub field: Option<String>,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error")?;
        if let Some(line) = self.line {
            write!(f, " at line {line}")?;
            if let Some(col) = self.column {
                write!(f, ", column {col}")?;
            }
        }
        if let Some(field) = &self.field {
            write!(f, " in `{field}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn field(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: Some(field.into()),
            line: None,
            column: None,
            message: message.into(),
        }
    }

    /// Fills in the line of the field's key in `source`, if it can be found.
    fn locate(mut self, source: &str) -> Self {
        if self.line.is_none() {
            if let Some(field) = &self.field {
                self.line = find_key_line(source, field);
            }
        }
        self
    }
}

/// 1-based line of the last path segment of `field` used as a key (or table
/// header for the first segment).
fn find_key_line(source: &str, field: &str) -> Option<usize> {
    let leaf = field.rsplit('.').next().unwrap_or(field);
    let leaf = leaf.split('[').next().unwrap_or(leaf);
    let head = field.split(['.', '[']).next().unwrap_or(field);
    let key_at = |line: &str, key: &str| {
        let t = line.trim_start();
        t.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    };
    source
        .lines()
        .position(|l| key_at(l, leaf))
        .or_else(|| {
            source.lines().position(|l| {
                let t = l.trim();
                t == format!("[{head}]") || t == format!("[[{head}]]") || key_at(l, head)
            })
        })
        .map(|i| i + 1)
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyOptions {
    /// Random instances per grid-space property suite.
    #[serde(default = "VerifyOptions::default_instances")]
    pub instances: usize,
    /// Random tuples per kernel audit.
    #[serde(default = "VerifyOptions::default_tuples")]
    pub audit_tuples: usize,
}

impl VerifyOptions {
    fn default_instances() -> usize {
        1000
    }
    fn default_tuples() -> usize {
        10_000
    }
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            instances: Self::default_instances(),
            audit_tuples: Self::default_tuples(),
        }
    }
}

/// Everything an experiment run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub operator: OperatorSpec,
    pub grid_n: usize,
    pub k: usize,
    pub delta: f64,
    pub eps_ladder: Vec<f64>,
    #[serde(default)]
    pub probes: Vec<Profile>,
    pub seed: u64,
    pub paths: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Grid for the second-moment tables (defaults to `grid_n`); the pair
    /// quadrature grows like the square of the simplex lattice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment_grid_n: Option<usize>,
    /// Allows second moments for `k > 3`.
    #[serde(default)]
    pub expensive: bool,
    #[serde(default)]
    pub verify: VerifyOptions,
}

impl Default for ExperimentConfig {
    /// Generalized bridge killing `1_[0,1/2]`, `k = 2`, `delta = 0.2`.
    fn default() -> Self {
        Self {
            operator: OperatorSpec::ProjectorComplement {
                directions: vec![Profile::Indicator { a: 0.0, b: 0.5 }],
            },
            grid_n: 64,
            k: 2,
            delta: 0.2,
            eps_ladder: vec![0.2, 0.1, 0.05, 0.025],
            probes: vec![Profile::Zero, Profile::Indicator { a: 0.0, b: 1.0 }],
            seed: 20_240_601,
            paths: 1000,
            output_dir: default_output_dir(),
            moment_grid_n: None,
            expensive: false,
            verify: VerifyOptions::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates TOML text.
    pub fn from_toml_str(source: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(source).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| line_col(source, s.start))
                .map_or((None, None), |(l, c)| (Some(l), Some(c)));
            ConfigError {
                field: None,
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate().map_err(|e| e.locate(source))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            field: None,
            line: None,
            column: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_toml_str(&source)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn moment_grid(&self) -> usize {
        self.moment_grid_n.unwrap_or(self.grid_n)
    }

    /// Semantic checks against the numerical preconditions.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.grid_n;
        if !(2..=MAX_GRID_N).contains(&n) {
            return Err(ConfigError::field(
                "grid_n",
                format!("must lie in [2, {MAX_GRID_N}], got {n}"),
            ));
        }
        if !(2..=MAX_K).contains(&self.k) {
            return Err(ConfigError::field(
                "k",
                format!("must lie in [2, {MAX_K}], got {}", self.k),
            ));
        }
        if self.k > CHEAP_SECOND_MOMENT_K && !self.expensive {
            return Err(ConfigError::field(
                "k",
                format!("k = {} needs `expensive = true` for second moments", self.k),
            ));
        }
        let d = self.delta;
        if !(d.is_finite() && d > 0.0 && d < 1.0) {
            return Err(ConfigError::field("delta", format!("must lie in (0, 1), got {d}")));
        }
        if let Some(m) = self.moment_grid_n {
            if !(2..=MAX_GRID_N).contains(&m) {
                return Err(ConfigError::field(
                    "moment_grid_n",
                    format!("must lie in [2, {MAX_GRID_N}], got {m}"),
                ));
            }
        }
        for (name, grid) in [("grid_n", n), ("moment_grid_n", self.moment_grid())] {
            check_simplex(name, grid, self.k, d)?;
        }
        if self.eps_ladder.len() < 3 {
            return Err(ConfigError::field(
                "eps_ladder",
                format!("needs at least 3 entries, got {}", self.eps_ladder.len()),
            ));
        }
        if let Some(e) = self.eps_ladder.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(ConfigError::field(
                "eps_ladder",
                format!("entries must be positive, got {e}"),
            ));
        }
        if self.eps_ladder.windows(2).any(|w| w[1] > w[0]) {
            return Err(ConfigError::field("eps_ladder", "must be nonincreasing"));
        }
        if self.paths < 2 {
            return Err(ConfigError::field(
                "paths",
                format!("needs at least 2 paths, got {}", self.paths),
            ));
        }
        if self.verify.instances == 0 || self.verify.audit_tuples == 0 {
            return Err(ConfigError::field("verify", "instance counts must be positive"));
        }
        self.operator
            .validate()
            .map_err(|e| ConfigError::field("operator", e.to_string()))?;
        let ctx = GridContext::new(n).map_err(|e| ConfigError::field("grid_n", e.to_string()))?;
        if let OperatorSpec::CustomMatrix { rows, .. } = &self.operator {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(ConfigError::field(
                    "operator.rows",
                    format!("must be a {n} x {n} matrix"),
                ));
            }
            if self.moment_grid() != n {
                return Err(ConfigError::field("moment_grid_n", "a custom matrix fixes the grid"));
            }
        }
        if let OperatorSpec::ProjectorComplement { directions } = &self.operator {
            for (i, d) in directions.iter().enumerate() {
                d.grid_function::<f64>(ctx)
                    .map_err(|e| ConfigError::field(&format!("operator.directions[{i}]"), e.to_string()))?;
            }
        }
        for (i, p) in self.probes.iter().enumerate() {
            p.grid_function::<f64>(ctx)
                .map_err(|e| ConfigError::field(&format!("probes[{i}]"), e.to_string()))?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding the output location.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("configuration serializes to JSON");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// The silt lattice and the coarsest refinement level must both be nonempty
/// with at least one cell of separation.
fn check_simplex(field: &str, n: usize, k: usize, delta: f64) -> Result<(), ConfigError> {
    if delta * (n as f64) < 2.0 - 1e-9 {
        return Err(ConfigError::field(
            "delta",
            format!(
                "delta = {delta} is below two cells of the {field} = {n} grid (2/n = {:.4})",
                2.0 / n as f64
            ),
        ));
    }
    let gap = snap_gap(delta, n);
    if (k - 1) * gap >= n {
        return Err(ConfigError::field(
            "delta",
            format!("the delta-simplex is empty for k = {k}, delta = {delta} on {field} = {n}"),
        ));
    }
    let coarse = if n.is_multiple_of(4) {
        n / 4
    } else if n.is_multiple_of(2) {
        n / 2
    } else {
        n
    };
    let gap0 = snap_gap(delta, coarse);
    if gap0 == 0 || (k - 1) * gap0 >= coarse {
        return Err(ConfigError::field(
            field,
            format!("coarsest refinement mesh {coarse} cannot resolve delta = {delta} for k = {k}"),
        ));
    }
    Ok(())
}

fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}
