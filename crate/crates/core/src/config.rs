//! Run configuration.
//!
//! The format is a TOML document restricted to `key = value` lines under
//! `[section]` headers:
//!
//! ```text
//! [gas]
//! gamma = 2.0
//! entropy_const = 0.5
//! bernoulli = 1.5
//!
//! [grid]
//! length = 1.0
//! n = 17            # or n1, n2, n3
//!
//! [boundary]
//! family = "cosine" # or "parallel_shear"
//! base_flux = 1.0
//! a2 = 0.0
//! a3 = 0.0
//! eps_kappa = 0.0
//! eps_b = 0.0
//!
//! [potential]
//! theta = 0.5
//! truncation = 16   # optional
//!
//! [critical]
//! m = "4,8,16"
//! thetas = "0.1,0.5,0.9"
//!
//! [euler]
//! theta = 0.5
//! fp_tol = 1e-8
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Every key is optional. Unknown sections and keys are errors.

use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::boundary::{BoundaryData, BoundaryFamily};
use crate::divcurl::DivCurlOptions;
use crate::euler::EulerConfig;
use crate::gas::{GasModel, Truncation};
use crate::grid::Grid;
use crate::potential::{CriticalOptions, PotentialOptions};
use crate::streamline::{DEFAULT_RK_TOL, DEFAULT_U1_FLOOR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("{}{key}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid {
        line: Option<usize>,
        key: String,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GasSection {
    pub gamma: f64,
    pub entropy_const: f64,
    pub bernoulli: f64,
}

impl Default for GasSection {
    fn default() -> Self {
        let g = GasModel::default();
        Self {
            gamma: g.gamma,
            entropy_const: g.entropy_const,
            bernoulli: g.bernoulli_const,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub length: f64,
    pub n: usize,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub n3: Option<usize>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            length: 1.0,
            n: 17,
            n1: None,
            n2: None,
            n3: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Cosine,
    ParallelShear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundarySection {
    pub family: FamilyName,
    pub base_flux: f64,
    pub a2: f64,
    pub a3: f64,
    pub eps_kappa: f64,
    pub eps_b: f64,
    pub speed: f64,
    pub delta: f64,
}

impl Default for BoundarySection {
    fn default() -> Self {
        Self {
            family: FamilyName::Cosine,
            base_flux: 1.0,
            a2: 0.0,
            a3: 0.0,
            eps_kappa: 0.0,
            eps_b: 0.0,
            speed: 0.3,
            delta: 0.1,
        }
    }
}

impl BoundarySection {
    pub fn family(&self) -> BoundaryFamily {
        match self.family {
            FamilyName::Cosine => BoundaryFamily::Cosine {
                base_flux: self.base_flux,
                a2: self.a2,
                a3: self.a3,
                eps_kappa: self.eps_kappa,
                eps_b: self.eps_b,
            },
            FamilyName::ParallelShear => BoundaryFamily::ParallelShear {
                speed: self.speed,
                delta: self.delta,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialSection {
    pub theta: f64,
    pub truncation: Option<u32>,
    pub tol: f64,
    pub max_picard: usize,
    pub relax: f64,
    pub linear_tol: f64,
}

impl Default for PotentialSection {
    fn default() -> Self {
        let o = PotentialOptions::default();
        Self {
            theta: 0.5,
            truncation: None,
            tol: o.tol,
            max_picard: o.max_picard,
            relax: o.relax,
            linear_tol: o.linear_tol,
        }
    }
}

impl PotentialSection {
    pub fn options(&self) -> PotentialOptions {
        PotentialOptions {
            tol: self.tol,
            max_picard: self.max_picard,
            relax: self.relax,
            linear_tol: self.linear_tol,
        }
    }
}

/// A list of numbers given either as a TOML array or as a comma-separated
/// string. Stored sorted ascending; duplicates are rejected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumberList(pub Vec<f64>);

impl NumberList {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let values = text
            .split(',')
            .map(|t| t.trim())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::from_values(values)
    }

    pub fn from_values(mut values: Vec<f64>) -> std::result::Result<Self, String> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err("list entries must be finite".into());
        }
        values.sort_by(f64::total_cmp);
        if values.windows(2).any(|w| w[0] == w[1]) {
            return Err("list contains duplicates".into());
        }
        Ok(Self(values))
    }
}

impl<'de> Deserialize<'de> for NumberList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Numbers(Vec<f64>),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Text(t) => NumberList::parse(&t),
            Raw::Numbers(v) => NumberList::from_values(v),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticalSection {
    pub m: NumberList,
    /// Flux multipliers of the Mach-number sweep.
    pub thetas: NumberList,
    pub bis_tol: f64,
    pub theta_start: f64,
    pub theta_max: f64,
}

impl Default for CriticalSection {
    fn default() -> Self {
        let c = CriticalOptions::default();
        Self {
            m: NumberList(vec![4.0, 8.0, 16.0]),
            thetas: NumberList(vec![]),
            bis_tol: c.bis_tol,
            theta_start: c.theta_start,
            theta_max: c.theta_max,
        }
    }
}

impl CriticalSection {
    pub fn options(&self) -> CriticalOptions {
        CriticalOptions {
            bis_tol: self.bis_tol,
            theta_start: self.theta_start,
            theta_max: self.theta_max,
        }
    }

    pub fn truncations(&self) -> Vec<u32> {
        self.m.0.iter().map(|&m| m as u32).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EulerSection {
    /// Multiplier applied to the boundary mass flux.
    pub theta: f64,
    pub fp_tol: f64,
    pub max_outer: usize,
    pub underrelax: f64,
    pub sigma_fraction: f64,
    pub rk_tol: f64,
    pub ode_tol: f64,
    pub u1_floor: f64,
    pub divcurl_tol: f64,
    pub divcurl_relax: f64,
    pub divcurl_max_picard: usize,
}

impl Default for EulerSection {
    fn default() -> Self {
        let e = EulerConfig::default();
        Self {
            theta: 0.5,
            fp_tol: e.fp_tol,
            max_outer: e.max_outer,
            underrelax: e.underrelax,
            sigma_fraction: e.sigma_fraction,
            rk_tol: e.rk_tol,
            ode_tol: e.ode_tol,
            u1_floor: e.u1_floor,
            divcurl_tol: e.divcurl.tol,
            divcurl_relax: e.divcurl.relax,
            divcurl_max_picard: e.divcurl.max_picard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamlineSection {
    pub rk_tol: f64,
    pub u1_floor: f64,
}

impl Default for StreamlineSection {
    fn default() -> Self {
        Self {
            rk_tol: DEFAULT_RK_TOL,
            u1_floor: DEFAULT_U1_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write field CSV files in addition to the report.
    pub fields: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            fields: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub gas: GasSection,
    pub grid: GridSection,
    pub boundary: BoundarySection,
    pub potential: PotentialSection,
    pub critical: CriticalSection,
    pub euler: EulerSection,
    pub streamline: StreamlineSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn gas_model(&self) -> std::result::Result<GasModel, crate::gas::GasError> {
        GasModel::new(self.gas.gamma, self.gas.entropy_const, self.gas.bernoulli)
    }

    pub fn grid(&self) -> std::result::Result<Grid, crate::grid::GridError> {
        let g = &self.grid;
        Grid::new(
            g.length,
            g.n1.unwrap_or(g.n),
            g.n2.unwrap_or(g.n),
            g.n3.unwrap_or(g.n),
        )
    }

    pub fn boundary_data(&self) -> std::result::Result<BoundaryData, crate::boundary::BoundaryError> {
        let gas = self.gas_model()?;
        let grid = self
            .grid()
            .map_err(|e| crate::boundary::BoundaryError::InvalidParameters(e.to_string()))?;
        self.boundary.family().build(&grid, &gas)
    }

    pub fn euler_config(&self) -> EulerConfig {
        let e = &self.euler;
        EulerConfig {
            sigma_fraction: e.sigma_fraction,
            fp_tol: e.fp_tol,
            max_outer: e.max_outer,
            underrelax: e.underrelax,
            rk_tol: e.rk_tol,
            u1_floor: e.u1_floor,
            ode_tol: e.ode_tol,
            potential: self.potential.options(),
            divcurl: DivCurlOptions {
                tol: e.divcurl_tol,
                relax: e.divcurl_relax,
                max_picard: e.divcurl_max_picard,
                ..DivCurlOptions::default()
            },
            ..EulerConfig::default()
        }
    }

    /// Run every validator the solvers rely on.
    pub fn validate(&self, text: &str) -> Result<()> {
        let invalid = |section: &str, key: &str, message: String| ConfigError::Invalid {
            line: locate(text, section, key),
            key: format!("{section}.{key}"),
            message,
        };
        self.gas_model().map_err(|e| {
            let key = if !(self.gas.gamma > 1.0) {
                "gamma"
            } else if !(self.gas.entropy_const > 0.0) {
                "entropy_const"
            } else {
                "bernoulli"
            };
            invalid("gas", key, e.to_string())
        })?;
        self.grid().map_err(|e| invalid("grid", "n", e.to_string()))?;
        self.boundary_data()
            .map_err(|e| invalid("boundary", "family", e.to_string()))?;
        let p = &self.potential;
        if !(p.theta >= 0.0) {
            return Err(invalid("potential", "theta", "must be non-negative".into()));
        }
        if let Some(m) = p.truncation {
            Truncation::new(m).map_err(|e| invalid("potential", "truncation", e.to_string()))?;
        }
        if !(p.tol > 0.0) || !(p.linear_tol > 0.0) {
            return Err(invalid("potential", "tol", "tolerances must be positive".into()));
        }
        if !(p.relax > 0.0 && p.relax <= 1.0) {
            return Err(invalid("potential", "relax", "must lie in (0, 1]".into()));
        }
        let c = &self.critical;
        for &m in &c.m.0 {
            if m.fract() != 0.0 || Truncation::new(m as u32).is_err() || m < 0.0 {
                return Err(invalid("critical", "m", format!("{m} is not an integer ≥ 2")));
            }
        }
        if c.thetas.0.iter().any(|&t| t < 0.0) {
            return Err(invalid("critical", "thetas", "must be non-negative".into()));
        }
        if !(c.bis_tol > 0.0) || !(c.theta_start > 0.0) || !(c.theta_max > c.theta_start) {
            return Err(invalid(
                "critical",
                "theta_max",
                "need bis_tol > 0 and 0 < theta_start < theta_max".into(),
            ));
        }
        if !(self.euler.theta > 0.0) {
            return Err(invalid("euler", "theta", "must be positive".into()));
        }
        self.euler_config()
            .validate()
            .map_err(|e| invalid("euler", "fp_tol", e.to_string()))?;
        if !(self.streamline.rk_tol > 0.0) || !(self.streamline.u1_floor > 0.0) {
            return Err(invalid("streamline", "rk_tol", "must be positive".into()));
        }
        Ok(())
    }
}

/// Line of `key` inside `[section]`, 1-based.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (n, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(s) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = s.trim().to_string();
        } else if current == section && t.split('=').next().map(str::trim) == Some(key) {
            return Some(n + 1);
        }
    }
    None
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn parse_error(text: &str, e: toml::de::Error) -> ConfigError {
    let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(1);
    let message = e.message().to_string();
    if let Some(rest) = message.strip_prefix("unknown field `") {
        let key = rest.split('`').next().unwrap_or_default().to_string();
        return ConfigError::UnknownKey { line, key };
    }
    if message.starts_with("unknown variant") && message.contains("expected one of `cosine`") {
        return ConfigError::Invalid {
            line: Some(line),
            key: "boundary.family".into(),
            message,
        };
    }
    ConfigError::Syntax { line, message }
}

/// Apply `section.key=value` overrides to the document before decoding.
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String> {
    if overrides.is_empty() {
        return Ok(text.to_string());
    }
    let mut doc: toml::Table = text.parse().map_err(|e| parse_error(text, e))?;
    for o in overrides {
        let bad = |message: &str| ConfigError::Invalid {
            line: None,
            key: o.clone(),
            message: message.to_string(),
        };
        let (path, value) = o.split_once('=').ok_or_else(|| bad("expected section.key=value"))?;
        let (section, key) = path.trim().split_once('.').ok_or_else(|| bad("expected section.key=value"))?;
        let value = value.trim();
        let parsed: toml::Value = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let table = doc
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match table {
            toml::Value::Table(t) => {
                t.insert(key.to_string(), parsed);
            }
            _ => return Err(bad("not a section")),
        }
    }
    Ok(toml::to_string(&doc).expect("tables always serialize"))
}

/// Parse and validate a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    cfg.validate(text)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.grid().unwrap().n, [17, 17, 17]);
    }

    #[test]
    fn minimal_config() {
        let cfg = parse_config("[grid]\nn = 9\n[potential]\ntheta = 0.25\n").unwrap();
        assert_eq!(cfg.grid.n, 9);
        assert_eq!(cfg.potential.theta, 0.25);
        assert_eq!(cfg.potential.tol, 1e-10);
    }

    #[test]
    fn gamma_below_one_rejected() {
        let text = "[gas]\ngamma = 0.9\n";
        match parse_config(text) {
            Err(ConfigError::Invalid { line, key, .. }) => {
                assert_eq!(line, Some(2));
                assert_eq!(key, "gas.gamma");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = "[grid]\nn = 9\nsize = 3\n";
        assert_eq!(
            parse_config(text),
            Err(ConfigError::UnknownKey {
                line: 3,
                key: "size".into()
            })
        );
        assert!(matches!(parse_config("[nope]\nx = 1\n"), Err(ConfigError::UnknownKey { .. })));
    }

    #[test]
    fn syntax_error_reports_line() {
        match parse_config("[grid]\nn = 9\nlength = \n") {
            Err(ConfigError::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn theta_lists() {
        let cfg = parse_config("[critical]\nthetas = \"0.9,0.1,0.5\"\n").unwrap();
        assert_eq!(cfg.critical.thetas.0, vec![0.1, 0.5, 0.9]);
        let cfg = parse_config("[critical]\nthetas = [0.5, 0.1]\n").unwrap();
        assert_eq!(cfg.critical.thetas.0, vec![0.1, 0.5]);
        assert!(parse_config("[critical]\nthetas = \"0.1,0.5,0.1\"\n").is_err());
        assert!(parse_config("[critical]\nm = \"4,1\"\n").is_err());
    }

    #[test]
    fn incompatible_boundary_rejected() {
        let text = "[boundary]\na2 = 0.7\na3 = 0.6\n";
        assert!(matches!(parse_config(text), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn overrides_replace_values() {
        let text = apply_overrides("[grid]\nn = 9\n", &["grid.n=5".into(), "euler.fp_tol=1e-6".into()]).unwrap();
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.grid.n, 5);
        assert_eq!(cfg.euler.fp_tol, 1e-6);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse_config("[boundary]\nfamily = \"parallel_shear\"\ndelta = 0.2\n").unwrap();
        let echo = toml::to_string(&cfg).unwrap();
        assert_eq!(parse_config(&echo).unwrap(), cfg);
    }
}
