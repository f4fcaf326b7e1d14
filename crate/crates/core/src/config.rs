//! TOML configuration shared by the command-line subcommands.
//!
//! ```toml
//! [model]
//! name = "example1"        # example1 | example2 | example3 | constant
//! # k = 2                  # predictor dimension where the model allows it
//!
//! [data]
//! gamma0 = [1.0, 1.0, 1.0, 1.0, 1.0]
//! n = 4000
//! z = { kind = "uniform", low = -1.0, high = 1.0 }
//! epsilon = { kind = "normal" }   # normal | student_t (nu > 4) | uniform
//! seed = 1                        # used by `simulate`
//!
//! [bounds]                        # optional; built-in default box otherwise
//! lower = [-2.0, 0.1, 0.1, 0.05, 0.05]
//! upper = [4.0, 3.0, 3.0, 4.0, 4.0]
//!
//! [estimator]
//! kind = "mde"                    # mde | mde2 | se
//! s = 100                         # draws per half for se
//! nu = 5.0                        # degrees of freedom of the t importance density
//! multistart = 5
//!
//! [study]
//! replications = 200
//! seed = 2024
//! threads = 0                     # 0 = all available cores
//! level = 0.95
//! ```

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::builtin;
use crate::datagen::{EpsDist, ModelChoice, ZDist};
use crate::error::{Error, Result};
use crate::estimator::{FitOptions, MomentMethod, WeightScheme};
use crate::model::{ModelSpec, ParamSpace};
use crate::quadrature::DEFAULT_ORDER;

pub fn load_toml<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub gamma0: Vec<f64>,
    pub n: usize,
    #[serde(default)]
    pub z: ZDist,
    #[serde(default)]
    pub epsilon: EpsDist,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn space(&self) -> Result<ParamSpace> {
        ParamSpace::new(self.lower.clone(), self.upper.clone())
    }
}

/// The box from `bounds`, or the built-in default for the model.
pub fn resolve_space(model: &ModelSpec, bounds: Option<&Bounds>) -> Result<ParamSpace> {
    let space = match bounds {
        Some(b) => b.space()?,
        None => builtin::default_space(model)?,
    };
    if space.dim() != model.dims().len() {
        return Err(Error::Config(format!(
            "bounds have {} coordinates, model '{}' has {}",
            space.dim(),
            model.name(),
            model.dims().len()
        )));
    }
    Ok(space)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Distance estimator with the identity weight.
    #[default]
    Mde,
    /// Two-stage distance estimator with `W = V̂⁻¹`.
    Mde2,
    /// Simulation-based estimator.
    Se,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mde" => Ok(EstimatorKind::Mde),
            "mde2" => Ok(EstimatorKind::Mde2),
            "se" => Ok(EstimatorKind::Se),
            other => Err(Error::Config(format!("unknown estimator '{other}' (expected mde, mde2 or se)"))),
        }
    }
}

fn default_s() -> usize {
    100
}

fn default_nu() -> f64 {
    5.0
}

fn default_multistart() -> usize {
    5
}

fn default_max_iterations() -> usize {
    2000
}

fn default_ftol() -> f64 {
    1e-10
}

fn default_xtol() -> f64 {
    1e-8
}

fn default_true() -> bool {
    true
}

fn default_order() -> usize {
    DEFAULT_ORDER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default)]
    pub kind: EstimatorKind,
    #[serde(default = "default_s")]
    pub s: usize,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_multistart")]
    pub multistart: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_ftol")]
    pub ftol: f64,
    #[serde(default = "default_xtol")]
    pub xtol: f64,
    #[serde(default = "default_true")]
    pub polish: bool,
    #[serde(default = "default_moments")]
    pub moments: MomentMethod,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_moments() -> MomentMethod {
    MomentMethod::Auto
}

impl Default for EstimatorSection {
    fn default() -> Self {
        toml::from_str("").expect("all estimator fields have defaults")
    }
}

impl EstimatorSection {
    pub fn fit_options(&self, seed: u64) -> FitOptions {
        FitOptions {
            weight: WeightScheme::Identity,
            two_stage: self.kind == EstimatorKind::Mde2,
            multistart_count: self.multistart,
            max_iterations: self.max_iterations,
            ftol: self.ftol,
            xtol: self.xtol,
            seed,
            polish: self.polish,
            moments: self.moments,
            quadrature_order: self.quadrature_order,
            inference: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == EstimatorKind::Se && self.s == 0 {
            return Err(Error::Config("s must be positive".into()));
        }
        if !(self.nu > 0.0) {
            return Err(Error::Config(format!("nu must be positive, got {}", self.nu)));
        }
        self.fit_options(self.seed).validate()
    }
}

fn default_replications() -> usize {
    100
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_level")]
    pub level: f64,
}

impl Default for StudySection {
    fn default() -> Self {
        toml::from_str("").expect("all study fields have defaults")
    }
}

/// A complete configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelChoice,
    pub data: DataSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Bounds>,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub study: StudySection,
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut c: Config = load_toml(path)?;
        if let ZDist::File { path: p } = &mut c.data.z {
            if p.is_relative() {
                let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// `--model` argument: a built-in name or a TOML file with a `[model]`
/// table.
pub fn model_from_arg(arg: &str) -> Result<ModelSpec> {
    if builtin::BUILTIN_NAMES.contains(&arg) {
        return builtin::builtin(arg, None);
    }
    let path = Path::new(arg);
    if !path.exists() {
        return Err(Error::Config(format!(
            "'{arg}' is neither a built-in model ({}) nor a model file",
            builtin::BUILTIN_NAMES.join(", ")
        )));
    }
    #[derive(Deserialize)]
    struct ModelFile {
        model: ModelChoice,
    }
    let f: ModelFile = load_toml(path)?;
    f.model.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let text = r#"
[model]
name = "example1"

[data]
gamma0 = [1.0, 1.0, 1.0, 1.0, 1.0]
n = 4000
z = { kind = "uniform", low = -1.0, high = 1.0 }
epsilon = { kind = "student_t", nu = 6.0 }
seed = 1

[bounds]
lower = [-2.0, 0.1, 0.1, 0.05, 0.05]
upper = [4.0, 3.0, 3.0, 4.0, 4.0]

[estimator]
kind = "se"
s = 50

[study]
replications = 20
seed = 9
"#;
        let c = Config::from_toml(text).unwrap();
        assert_eq!(c.estimator.kind, EstimatorKind::Se);
        assert_eq!(c.estimator.s, 50);
        assert_eq!(c.estimator.multistart, 5);
        assert_eq!(c.data.epsilon, EpsDist::StudentT { nu: 6.0 });
        assert_eq!(c.study.level, 0.95);
        let m = c.model.build().unwrap();
        assert_eq!(resolve_space(&m, c.bounds.as_ref()).unwrap().dim(), 5);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_bounds() {
        assert!(Config::from_toml("[model]\nname='example1'\ncolour=1\n[data]\ngamma0=[1]\nn=1\n").is_err());
        let m = builtin::builtin("example1", None).unwrap();
        let b = Bounds {
            lower: vec![0.0; 3],
            upper: vec![1.0; 3],
        };
        assert!(resolve_space(&m, Some(&b)).is_err());
    }

    #[test]
    fn defaults_match_fit_options() {
        let e = EstimatorSection::default();
        let f = e.fit_options(0);
        assert_eq!(f, FitOptions::default());
    }
}
