//! Synthetic data under the Berkson model: `Z` from a design
//! distribution, `δ ~ f_δ(·; ψ0)`, `ε` mean zero with variance `σ_ε²`,
//! and `Y = g(Z + δ; θ0) + ε`.

use std::path::PathBuf;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::builtin;
use crate::error::{Error, Result};
use crate::io;
use crate::model::{Dataset, ModelSpec, ParamVector};

/// A built-in model by name and optional predictor dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelChoice {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

impl ModelChoice {
    pub fn build(&self) -> Result<ModelSpec> {
        builtin::builtin(&self.name, self.k)
    }
}

/// Distribution of the observed predictor `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ZDist {
    /// Independent `U(low, high)` coordinates.
    Uniform { low: f64, high: f64 },
    /// Independent `N(mean_j, variance_j)` coordinates.
    Normal { mean: Vec<f64>, variance: Vec<f64> },
    /// The first `n` rows of the `z` columns of a CSV file.
    File { path: PathBuf },
}

impl Default for ZDist {
    fn default() -> Self {
        ZDist::Uniform { low: -1.0, high: 1.0 }
    }
}

/// Distribution of `ε`; every variant has mean 0 and variance `σ_ε²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsDist {
    #[default]
    Normal,
    /// `σ_ε √((ν−2)/ν) · t_ν`, requiring `ν > 4` for a finite fourth moment.
    StudentT { nu: f64 },
    /// `U(−a, a)` with `a = σ_ε √3`.
    Uniform,
}

impl EpsDist {
    pub fn validate(&self) -> Result<()> {
        match self {
            EpsDist::StudentT { nu } if !(*nu > 4.0 && nu.is_finite()) => {
                Err(Error::Config(format!("student_t epsilon requires nu > 4, got {nu}")))
            }
            _ => Ok(()),
        }
    }

    fn sampler(&self, variance: f64) -> Result<EpsSampler> {
        self.validate()?;
        let sd = variance.sqrt();
        Ok(match self {
            EpsDist::Normal => EpsSampler::Normal(sd),
            EpsDist::StudentT { nu } => EpsSampler::T(
                StudentT::new(*nu).map_err(|e| Error::Config(e.to_string()))?,
                sd * ((nu - 2.0) / nu).sqrt(),
            ),
            EpsDist::Uniform => EpsSampler::Uniform(sd * 3f64.sqrt()),
        })
    }
}

enum EpsSampler {
    Normal(f64),
    T(StudentT<f64>, f64),
    Uniform(f64),
}

impl EpsSampler {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            EpsSampler::Normal(sd) => sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng),
            EpsSampler::T(t, scale) => scale * t.sample(rng),
            EpsSampler::Uniform(a) if *a == 0.0 => 0.0,
            EpsSampler::Uniform(a) => rng.random_range(-a..*a),
        }
    }
}

/// Everything needed to generate one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub model: ModelChoice,
    pub gamma0: Vec<f64>,
    pub n: usize,
    #[serde(default)]
    pub z: ZDist,
    #[serde(default)]
    pub epsilon: EpsDist,
    #[serde(default)]
    pub seed: u64,
}

impl GenConfig {
    /// Checks `γ0` against the model's domain and identifiability side
    /// conditions.
    pub fn validate(&self, model: &ModelSpec) -> Result<ParamVector> {
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        validate_gamma0(model, &self.gamma0)
    }
}

fn validate_gamma0(model: &ModelSpec, gamma0: &[f64]) -> Result<ParamVector> {
    let p = ParamVector::from_slice(model.dims(), gamma0).map_err(|e| Error::Config(format!("gamma0: {e}")))?;
    model
        .density()
        .validate(&p.psi)
        .map_err(|e| Error::Config(format!("gamma0: {e}")))?;
    model
        .check_side_conditions(&p)
        .map_err(|e| Error::Config(format!("gamma0: {e}")))?;
    Ok(p)
}

pub fn generate_dataset(config: &GenConfig) -> Result<Dataset> {
    let model = config.model.build()?;
    generate_with_model(&model, config)
}

/// As [`generate_dataset`] for an already built model (the `model` field of
/// the config is ignored).
pub fn generate_with_model(model: &ModelSpec, config: &GenConfig) -> Result<Dataset> {
    let gamma0 = config.validate(model)?;
    let k = model.dims().k;
    let n = config.n;
    let fixed_z = match &config.z {
        ZDist::File { path } => {
            let (z, zk) = io::read_predictors(path)?;
            if zk != k {
                return Err(Error::Config(format!("design file has k = {zk}, model needs {k}")));
            }
            if z.len() / k < n {
                return Err(Error::Config(format!("design file has {} rows, n = {n}", z.len() / k)));
            }
            Some(z)
        }
        ZDist::Uniform { low, high } => {
            if !(low.is_finite() && high.is_finite() && low < high) {
                return Err(Error::Config(format!("uniform z requires low < high, got [{low}, {high}]")));
            }
            None
        }
        ZDist::Normal { mean, variance } => {
            if mean.len() != k || variance.len() != k {
                return Err(Error::Config(format!("normal z needs {k} means and variances")));
            }
            if variance.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::Config("normal z needs finite means and nonnegative variances".into()));
            }
            None
        }
    };
    let eps = config.epsilon.sampler(gamma0.sigma_eps2)?;
    let theta = &gamma0.theta;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut z = Vec::with_capacity(n * k);
    let mut y = Vec::with_capacity(n);
    let mut zi = vec![0.0; k];
    let mut x = vec![0.0; k];
    for i in 0..n {
        match (&config.z, &fixed_z) {
            (_, Some(fz)) => zi.copy_from_slice(&fz[i * k..(i + 1) * k]),
            (ZDist::Uniform { low, high }, None) => zi.iter_mut().for_each(|v| *v = rng.random_range(*low..*high)),
            (ZDist::Normal { mean, variance }, None) => {
                for j in 0..k {
                    let u: f64 = StandardNormal.sample(&mut rng);
                    zi[j] = mean[j] + variance[j].sqrt() * u;
                }
            }
            (ZDist::File { .. }, None) => unreachable!(),
        }
        model.density().sample(&gamma0.psi, &mut rng as &mut dyn RngCore, &mut x);
        for j in 0..k {
            x[j] += zi[j];
        }
        let g = model.eval_g(&x, theta)?;
        y.push(g + eps.draw(&mut rng));
        z.extend_from_slice(&zi);
    }
    Dataset::new(y, z, k)
}
