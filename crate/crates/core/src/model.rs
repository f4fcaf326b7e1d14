//! Parameter vectors, the parameter box, data sets, and the model interfaces:
//! a regression function `g(x; θ)` and a measurement-error density
//! `f_δ(t; ψ)` for the Berkson model `Y = g(X; θ) + ε`, `X = Z + δ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd;

/// Dimensions of a model: predictor `k`, regression parameters `p`,
/// error-density parameters `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub k: usize,
    pub p: usize,
    pub q: usize,
}

impl Dims {
    /// Length of the full parameter vector `(θ, ψ, σ_ε²)`.
    pub fn len(&self) -> usize {
        self.p + self.q + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn theta_range(&self) -> std::ops::Range<usize> {
        0..self.p
    }

    pub fn psi_range(&self) -> std::ops::Range<usize> {
        self.p..self.p + self.q
    }

    pub fn sigma_index(&self) -> usize {
        self.p + self.q
    }
}

/// Full parameter point `γ = (θ, ψ, σ_ε²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
    pub sigma_eps2: f64,
}

impl ParamVector {
    pub fn new(theta: Vec<f64>, psi: Vec<f64>, sigma_eps2: f64) -> Result<Self> {
        let v = Self {
            theta,
            psi,
            sigma_eps2,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn from_slice(dims: Dims, gamma: &[f64]) -> Result<Self> {
        if gamma.len() != dims.len() {
            return Err(Error::dim("parameter vector", dims.len(), gamma.len()));
        }
        Self::new(
            gamma[dims.theta_range()].to_vec(),
            gamma[dims.psi_range()].to_vec(),
            gamma[dims.sigma_index()],
        )
    }

    fn validate(&self) -> Result<()> {
        if !self.sigma_eps2.is_finite() || self.sigma_eps2 < 0.0 {
            return Err(Error::Domain(format!(
                "sigma_eps2 must be finite and nonnegative, got {}",
                self.sigma_eps2
            )));
        }
        if self.theta.iter().chain(&self.psi).any(|v| !v.is_finite()) {
            return Err(Error::Domain("parameter vector has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn dims_match(&self, dims: Dims) -> bool {
        self.theta.len() == dims.p && self.psi.len() == dims.q
    }

    /// Flat layout `(θ, ψ, σ_ε²)` used by every evaluation routine.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.theta.len() + self.psi.len() + 1);
        out.extend_from_slice(&self.theta);
        out.extend_from_slice(&self.psi);
        out.push(self.sigma_eps2);
        out
    }
}

/// Coordinate box `Γ = [lower, upper]`; all bounds finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParamSpace {
    /// Builds a box. The last coordinate is `σ_ε²` and must have a
    /// nonnegative lower bound.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("parameter box", lower.len(), upper.len()));
        }
        if lower.is_empty() {
            return Err(Error::Config("parameter box is empty".into()));
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("bound {j} is not finite")));
            }
            if lo > hi {
                return Err(Error::Config(format!("lower bound {j} exceeds upper ({lo} > {hi})")));
            }
        }
        if *lower.last().unwrap() < 0.0 {
            return Err(Error::Config("lower bound on sigma_eps2 must be >= 0".into()));
        }
        Ok(Self { lower, upper })
    }

    /// Box with the given ψ and σ_ε² ranges and a common θ range.
    pub fn for_dims(dims: Dims, theta: (f64, f64), psi: (f64, f64), sigma_eps2: (f64, f64)) -> Result<Self> {
        let mut lower = vec![theta.0; dims.p];
        let mut upper = vec![theta.1; dims.p];
        lower.extend(std::iter::repeat_n(psi.0, dims.q));
        upper.extend(std::iter::repeat_n(psi.1, dims.q));
        lower.push(sigma_eps2.0);
        upper.push(sigma_eps2.1);
        Self::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    /// Clamps `x` coordinate-wise into the box.
    pub fn project(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn projected(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.project(&mut out);
        out
    }

    /// True when some coordinate lies within `rel_tol` of the box width from a
    /// bound.
    pub fn on_boundary(&self, x: &[f64], rel_tol: f64) -> bool {
        x.iter().enumerate().any(|(j, v)| {
            let tol = rel_tol * self.width(j).max(f64::MIN_POSITIVE);
            (v - self.lower[j]).abs() <= tol || (self.upper[j] - v).abs() <= tol
        })
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

/// Observed pairs `(Y_i, Z_i)`; `z` is stored row-major `n × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    z: Vec<f64>,
    k: usize,
}

impl Dataset {
    pub fn new(y: Vec<f64>, z: Vec<f64>, k: usize) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::data(None, "data set has no observations"));
        }
        if k == 0 {
            return Err(Error::data(None, "predictor dimension must be at least 1"));
        }
        if z.len() != y.len() * k {
            return Err(Error::dim("predictor matrix", y.len() * k, z.len()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(None, format!("non-finite response at observation {i}")));
        }
        if let Some(j) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(None, format!("non-finite predictor at observation {}", j / k)));
        }
        Ok(Self { y, z, k })
    }

    pub fn from_rows(y: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::data(None, "ragged predictor rows"));
        }
        Self::new(y, rows.concat(), k)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self, i: usize) -> &[f64] {
        &self.z[i * self.k..(i + 1) * self.k]
    }

    pub fn z_flat(&self) -> &[f64] {
        &self.z
    }

    /// Copy with observations reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let y = order.iter().map(|&i| self.y[i]).collect();
        let z = order.iter().flat_map(|&i| self.z(i).iter().copied()).collect();
        Self::new(y, z, self.k)
    }
}

/// Regression function `g(x; θ)`.
pub trait Regression: Send + Sync {
    fn name(&self) -> &str;
    fn predictor_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn value(&self, x: &[f64], theta: &[f64]) -> f64;

    /// Writes `∂g/∂θ` into `out`; returns `false` when the model has no
    /// analytic gradient.
    fn gradient(&self, _x: &[f64], _theta: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// Writes `∂²g/∂θ∂θ′`; returns `false` when unavailable.
    fn hessian(&self, _x: &[f64], _theta: &[f64], _out: &mut DMatrix<f64>) -> bool {
        false
    }

    /// Value and gradient together. Implementations may override this to
    /// share work; the default calls the two methods separately.
    fn value_and_gradient(&self, x: &[f64], theta: &[f64], out: &mut [f64]) -> (f64, bool) {
        (self.value(x, theta), self.gradient(x, theta, out))
    }
}

/// Parametric measurement-error density `f_δ(t; ψ)` on `R^k`.
pub trait ErrorDensity: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    /// Checks that `ψ` lies in the density's parameter domain.
    fn validate(&self, psi: &[f64]) -> std::result::Result<(), String>;

    fn density(&self, t: &[f64], psi: &[f64]) -> f64;

    fn gradient(&self, _t: &[f64], _psi: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    fn hessian(&self, _t: &[f64], _psi: &[f64], _out: &mut DMatrix<f64>) -> bool {
        false
    }

    fn value_and_gradient(&self, t: &[f64], psi: &[f64], out: &mut [f64]) -> (f64, bool) {
        (self.density(t, psi), self.gradient(t, psi, out))
    }

    /// Writes one draw of `δ` into `out`.
    fn sample(&self, psi: &[f64], rng: &mut dyn RngCore, out: &mut [f64]);

    /// `Some(σ²)` when the density is `N(0, σ² I_k)`; enables quadrature.
    fn normal_variance(&self, _psi: &[f64]) -> Option<f64> {
        None
    }
}

/// First two conditional moments of `Y` given `Z = z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPair {
    pub m1: f64,
    pub m2: f64,
}

impl MomentPair {
    pub fn is_finite(&self) -> bool {
        self.m1.is_finite() && self.m2.is_finite()
    }

    /// Conditional variance `m2 − m1²`.
    pub fn variance(&self) -> f64 {
        self.m2 - self.m1 * self.m1
    }
}

/// Closed-form `m1`, `m2` and their gradients in `γ` (flat layout).
pub trait ClosedMoments: Send + Sync {
    fn moments(&self, z: &[f64], gamma: &[f64]) -> MomentPair;
    fn moments_with_gradient(&self, z: &[f64], gamma: &[f64], d1: &mut [f64], d2: &mut [f64]) -> MomentPair;
}

/// Identifiability side condition applied to data-generating values.
pub type SideCondition = Arc<dyn Fn(&ParamVector) -> std::result::Result<(), String> + Send + Sync>;

/// A derivative together with whether it came from finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative<T> {
    pub value: T,
    pub finite_difference: bool,
}

/// The three shipped example models, plus a constant-mean model used for
/// zero-simulation-noise checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinKind {
    Example1,
    Example2,
    Example3,
    Constant,
}

/// A fully wired model. Immutable after construction.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    dims: Dims,
    regression: Arc<dyn Regression>,
    density: Arc<dyn ErrorDensity>,
    closed: Option<Arc<dyn ClosedMoments>>,
    side_condition: Option<SideCondition>,
    kind: Option<BuiltinKind>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .field("regression", &self.regression.name())
            .field("density", &self.density.name())
            .field("closed_moments", &self.closed.is_some())
            .finish()
    }
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        regression: Arc<dyn Regression>,
        density: Arc<dyn ErrorDensity>,
    ) -> Result<Self> {
        let k = regression.predictor_dim();
        if density.dim() != k {
            return Err(Error::dim("error density dimension", k, density.dim()));
        }
        let dims = Dims {
            k,
            p: regression.param_dim(),
            q: density.param_dim(),
        };
        Ok(Self {
            name: name.into(),
            dims,
            regression,
            density,
            closed: None,
            side_condition: None,
            kind: None,
        })
    }

    pub fn with_closed_moments(mut self, closed: Arc<dyn ClosedMoments>) -> Self {
        self.closed = Some(closed);
        self
    }

    pub fn with_side_condition(mut self, cond: SideCondition) -> Self {
        self.side_condition = Some(cond);
        self
    }

    pub(crate) fn with_kind(mut self, kind: BuiltinKind) -> Self {
        self.kind = Some(kind);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn kind(&self) -> Option<BuiltinKind> {
        self.kind
    }

    pub fn regression(&self) -> &dyn Regression {
        self.regression.as_ref()
    }

    pub fn density(&self) -> &dyn ErrorDensity {
        self.density.as_ref()
    }

    pub fn shared_density(&self) -> Arc<dyn ErrorDensity> {
        Arc::clone(&self.density)
    }

    pub fn closed_moments(&self) -> Option<&dyn ClosedMoments> {
        self.closed.as_deref()
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        let d = self.dims;
        let x = vec![0.0; d.k];
        let mut gbuf = vec![0.0; d.p];
        let mut fbuf = vec![0.0; d.q];
        let theta = vec![0.5; d.p];
        let psi = vec![1.0; d.q];
        self.regression.gradient(&x, &theta, &mut gbuf) && (d.q == 0 || self.density.gradient(&x, &psi, &mut fbuf))
    }

    /// Checks the identifiability side conditions on a data-generating point.
    pub fn check_side_conditions(&self, gamma: &ParamVector) -> Result<()> {
        if !gamma.dims_match(self.dims) {
            return Err(Error::dim("parameter vector", self.dims.len(), gamma.to_vec().len()));
        }
        self.density.validate(&gamma.psi).map_err(Error::Config)?;
        if let Some(cond) = &self.side_condition {
            cond(gamma).map_err(Error::Config)?;
        }
        Ok(())
    }

    fn check_x_theta(&self, x: &[f64], theta: &[f64]) -> Result<()> {
        if x.len() != self.dims.k {
            return Err(Error::dim("predictor", self.dims.k, x.len()));
        }
        if theta.len() != self.dims.p {
            return Err(Error::dim("theta", self.dims.p, theta.len()));
        }
        Ok(())
    }

    fn check_t_psi(&self, t: &[f64], psi: &[f64]) -> Result<()> {
        if t.len() != self.dims.k {
            return Err(Error::dim("density argument", self.dims.k, t.len()));
        }
        if psi.len() != self.dims.q {
            return Err(Error::dim("psi", self.dims.q, psi.len()));
        }
        self.density.validate(psi).map_err(Error::Domain)
    }

    /// `g(x; θ)`.
    pub fn eval_g(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        self.check_x_theta(x, theta)?;
        let v = self.regression.value(x, theta);
        if !v.is_finite() {
            return Err(Error::Evaluation(format!(
                "g({x:?}; {theta:?}) is not finite ({v})"
            )));
        }
        Ok(v)
    }

    /// `∂g(x; θ)/∂θ`, analytic when available.
    pub fn grad_g_theta(&self, x: &[f64], theta: &[f64]) -> Result<Derivative<Vec<f64>>> {
        self.check_x_theta(x, theta)?;
        let mut out = vec![0.0; self.dims.p];
        let (_, fallback) = self.g_value_and_gradient(x, theta, &mut out);
        Ok(Derivative {
            value: out,
            finite_difference: fallback,
        })
    }

    pub fn hess_g_theta(&self, x: &[f64], theta: &[f64]) -> Result<Derivative<DMatrix<f64>>> {
        self.check_x_theta(x, theta)?;
        let p = self.dims.p;
        let mut out = DMatrix::zeros(p, p);
        if self.regression.hessian(x, theta, &mut out) {
            return Ok(Derivative {
                value: out,
                finite_difference: false,
            });
        }
        let rows = fd::jacobian(theta, p, |th| {
            let mut g = vec![0.0; p];
            self.g_value_and_gradient(x, th, &mut g);
            g
        });
        let m = DMatrix::from_fn(p, p, |i, j| 0.5 * (rows[i][j] + rows[j][i]));
        Ok(Derivative {
            value: m,
            finite_difference: true,
        })
    }

    /// `f_δ(t; ψ)`.
    pub fn eval_density(&self, t: &[f64], psi: &[f64]) -> Result<f64> {
        self.check_t_psi(t, psi)?;
        Ok(self.density.density(t, psi))
    }

    pub fn grad_density_psi(&self, t: &[f64], psi: &[f64]) -> Result<Derivative<Vec<f64>>> {
        self.check_t_psi(t, psi)?;
        let mut out = vec![0.0; self.dims.q];
        let (_, fallback) = self.density_value_and_gradient(t, psi, &mut out);
        Ok(Derivative {
            value: out,
            finite_difference: fallback,
        })
    }

    pub fn hess_density_psi(&self, t: &[f64], psi: &[f64]) -> Result<Derivative<DMatrix<f64>>> {
        self.check_t_psi(t, psi)?;
        let q = self.dims.q;
        let mut out = DMatrix::zeros(q, q);
        if self.density.hessian(t, psi, &mut out) {
            return Ok(Derivative {
                value: out,
                finite_difference: false,
            });
        }
        let rows = fd::jacobian(psi, q, |ps| {
            let mut g = vec![0.0; q];
            self.density_value_and_gradient(t, ps, &mut g);
            g
        });
        let m = DMatrix::from_fn(q, q, |i, j| 0.5 * (rows[i][j] + rows[j][i]));
        Ok(Derivative {
            value: m,
            finite_difference: true,
        })
    }

    /// `count` i.i.d. draws of `δ`, row-major `count × k`.
    pub fn sample_delta(&self, psi: &[f64], count: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        if psi.len() != self.dims.q {
            return Err(Error::dim("psi", self.dims.q, psi.len()));
        }
        self.density.validate(psi).map_err(Error::Domain)?;
        let k = self.dims.k;
        let mut out = vec![0.0; count * k];
        for row in out.chunks_exact_mut(k) {
            self.density.sample(psi, rng, row);
        }
        Ok(out)
    }

    /// Unchecked value and gradient of `g`; returns whether finite
    /// differences were used.
    #[inline]
    pub(crate) fn g_value_and_gradient(&self, x: &[f64], theta: &[f64], out: &mut [f64]) -> (f64, bool) {
        let (v, analytic) = self.regression.value_and_gradient(x, theta, out);
        if analytic {
            return (v, false);
        }
        let g = fd::gradient(theta, |th| self.regression.value(x, th));
        out.copy_from_slice(&g);
        (v, true)
    }

    #[inline]
    pub(crate) fn density_value_and_gradient(&self, t: &[f64], psi: &[f64], out: &mut [f64]) -> (f64, bool) {
        let (v, analytic) = self.density.value_and_gradient(t, psi, out);
        if analytic || out.is_empty() {
            return (v, false);
        }
        let g = fd::gradient(psi, |ps| self.density.density(t, ps));
        out.copy_from_slice(&g);
        (v, true)
    }
}
