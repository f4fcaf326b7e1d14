//! Built-in models: the three example regressions with isotropic normal
//! measurement error `N(0, σ_δ² I_k)` and their closed-form moments.
//!
//! Flat parameter layouts:
//! - `example1`: `(θ1, θ2, θ3, σ_δ², σ_ε²)`, `g = θ1 x1 + θ3 exp(θ2 x2)`
//! - `example2`: `(θ1, θ2[0..k], σ_δ², σ_ε²)`, `g = θ1 exp(x′θ2)`
//! - `example3`: `(θ1..θ5, σ_δ², σ_ε²)`, quadratic in two predictors
//! - `constant`: `(θ1, σ_ε²)`, `g ≡ θ1`, with a known (parameter-free) normal

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{BuiltinKind, ClosedMoments, ErrorDensity, ModelSpec, MomentPair, ParamSpace, Regression};

/// `N(0, σ² I_k)` with `ψ = (σ²)`.
#[derive(Debug, Clone)]
pub struct IsotropicNormal {
    k: usize,
}

impl IsotropicNormal {
    pub fn new(k: usize) -> Self {
        Self { k }
    }
}

#[inline]
fn sq_norm(t: &[f64]) -> f64 {
    t.iter().map(|v| v * v).sum()
}

#[inline]
fn normal_pdf(r: f64, s: f64, k: usize) -> f64 {
    (2.0 * PI * s).powf(-0.5 * k as f64) * (-0.5 * r / s).exp()
}

impl ErrorDensity for IsotropicNormal {
    fn name(&self) -> &str {
        "isotropic-normal"
    }

    fn dim(&self) -> usize {
        self.k
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn validate(&self, psi: &[f64]) -> std::result::Result<(), String> {
        match psi {
            [s] if s.is_finite() && *s > 0.0 => Ok(()),
            [s] => Err(format!("sigma_delta2 must be positive and finite, got {s}")),
            _ => Err(format!("expected 1 density parameter, got {}", psi.len())),
        }
    }

    fn density(&self, t: &[f64], psi: &[f64]) -> f64 {
        normal_pdf(sq_norm(t), psi[0], self.k)
    }

    fn gradient(&self, t: &[f64], psi: &[f64], out: &mut [f64]) -> bool {
        self.value_and_gradient(t, psi, out);
        true
    }

    fn value_and_gradient(&self, t: &[f64], psi: &[f64], out: &mut [f64]) -> (f64, bool) {
        let s = psi[0];
        let r = sq_norm(t);
        let f = normal_pdf(r, s, self.k);
        out[0] = f * (-0.5 * self.k as f64 / s + 0.5 * r / (s * s));
        (f, true)
    }

    fn hessian(&self, t: &[f64], psi: &[f64], out: &mut DMatrix<f64>) -> bool {
        let s = psi[0];
        let r = sq_norm(t);
        let k = self.k as f64;
        let f = normal_pdf(r, s, self.k);
        let score = -0.5 * k / s + 0.5 * r / (s * s);
        out[(0, 0)] = f * (score * score + 0.5 * k / (s * s) - r / (s * s * s));
        true
    }

    fn sample(&self, psi: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        let sd = psi[0].sqrt();
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = sd * z;
        }
    }

    fn normal_variance(&self, psi: &[f64]) -> Option<f64> {
        Some(psi[0])
    }
}

/// `N(0, σ0² I_k)` with a fixed, known variance (no free parameters).
#[derive(Debug, Clone)]
pub struct KnownNormal {
    k: usize,
    variance: f64,
}

impl KnownNormal {
    pub fn new(k: usize, variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::Config(format!("known normal variance must be positive, got {variance}")));
        }
        Ok(Self { k, variance })
    }
}

impl ErrorDensity for KnownNormal {
    fn name(&self) -> &str {
        "known-normal"
    }

    fn dim(&self) -> usize {
        self.k
    }

    fn param_dim(&self) -> usize {
        0
    }

    fn validate(&self, psi: &[f64]) -> std::result::Result<(), String> {
        if psi.is_empty() {
            Ok(())
        } else {
            Err(format!("known normal takes no parameters, got {}", psi.len()))
        }
    }

    fn density(&self, t: &[f64], _psi: &[f64]) -> f64 {
        normal_pdf(sq_norm(t), self.variance, self.k)
    }

    fn gradient(&self, _t: &[f64], _psi: &[f64], _out: &mut [f64]) -> bool {
        true
    }

    fn hessian(&self, _t: &[f64], _psi: &[f64], _out: &mut DMatrix<f64>) -> bool {
        true
    }

    fn sample(&self, _psi: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        let sd = self.variance.sqrt();
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = sd * z;
        }
    }

    fn normal_variance(&self, _psi: &[f64]) -> Option<f64> {
        Some(self.variance)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Example1;

impl Regression for Example1 {
    fn name(&self) -> &str {
        "example1"
    }

    fn predictor_dim(&self) -> usize {
        2
    }

    fn param_dim(&self) -> usize {
        3
    }

    fn value(&self, x: &[f64], th: &[f64]) -> f64 {
        th[0] * x[0] + th[2] * (th[1] * x[1]).exp()
    }

    fn gradient(&self, x: &[f64], th: &[f64], out: &mut [f64]) -> bool {
        self.value_and_gradient(x, th, out);
        true
    }

    fn value_and_gradient(&self, x: &[f64], th: &[f64], out: &mut [f64]) -> (f64, bool) {
        let e = (th[1] * x[1]).exp();
        out[0] = x[0];
        out[1] = th[2] * x[1] * e;
        out[2] = e;
        (th[0] * x[0] + th[2] * e, true)
    }

    fn hessian(&self, x: &[f64], th: &[f64], out: &mut DMatrix<f64>) -> bool {
        let e = (th[1] * x[1]).exp();
        out.fill(0.0);
        out[(1, 1)] = th[2] * x[1] * x[1] * e;
        out[(1, 2)] = x[1] * e;
        out[(2, 1)] = x[1] * e;
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Example2 {
    k: usize,
}

impl Example2 {
    pub fn new(k: usize) -> Self {
        Self { k }
    }
}

impl Regression for Example2 {
    fn name(&self) -> &str {
        "example2"
    }

    fn predictor_dim(&self) -> usize {
        self.k
    }

    fn param_dim(&self) -> usize {
        self.k + 1
    }

    fn value(&self, x: &[f64], th: &[f64]) -> f64 {
        let a: f64 = x.iter().zip(&th[1..]).map(|(a, b)| a * b).sum();
        th[0] * a.exp()
    }

    fn gradient(&self, x: &[f64], th: &[f64], out: &mut [f64]) -> bool {
        self.value_and_gradient(x, th, out);
        true
    }

    fn value_and_gradient(&self, x: &[f64], th: &[f64], out: &mut [f64]) -> (f64, bool) {
        let a: f64 = x.iter().zip(&th[1..]).map(|(a, b)| a * b).sum();
        let e = a.exp();
        out[0] = e;
        for j in 0..self.k {
            out[j + 1] = th[0] * x[j] * e;
        }
        (th[0] * e, true)
    }

    fn hessian(&self, x: &[f64], th: &[f64], out: &mut DMatrix<f64>) -> bool {
        let a: f64 = x.iter().zip(&th[1..]).map(|(a, b)| a * b).sum();
        let e = a.exp();
        out[(0, 0)] = 0.0;
        for j in 0..self.k {
            out[(0, j + 1)] = x[j] * e;
            out[(j + 1, 0)] = x[j] * e;
            for l in 0..self.k {
                out[(j + 1, l + 1)] = th[0] * x[j] * x[l] * e;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Example3;

#[inline]
fn example3_basis(x: &[f64]) -> [f64; 5] {
    [x[0], x[1], x[0] * x[0], x[1] * x[1], x[0] * x[1]]
}

impl Regression for Example3 {
    fn name(&self) -> &str {
        "example3"
    }

    fn predictor_dim(&self) -> usize {
        2
    }

    fn param_dim(&self) -> usize {
        5
    }

    fn value(&self, x: &[f64], th: &[f64]) -> f64 {
        example3_basis(x).iter().zip(th).map(|(b, t)| b * t).sum()
    }

    fn gradient(&self, x: &[f64], _th: &[f64], out: &mut [f64]) -> bool {
        out.copy_from_slice(&example3_basis(x));
        true
    }

    fn hessian(&self, _x: &[f64], _th: &[f64], out: &mut DMatrix<f64>) -> bool {
        out.fill(0.0);
        true
    }
}

/// `g(x; θ) ≡ θ1`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantMean {
    k: usize,
}

impl ConstantMean {
    pub fn new(k: usize) -> Self {
        Self { k }
    }
}

impl Regression for ConstantMean {
    fn name(&self) -> &str {
        "constant"
    }

    fn predictor_dim(&self) -> usize {
        self.k
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn value(&self, _x: &[f64], th: &[f64]) -> f64 {
        th[0]
    }

    fn gradient(&self, _x: &[f64], _th: &[f64], out: &mut [f64]) -> bool {
        out[0] = 1.0;
        true
    }

    fn hessian(&self, _x: &[f64], _th: &[f64], out: &mut DMatrix<f64>) -> bool {
        out.fill(0.0);
        true
    }
}

struct Example1Moments;

impl ClosedMoments for Example1Moments {
    fn moments(&self, z: &[f64], g: &[f64]) -> MomentPair {
        let (t1, t2, t3, s, se) = (g[0], g[1], g[2], g[3], g[4]);
        let e1 = (t2 * z[1] + 0.5 * t2 * t2 * s).exp();
        let e2 = (2.0 * t2 * z[1] + 2.0 * t2 * t2 * s).exp();
        MomentPair {
            m1: t1 * z[0] + t3 * e1,
            m2: t1 * t1 * (z[0] * z[0] + s) + t3 * t3 * e2 + 2.0 * t1 * t3 * z[0] * e1 + se,
        }
    }

    fn moments_with_gradient(&self, z: &[f64], g: &[f64], d1: &mut [f64], d2: &mut [f64]) -> MomentPair {
        let (t1, t2, t3, s, se) = (g[0], g[1], g[2], g[3], g[4]);
        let (z1, z2) = (z[0], z[1]);
        let e1 = (t2 * z2 + 0.5 * t2 * t2 * s).exp();
        let e2 = (2.0 * t2 * z2 + 2.0 * t2 * t2 * s).exp();
        d1[0] = z1;
        d1[1] = t3 * e1 * (z2 + t2 * s);
        d1[2] = e1;
        d1[3] = 0.5 * t3 * e1 * t2 * t2;
        d1[4] = 0.0;
        d2[0] = 2.0 * t1 * (z1 * z1 + s) + 2.0 * t3 * z1 * e1;
        d2[1] = t3 * t3 * e2 * (2.0 * z2 + 4.0 * t2 * s) + 2.0 * t1 * t3 * z1 * e1 * (z2 + t2 * s);
        d2[2] = 2.0 * t3 * e2 + 2.0 * t1 * z1 * e1;
        d2[3] = t1 * t1 + 2.0 * t3 * t3 * e2 * t2 * t2 + t1 * t3 * z1 * e1 * t2 * t2;
        d2[4] = 1.0;
        MomentPair {
            m1: t1 * z1 + t3 * e1,
            m2: t1 * t1 * (z1 * z1 + s) + t3 * t3 * e2 + 2.0 * t1 * t3 * z1 * e1 + se,
        }
    }
}

struct Example2Moments {
    k: usize,
}

impl ClosedMoments for Example2Moments {
    fn moments(&self, z: &[f64], g: &[f64]) -> MomentPair {
        let k = self.k;
        let (t1, t2, s, se) = (g[0], &g[1..=k], g[k + 1], g[k + 2]);
        let a: f64 = z.iter().zip(t2).map(|(a, b)| a * b).sum();
        let b: f64 = sq_norm(t2);
        MomentPair {
            m1: t1 * (a + 0.5 * b * s).exp(),
            m2: t1 * t1 * (2.0 * a + 2.0 * b * s).exp() + se,
        }
    }

    fn moments_with_gradient(&self, z: &[f64], g: &[f64], d1: &mut [f64], d2: &mut [f64]) -> MomentPair {
        let k = self.k;
        let (t1, t2, s, se) = (g[0], &g[1..=k], g[k + 1], g[k + 2]);
        let a: f64 = z.iter().zip(t2).map(|(a, b)| a * b).sum();
        let b: f64 = sq_norm(t2);
        let e1 = (a + 0.5 * b * s).exp();
        let e2 = (2.0 * a + 2.0 * b * s).exp();
        d1[0] = e1;
        d2[0] = 2.0 * t1 * e2;
        for j in 0..k {
            d1[j + 1] = t1 * e1 * (z[j] + t2[j] * s);
            d2[j + 1] = t1 * t1 * e2 * (2.0 * z[j] + 4.0 * t2[j] * s);
        }
        d1[k + 1] = 0.5 * t1 * e1 * b;
        d2[k + 1] = 2.0 * t1 * t1 * e2 * b;
        d1[k + 2] = 0.0;
        d2[k + 2] = 1.0;
        MomentPair {
            m1: t1 * e1,
            m2: t1 * t1 * e2 + se,
        }
    }
}

/// Closed form for the quadratic model. Writing `g(z + δ) = a0 + a1 δ1 +
/// a2 δ2 + θ3 δ1² + θ4 δ2² + θ5 δ1 δ2` and using `Eδ² = s`, `Eδ⁴ = 3s²`,
/// odd moments zero:
/// `E g² = m1² + (a1² + a2²) s + 2 s² (θ3² + θ4²) + θ5² s²`.
struct Example3Moments;

impl Example3Moments {
    #[inline]
    fn pieces(z: &[f64], th: &[f64]) -> (f64, f64, f64) {
        let a0 = Example3.value(z, th);
        let a1 = th[0] + 2.0 * th[2] * z[0] + th[4] * z[1];
        let a2 = th[1] + 2.0 * th[3] * z[1] + th[4] * z[0];
        (a0, a1, a2)
    }
}

impl ClosedMoments for Example3Moments {
    fn moments(&self, z: &[f64], g: &[f64]) -> MomentPair {
        let th = &g[..5];
        let (s, se) = (g[5], g[6]);
        let (a0, a1, a2) = Self::pieces(z, th);
        let m1 = a0 + (th[2] + th[3]) * s;
        let m2 = m1 * m1
            + (a1 * a1 + a2 * a2) * s
            + 2.0 * s * s * (th[2] * th[2] + th[3] * th[3])
            + th[4] * th[4] * s * s
            + se;
        MomentPair { m1, m2 }
    }

    fn moments_with_gradient(&self, z: &[f64], g: &[f64], d1: &mut [f64], d2: &mut [f64]) -> MomentPair {
        let th = &g[..5];
        let (s, se) = (g[5], g[6]);
        let (a0, a1, a2) = Self::pieces(z, th);
        let m1 = a0 + (th[2] + th[3]) * s;
        let basis = example3_basis(z);
        let da1 = [1.0, 0.0, 2.0 * z[0], 0.0, z[1]];
        let da2 = [0.0, 1.0, 0.0, 2.0 * z[1], z[0]];
        let extra = [0.0, 0.0, 4.0 * s * s * th[2], 4.0 * s * s * th[3], 2.0 * th[4] * s * s];
        for j in 0..5 {
            d1[j] = basis[j] + if j == 2 || j == 3 { s } else { 0.0 };
            d2[j] = 2.0 * m1 * d1[j] + 2.0 * s * (a1 * da1[j] + a2 * da2[j]) + extra[j];
        }
        d1[5] = th[2] + th[3];
        d2[5] = 2.0 * m1 * (th[2] + th[3])
            + (a1 * a1 + a2 * a2)
            + 4.0 * s * (th[2] * th[2] + th[3] * th[3])
            + 2.0 * th[4] * th[4] * s;
        d1[6] = 0.0;
        d2[6] = 1.0;
        let m2 = m1 * m1
            + (a1 * a1 + a2 * a2) * s
            + 2.0 * s * s * (th[2] * th[2] + th[3] * th[3])
            + th[4] * th[4] * s * s
            + se;
        MomentPair { m1, m2 }
    }
}

/// Moments of the constant-mean model; valid for any error density.
struct ConstantMoments {
    q: usize,
}

impl ClosedMoments for ConstantMoments {
    fn moments(&self, _z: &[f64], g: &[f64]) -> MomentPair {
        let c = g[0];
        MomentPair {
            m1: c,
            m2: c * c + g[self.q + 1],
        }
    }

    fn moments_with_gradient(&self, z: &[f64], g: &[f64], d1: &mut [f64], d2: &mut [f64]) -> MomentPair {
        d1.fill(0.0);
        d2.fill(0.0);
        d1[0] = 1.0;
        d2[0] = 2.0 * g[0];
        d2[self.q + 1] = 1.0;
        self.moments(z, g)
    }
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 4] = ["example1", "example2", "example3", "constant"];

/// Builds a shipped model by name. `k` is only meaningful for `example2`
/// (default 2) and `constant` (default 1); the other examples are fixed at
/// `k = 2`.
pub fn builtin(name: &str, k: Option<usize>) -> Result<ModelSpec> {
    let fixed_k = |name: &str, want: usize| -> Result<()> {
        match k {
            Some(got) if got != want => Err(Error::Config(format!("{name} requires k = {want}, got {got}"))),
            _ => Ok(()),
        }
    };
    match name {
        "example1" => {
            fixed_k(name, 2)?;
            Ok(ModelSpec::new(name, Arc::new(Example1), Arc::new(IsotropicNormal::new(2)))?
                .with_closed_moments(Arc::new(Example1Moments))
                .with_side_condition(Arc::new(|g| {
                    if g.theta[1] * g.theta[2] != 0.0 {
                        Ok(())
                    } else {
                        Err("example1 requires theta2 * theta3 != 0".into())
                    }
                }))
                .with_kind(BuiltinKind::Example1))
        }
        "example2" => {
            let k = k.unwrap_or(2);
            if k == 0 {
                return Err(Error::Config("example2 requires k >= 1".into()));
            }
            Ok(ModelSpec::new(name, Arc::new(Example2::new(k)), Arc::new(IsotropicNormal::new(k)))?
                .with_closed_moments(Arc::new(Example2Moments { k }))
                .with_side_condition(Arc::new(|g| {
                    if g.theta[0] == 0.0 {
                        Err("example2 requires theta1 != 0".into())
                    } else if g.theta[1..].iter().all(|v| *v == 0.0) {
                        Err("example2 requires theta2 != 0".into())
                    } else {
                        Ok(())
                    }
                }))
                .with_kind(BuiltinKind::Example2))
        }
        "example3" => {
            fixed_k(name, 2)?;
            Ok(ModelSpec::new(name, Arc::new(Example3), Arc::new(IsotropicNormal::new(2)))?
                .with_closed_moments(Arc::new(Example3Moments))
                .with_kind(BuiltinKind::Example3))
        }
        "constant" => constant_model(k.unwrap_or(1), 1.0),
        other => Err(Error::Config(format!(
            "unknown model '{other}' (expected one of {})",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

/// Constant-mean model `g ≡ θ1` with known error density `N(0, σ0² I_k)`.
/// Its moments do not depend on the error density, so importance sampling
/// with `φ = f_δ` carries no simulation noise.
pub fn constant_model(k: usize, delta_variance: f64) -> Result<ModelSpec> {
    if k == 0 {
        return Err(Error::Config("constant model requires k >= 1".into()));
    }
    Ok(ModelSpec::new(
        "constant",
        Arc::new(ConstantMean::new(k)),
        Arc::new(KnownNormal::new(k, delta_variance)?),
    )?
    .with_closed_moments(Arc::new(ConstantMoments { q: 0 }))
    .with_kind(BuiltinKind::Constant))
}

/// Default search box for a built-in model.
pub fn default_space(model: &ModelSpec) -> Result<ParamSpace> {
    let d = model.dims();
    let (mut lower, mut upper) = (vec![-5.0; d.p], vec![5.0; d.p]);
    match model.kind() {
        Some(BuiltinKind::Example1) => {
            lower[1] = -3.0;
            upper[1] = 3.0;
        }
        Some(BuiltinKind::Example2) => {
            for j in 1..d.p {
                lower[j] = -2.0;
                upper[j] = 2.0;
            }
        }
        _ => {}
    }
    lower.extend(std::iter::repeat_n(1e-3, d.q));
    upper.extend(std::iter::repeat_n(4.0, d.q));
    lower.push(1e-6);
    upper.push(10.0);
    ParamSpace::new(lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd;

    #[test]
    fn builtin_dimensions() {
        let m = builtin("example1", None).unwrap();
        assert_eq!((m.dims().k, m.dims().p, m.dims().q), (2, 3, 1));
        let m = builtin("example2", Some(3)).unwrap();
        assert_eq!((m.dims().k, m.dims().p, m.dims().q), (3, 4, 1));
        let m = builtin("example3", None).unwrap();
        assert_eq!((m.dims().k, m.dims().p, m.dims().q), (2, 5, 1));
        assert!(builtin("example3", Some(3)).is_err());
        assert!(builtin("nope", None).is_err());
    }

    #[test]
    fn example_values() {
        let m = builtin("example1", None).unwrap();
        assert_eq!(m.eval_g(&[2.0, 0.0], &[1.0, 1.0, 1.0]).unwrap(), 3.0);
        let m2 = builtin("example2", Some(3)).unwrap();
        assert_eq!(m2.eval_g(&[0.3, -1.0, 2.0], &[1.0, 0.0, 0.0, 0.0]).unwrap(), 1.0);
        let m3 = builtin("example3", None).unwrap();
        assert_eq!(m3.eval_g(&[1.0, 1.0], &[1.0; 5]).unwrap(), 5.0);
    }

    #[test]
    fn example_gradients() {
        let m = builtin("example1", None).unwrap();
        let g = m.grad_g_theta(&[2.0, 0.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!(!g.finite_difference);
        assert_eq!(g.value, vec![2.0, 0.0, 1.0]);
        let m2 = builtin("example2", Some(1)).unwrap();
        let g = m2.grad_g_theta(&[3.0], &[2.0, 0.0]).unwrap();
        assert_eq!(g.value, vec![1.0, 6.0]);
    }

    #[test]
    fn evaluation_errors_on_overflow() {
        let m = builtin("example2", Some(1)).unwrap();
        assert!(matches!(m.eval_g(&[1000.0], &[1.0, 1.0]), Err(Error::Evaluation(_))));
        assert!(m.eval_g(&[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn normal_density_values() {
        let n1 = builtin("example2", Some(1)).unwrap();
        let v = n1.eval_density(&[0.0], &[1.0]).unwrap();
        assert!((v - 0.398_942_280_401_432_7).abs() < 1e-15);
        let n2 = builtin("example1", None).unwrap();
        let v = n2.eval_density(&[0.0, 0.0], &[1.0]).unwrap();
        assert!((v - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!(matches!(n2.eval_density(&[0.0, 0.0], &[-1.0]), Err(Error::Domain(_))));
        let d = n1.grad_density_psi(&[0.0], &[1.0]).unwrap();
        assert!((d.value[0] + 0.5 * 0.398_942_280_401_432_7).abs() < 1e-15);
        let fd = fd::gradient(&[1.0], |p| n1.eval_density(&[0.0], p).unwrap());
        assert!((fd[0] - d.value[0]).abs() < 1e-8);
    }

    #[test]
    fn side_conditions() {
        use crate::model::ParamVector;
        let m = builtin("example1", None).unwrap();
        let bad = ParamVector::new(vec![1.0, 0.0, 1.0], vec![1.0], 1.0).unwrap();
        assert!(m.check_side_conditions(&bad).is_err());
        let good = ParamVector::new(vec![1.0, 1.0, 1.0], vec![1.0], 1.0).unwrap();
        assert!(m.check_side_conditions(&good).is_ok());
        let m2 = builtin("example2", Some(2)).unwrap();
        let bad = ParamVector::new(vec![1.0, 0.0, 0.0], vec![1.0], 1.0).unwrap();
        assert!(m2.check_side_conditions(&bad).is_err());
    }

    #[test]
    fn default_spaces_contain_typical_points() {
        let m = builtin("example1", None).unwrap();
        let s = default_space(&m).unwrap();
        assert!(s.contains(&[1.0, 1.0, 1.0, 1.0, 1.0]));
    }
}
