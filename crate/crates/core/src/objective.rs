//! Residuals, the minimum-distance objective
//! `Q_n(γ) = Σ_i ρ_i′ W_i ρ_i` with `ρ_i = (Y_i − m1, Y_i² − m2)`, its
//! simulated cross-product version `Q_{n,S}(γ) = Σ_i ρ_i^{(S)′} W_i ρ_i^{(2S)}`,
//! analytic gradients, and the residual-covariance estimate used for the
//! second-stage weight.

use std::sync::Arc;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelSpec, MomentPair};
use crate::moments;
use crate::quadrature::QuadratureRule;
use crate::simulated::{self, DrawStore, Half, ImportanceDensity};

/// Where conditional moments come from.
#[derive(Debug, Clone, Copy)]
pub enum MomentSource<'a> {
    Closed,
    Quadrature(&'a QuadratureRule),
    /// One half of a frozen draw store; observation `i` of the data maps to
    /// local row `i − store.offset()`.
    Simulated(&'a DrawStore, Half),
}

impl MomentSource<'_> {
    pub fn moments(&self, model: &ModelSpec, z: &[f64], gamma: &[f64], i: usize) -> Result<MomentPair> {
        let m = match self {
            MomentSource::Closed => model
                .closed_moments()
                .ok_or_else(|| Error::Unsupported(format!("model '{}' has no closed-form moments", model.name())))?
                .moments(z, gamma),
            MomentSource::Quadrature(rule) => moments::m_quad(model, z, gamma, rule)?,
            MomentSource::Simulated(store, half) => simulated::simulate(model, z, gamma, store, local(store, i)?, *half),
        };
        finite(m, i)
    }

    pub fn moments_with_gradient(
        &self,
        model: &ModelSpec,
        z: &[f64],
        gamma: &[f64],
        i: usize,
        d1: &mut [f64],
        d2: &mut [f64],
    ) -> Result<MomentPair> {
        let m = match self {
            MomentSource::Closed => model
                .closed_moments()
                .ok_or_else(|| Error::Unsupported(format!("model '{}' has no closed-form moments", model.name())))?
                .moments_with_gradient(z, gamma, d1, d2),
            MomentSource::Quadrature(rule) => moments::m_quad_with_gradient(model, z, gamma, rule, d1, d2)?,
            MomentSource::Simulated(store, half) => {
                simulated::simulate_with_gradient(model, z, gamma, store, local(store, i)?, *half, d1, d2).0
            }
        };
        finite(m, i)
    }
}

fn local(store: &DrawStore, i: usize) -> Result<usize> {
    i.checked_sub(store.offset())
        .filter(|l| *l < store.n())
        .ok_or_else(|| Error::Config(format!("observation {i} not covered by the draw store")))
}

fn finite(m: MomentPair, i: usize) -> Result<MomentPair> {
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::Evaluation(format!(
            "moments at observation {i} are not finite ({}, {})",
            m.m1, m.m2
        )))
    }
}

/// Per-observation 2×2 weight, already resolved to numbers.
#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    Constant(Matrix2<f64>),
    PerObservation(Arc<Vec<Matrix2<f64>>>),
}

impl Weight {
    pub fn identity() -> Self {
        Weight::Constant(Matrix2::identity())
    }

    #[inline]
    pub fn at(&self, i: usize) -> &Matrix2<f64> {
        match self {
            Weight::Constant(m) => m,
            Weight::PerObservation(v) => &v[i],
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        match self {
            Weight::Constant(m) => Weight::Constant(m * c),
            Weight::PerObservation(v) => Weight::PerObservation(Arc::new(v.iter().map(|m| m * c).collect())),
        }
    }

    /// Checks symmetry and nonnegative definiteness of every matrix.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            Weight::Constant(m) => check_nonneg(m),
            Weight::PerObservation(v) => {
                if v.len() != n {
                    return Err(Error::dim("per-observation weights", n, v.len()));
                }
                v.iter().try_for_each(check_nonneg)
            }
        }
    }
}

fn check_nonneg(m: &Matrix2<f64>) -> Result<()> {
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    if (m[(0, 1)] - m[(1, 0)]).abs() > 1e-12 * scale {
        return Err(Error::Config(format!("weight matrix is not symmetric: {m:?}")));
    }
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if m[(0, 0)] < 0.0 || m[(1, 1)] < 0.0 || det < -1e-12 * scale * scale {
        return Err(Error::Config(format!("weight matrix is not nonnegative definite: {m:?}")));
    }
    Ok(())
}

/// `ρ = (Y − m1, Y² − m2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub r1: f64,
    pub r2: f64,
}

impl Residual {
    #[inline]
    pub fn new(y: f64, m: MomentPair) -> Self {
        Self {
            r1: y - m.m1,
            r2: y * y - m.m2,
        }
    }
}

/// `a′ W b`.
#[inline]
fn bilinear(a: Residual, w: &Matrix2<f64>, b: Residual) -> f64 {
    a.r1 * (w[(0, 0)] * b.r1 + w[(0, 1)] * b.r2) + a.r2 * (w[(1, 0)] * b.r1 + w[(1, 1)] * b.r2)
}

#[inline]
fn times(w: &Matrix2<f64>, b: Residual) -> [f64; 2] {
    [w[(0, 0)] * b.r1 + w[(0, 1)] * b.r2, w[(1, 0)] * b.r1 + w[(1, 1)] * b.r2]
}

fn check(data: &Dataset, model: &ModelSpec, gamma: &[f64], weight: &Weight) -> Result<()> {
    let d = model.dims();
    if data.k() != d.k {
        return Err(Error::dim("data predictor dimension", d.k, data.k()));
    }
    if gamma.len() != d.len() {
        return Err(Error::dim("parameter vector", d.len(), gamma.len()));
    }
    if let Weight::PerObservation(v) = weight {
        if v.len() != data.len() {
            return Err(Error::dim("per-observation weights", data.len(), v.len()));
        }
    }
    model.density().validate(&gamma[d.psi_range()]).map_err(Error::Domain)
}

fn check_store(data: &Dataset, store: &DrawStore) -> Result<()> {
    if store.offset() != 0 || store.n() != data.len() {
        return Err(Error::Config(format!(
            "draw store covers {} observations from {}, data has {}",
            store.n(),
            store.offset(),
            data.len()
        )));
    }
    if store.k() != data.k() {
        return Err(Error::dim("draw store dimension", data.k(), store.k()));
    }
    Ok(())
}

/// Residual for observation `i`.
pub fn rho(data: &Dataset, model: &ModelSpec, gamma: &[f64], source: MomentSource<'_>, i: usize) -> Result<Residual> {
    check(data, model, gamma, &Weight::identity())?;
    if i >= data.len() {
        return Err(Error::Config(format!("observation {i} out of range")));
    }
    let m = source.moments(model, data.z(i), gamma, i)?;
    Ok(Residual::new(data.y()[i], m))
}

/// All residuals at `γ`.
pub fn residuals(data: &Dataset, model: &ModelSpec, gamma: &[f64], source: MomentSource<'_>) -> Result<Vec<Residual>> {
    check(data, model, gamma, &Weight::identity())?;
    (0..data.len())
        .map(|i| Ok(Residual::new(data.y()[i], source.moments(model, data.z(i), gamma, i)?)))
        .collect()
}

/// `Q_n(γ)`.
pub fn q_n(data: &Dataset, model: &ModelSpec, gamma: &[f64], weight: &Weight, source: MomentSource<'_>) -> Result<f64> {
    check(data, model, gamma, weight)?;
    let mut total = 0.0;
    for i in 0..data.len() {
        let r = Residual::new(data.y()[i], source.moments(model, data.z(i), gamma, i)?);
        total += bilinear(r, weight.at(i), r);
    }
    Ok(total)
}

/// `Q_n(γ)` and `∂Q_n/∂γ = 2 Σ_i (∂ρ_i′/∂γ) W_i ρ_i`.
pub fn grad_q_n(
    data: &Dataset,
    model: &ModelSpec,
    gamma: &[f64],
    weight: &Weight,
    source: MomentSource<'_>,
) -> Result<(f64, Vec<f64>)> {
    check(data, model, gamma, weight)?;
    let n = gamma.len();
    let (mut d1, mut d2) = (vec![0.0; n], vec![0.0; n]);
    let mut grad = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..data.len() {
        let m = source.moments_with_gradient(model, data.z(i), gamma, i, &mut d1, &mut d2)?;
        let r = Residual::new(data.y()[i], m);
        let w = weight.at(i);
        total += bilinear(r, w, r);
        let wr = times(w, r);
        for j in 0..n {
            let term = -(d1[j] * wr[0] + d2[j] * wr[1]);
            grad[j] += 2.0 * term;
        }
    }
    Ok((total, grad))
}

/// `Q_{n,S}(γ)`; not necessarily nonnegative.
pub fn q_ns(data: &Dataset, model: &ModelSpec, gamma: &[f64], weight: &Weight, store: &DrawStore) -> Result<f64> {
    check(data, model, gamma, weight)?;
    check_store(data, store)?;
    q_ns_accumulate(data, model, gamma, weight, store, 0.0)
}

fn q_ns_accumulate(data: &Dataset, model: &ModelSpec, gamma: &[f64], weight: &Weight, store: &DrawStore, mut total: f64) -> Result<f64> {
    let first = MomentSource::Simulated(store, Half::First);
    let second = MomentSource::Simulated(store, Half::Second);
    for i in store.offset()..store.offset() + store.n() {
        let z = data.z(i);
        let a = Residual::new(data.y()[i], first.moments(model, z, gamma, i)?);
        let b = Residual::new(data.y()[i], second.moments(model, z, gamma, i)?);
        total += bilinear(a, weight.at(i), b);
    }
    Ok(total)
}

/// `Q_{n,S}(γ)` evaluated without materializing the whole store: draws are
/// regenerated `chunk` observations at a time. Bit-identical to [`q_ns`] on
/// `DrawStore::build(n, s, k, phi, seed)`.
#[allow(clippy::too_many_arguments)]
pub fn q_ns_chunked(
    data: &Dataset,
    model: &ModelSpec,
    gamma: &[f64],
    weight: &Weight,
    phi: &ImportanceDensity,
    seed: u64,
    s: usize,
    chunk: usize,
) -> Result<f64> {
    check(data, model, gamma, weight)?;
    if chunk == 0 {
        return Err(Error::Config("chunk size must be positive".into()));
    }
    let mut total = 0.0;
    let mut start = 0;
    while start < data.len() {
        let end = (start + chunk).min(data.len());
        let store = DrawStore::build_range(start..end, s, data.k(), phi, seed)?;
        total = q_ns_accumulate(data, model, gamma, weight, &store, total)?;
        start = end;
    }
    Ok(total)
}

/// `Q_{n,S}(γ)` and its gradient
/// `Σ_i [(∂ρ_i^{(S)′}/∂γ) W_i ρ_i^{(2S)} + (∂ρ_i^{(2S)′}/∂γ) W_i ρ_i^{(S)}]`.
pub fn grad_q_ns(data: &Dataset, model: &ModelSpec, gamma: &[f64], weight: &Weight, store: &DrawStore) -> Result<(f64, Vec<f64>)> {
    check(data, model, gamma, weight)?;
    check_store(data, store)?;
    let n = gamma.len();
    let (mut a1, mut a2) = (vec![0.0; n], vec![0.0; n]);
    let (mut b1, mut b2) = (vec![0.0; n], vec![0.0; n]);
    let mut grad = vec![0.0; n];
    let mut total = 0.0;
    let first = MomentSource::Simulated(store, Half::First);
    let second = MomentSource::Simulated(store, Half::Second);
    for i in 0..data.len() {
        let z = data.z(i);
        let y = data.y()[i];
        let ra = Residual::new(y, first.moments_with_gradient(model, z, gamma, i, &mut a1, &mut a2)?);
        let rb = Residual::new(y, second.moments_with_gradient(model, z, gamma, i, &mut b1, &mut b2)?);
        let w = weight.at(i);
        total += bilinear(ra, w, rb);
        let wb = times(w, rb);
        let wa = times(w, ra);
        for j in 0..n {
            let ta = -(a1[j] * wb[0] + a2[j] * wb[1]);
            let tb = -(b1[j] * wa[0] + b2[j] * wa[1]);
            grad[j] += ta + tb;
        }
    }
    Ok((total, grad))
}

/// `V̂ = (1/n) Σ_i ρ_i ρ_i′` at `γ̂`.
pub fn estimate_v(data: &Dataset, model: &ModelSpec, gamma: &[f64], source: MomentSource<'_>) -> Result<Matrix2<f64>> {
    let res = residuals(data, model, gamma, source)?;
    let n = res.len() as f64;
    let (mut v11, mut v22, mut v12) = (0.0, 0.0, 0.0);
    for r in &res {
        v11 += r.r1 * r.r1;
        v22 += r.r2 * r.r2;
        v12 += r.r1 * r.r2;
    }
    Ok(Matrix2::new(v11 / n, v12 / n, v12 / n, v22 / n))
}

/// Result of conditioning `V̂` before inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedV {
    /// The (possibly shrunk) covariance.
    pub v: Matrix2<f64>,
    /// `V̂⁻¹`, or the identity when `V̂` is degenerate.
    pub inverse: Matrix2<f64>,
    /// Shrinkage `λ` applied toward `diag(v̂11, v̂22)`, if any.
    pub shrinkage: Option<f64>,
    /// True when `V̂` had a zero diagonal and the identity weight was kept.
    pub identity_fallback: bool,
}

const SHRINK_STEPS: [f64; 4] = [0.01, 0.05, 0.1, 1.0];

/// Shrinks `V̂` toward its diagonal when `det V̂ ≤ 1e-10 v̂11 v̂22`, using the
/// smallest `λ ∈ {0.01, 0.05, 0.1, 1}` that restores conditioning.
pub fn condition_v(v: &Matrix2<f64>) -> ConditionedV {
    let (v11, v22, v12) = (v[(0, 0)], v[(1, 1)], v[(0, 1)]);
    let bound = 1e-10 * v11 * v22;
    if !(v11 > 0.0 && v22 > 0.0) || !bound.is_finite() {
        return ConditionedV {
            v: *v,
            inverse: Matrix2::identity(),
            shrinkage: None,
            identity_fallback: true,
        };
    }
    let inverse_of = |m: &Matrix2<f64>| {
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        Matrix2::new(m[(1, 1)] / det, -m[(0, 1)] / det, -m[(1, 0)] / det, m[(0, 0)] / det)
    };
    let det = v11 * v22 - v12 * v12;
    if det > bound {
        return ConditionedV {
            v: *v,
            inverse: inverse_of(v),
            shrinkage: None,
            identity_fallback: false,
        };
    }
    for lambda in SHRINK_STEPS {
        let off = (1.0 - lambda) * v12;
        let shrunk = Matrix2::new(v11, off, off, v22);
        if v11 * v22 - off * off > bound {
            return ConditionedV {
                v: shrunk,
                inverse: inverse_of(&shrunk),
                shrinkage: Some(lambda),
                identity_fallback: false,
            };
        }
    }
    unreachable!("lambda = 1 always restores conditioning when the diagonal is positive")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::builtin;

    fn one_obs(y: f64, z: &[f64]) -> Dataset {
        Dataset::new(vec![y], z.to_vec(), z.len()).unwrap()
    }

    #[test]
    fn residual_example1() {
        let m = builtin("example1", None).unwrap();
        let d = one_obs(2.0, &[0.0, 0.0]);
        let r = rho(&d, &m, &[1.0, 1.0, 1.0, 1.0, 1.0], MomentSource::Closed, 0).unwrap();
        assert!((r.r1 - 0.351_279).abs() < 1e-6);
        assert!((r.r2 + 5.389_056).abs() < 1e-6);
    }

    #[test]
    fn residual_zero_at_moments() {
        let m = builtin("example3", None).unwrap();
        let g = [0.5, -0.2, 0.3, 0.1, 0.2, 0.6, 0.4];
        let z = [0.3, -0.7];
        let mp = m.closed_moments().unwrap().moments(&z, &g);
        let r = Residual::new(mp.m1, mp);
        assert_eq!(r.r1, 0.0);
        // y² − m2 vanishes only when y² = m2, i.e. zero conditional variance
        assert!((r.r2 - (mp.m1 * mp.m1 - mp.m2)).abs() < 1e-15);
    }

    #[test]
    fn bilinear_forms() {
        let w = Matrix2::identity();
        let r = Residual { r1: 3.0, r2: 4.0 };
        assert_eq!(bilinear(r, &w, r), 25.0);
        assert_eq!(bilinear(r, &Matrix2::zeros(), r), 0.0);
    }

    #[test]
    fn v_hat_by_hand() {
        // m1 = 0 and m2 = 1, so residuals are (1, 0), (−1, 0), (2, 3)
        let m = crate::builtin::constant_model(1, 1.0).unwrap();
        let d = Dataset::new(vec![1.0, -1.0, 2.0], vec![0.0; 3], 1).unwrap();
        let v = estimate_v(&d, &m, &[0.0, 1.0], MomentSource::Closed).unwrap();
        assert!((v[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((v[(1, 1)] - 3.0).abs() < 1e-15);
        assert!((v[(0, 1)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn shrinkage_restores_conditioning() {
        let v = Matrix2::new(1.0, 1.0, 1.0, 1.0);
        let c = condition_v(&v);
        assert_eq!(c.shrinkage, Some(0.01));
        let det = c.v.determinant();
        assert!(det > 1e-10);
        let good = Matrix2::new(2.0, 0.5, 0.5, 1.0);
        let c = condition_v(&good);
        assert_eq!(c.shrinkage, None);
        assert!((c.inverse * good - Matrix2::identity()).abs().max() < 1e-14);
        let zero = condition_v(&Matrix2::zeros());
        assert!(zero.identity_fallback);
        assert_eq!(zero.inverse, Matrix2::identity());
    }

    #[test]
    fn weight_validation() {
        assert!(Weight::Constant(Matrix2::new(1.0, 2.0, 2.0, 1.0)).validate(1).is_err());
        assert!(Weight::Constant(Matrix2::new(1.0, 0.5, 0.2, 1.0)).validate(1).is_err());
        assert!(Weight::Constant(Matrix2::new(1.0, 0.5, 0.5, 1.0)).validate(1).is_ok());
        let per = Weight::PerObservation(Arc::new(vec![Matrix2::identity(); 2]));
        assert!(per.validate(3).is_err());
    }
}
