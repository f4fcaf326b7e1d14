//! Sandwich covariance `B⁻¹ C B⁻¹ / n` for the distance and simulated
//! estimators, standard errors, Wald intervals and the simulation
//! efficiency-gap diagnostic.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelSpec};
use crate::objective::{MomentSource, Residual, Weight};
use crate::simulated::{DrawStore, Half};

/// Largest condition number of `B̂` for which a covariance is reported.
pub const MAX_CONDITION: f64 = 1e10;

/// `B̂`, `Ĉ` and the sample size they were averaged over.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichParts {
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub n: usize,
}

/// Moment gradients and residual for one observation.
struct Term {
    d1: Vec<f64>,
    d2: Vec<f64>,
    r: Residual,
}

fn term(data: &Dataset, model: &ModelSpec, gamma: &[f64], source: MomentSource<'_>, i: usize, t: &mut Term) -> Result<()> {
    let m = source.moments_with_gradient(model, data.z(i), gamma, i, &mut t.d1, &mut t.d2)?;
    t.r = Residual::new(data.y()[i], m);
    Ok(())
}

fn new_term(d: usize) -> Term {
    Term {
        d1: vec![0.0; d],
        d2: vec![0.0; d],
        r: Residual { r1: 0.0, r2: 0.0 },
    }
}

fn check(data: &Dataset, model: &ModelSpec, gamma: &[f64], weight: &Weight) -> Result<()> {
    let d = model.dims();
    if gamma.len() != d.len() {
        return Err(Error::dim("parameter vector", d.len(), gamma.len()));
    }
    if data.k() != d.k {
        return Err(Error::dim("data predictor dimension", d.k, data.k()));
    }
    if data.is_empty() {
        return Err(Error::data(None, "empty dataset"));
    }
    weight.validate(data.len())?;
    model.density().validate(&gamma[d.psi_range()]).map_err(Error::Domain)
}

/// `(∂ρ_a′/∂γ)_i W (∂ρ_b/∂γ′)_j`; the residual signs cancel.
#[inline]
fn cross(a: &Term, w: &nalgebra::Matrix2<f64>, b: &Term, i: usize, j: usize) -> f64 {
    w[(0, 0)] * a.d1[i] * b.d1[j] + w[(0, 1)] * a.d1[i] * b.d2[j] + w[(1, 0)] * a.d2[i] * b.d1[j] + w[(1, 1)] * a.d2[i] * b.d2[j]
}

/// `(∂ρ′/∂γ) W ρ_other`.
#[inline]
fn score(a: &Term, w: &nalgebra::Matrix2<f64>, other: Residual, out: &mut [f64]) {
    let w1 = w[(0, 0)] * other.r1 + w[(0, 1)] * other.r2;
    let w2 = w[(1, 0)] * other.r1 + w[(1, 1)] * other.r2;
    for (j, o) in out.iter_mut().enumerate() {
        *o = -(a.d1[j] * w1 + a.d2[j] * w2);
    }
}

/// `B̂ = (1/n) Σ_i (∂ρ_i′/∂γ) W_i (∂ρ_i/∂γ′)`.
pub fn estimate_b(data: &Dataset, model: &ModelSpec, gamma: &[f64], weight: &Weight, source: MomentSource<'_>) -> Result<DMatrix<f64>> {
    check(data, model, gamma, weight)?;
    let d = gamma.len();
    let mut t = new_term(d);
    let mut b = DMatrix::zeros(d, d);
    for obs in 0..data.len() {
        term(data, model, gamma, source, obs, &mut t)?;
        let w = weight.at(obs);
        for i in 0..d {
            for j in 0..d {
                b[(i, j)] += cross(&t, w, &t, i, j);
            }
        }
    }
    Ok(b / data.len() as f64)
}

/// `B̂_S = (1/2n) Σ_i [(∂ρ_i^{(S)′}/∂γ) W_i (∂ρ_i^{(2S)}/∂γ′) + (∂ρ_i^{(2S)′}/∂γ) W_i (∂ρ_i^{(S)}/∂γ′)]`,
/// the Hessian of `Q_{n,S}/(2n)` without second-derivative terms.
pub fn estimate_b_simulated(data: &Dataset, model: &ModelSpec, gamma: &[f64], weight: &Weight, store: &DrawStore) -> Result<DMatrix<f64>> {
    check(data, model, gamma, weight)?;
    let d = gamma.len();
    let (mut a, mut b) = (new_term(d), new_term(d));
    let mut out = DMatrix::zeros(d, d);
    for obs in 0..data.len() {
        term(data, model, gamma, MomentSource::Simulated(store, Half::First), obs, &mut a)?;
        term(data, model, gamma, MomentSource::Simulated(store, Half::Second), obs, &mut b)?;
        let w = weight.at(obs);
        for i in 0..d {
            for j in 0..d {
                out[(i, j)] += cross(&a, w, &b, i, j) + cross(&b, w, &a, i, j);
            }
        }
    }
    Ok(out / (2 * data.len()) as f64)
}

/// `Ĉ = (1/n) Σ_i v_i v_i′` with `v_i = (∂ρ_i′/∂γ) W_i ρ_i`.
pub fn estimate_c(data: &Dataset, model: &ModelSpec, gamma: &[f64], weight: &Weight, source: MomentSource<'_>) -> Result<DMatrix<f64>> {
    check(data, model, gamma, weight)?;
    let d = gamma.len();
    let mut t = new_term(d);
    let mut v = vec![0.0; d];
    let mut c = DMatrix::zeros(d, d);
    for obs in 0..data.len() {
        term(data, model, gamma, source, obs, &mut t)?;
        score(&t, weight.at(obs), t.r, &mut v);
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] += v[i] * v[j];
            }
        }
    }
    Ok(c / data.len() as f64)
}

/// `Ĉ_S = (1/4n) Σ_i u_i u_i′` with
/// `u_i = (∂ρ_i^{(S)′}/∂γ) W_i ρ_i^{(2S)} + (∂ρ_i^{(2S)′}/∂γ) W_i ρ_i^{(S)}`.
pub fn estimate_cs(data: &Dataset, model: &ModelSpec, gamma: &[f64], weight: &Weight, store: &DrawStore) -> Result<DMatrix<f64>> {
    check(data, model, gamma, weight)?;
    let d = gamma.len();
    let (mut a, mut b) = (new_term(d), new_term(d));
    let (mut ua, mut ub) = (vec![0.0; d], vec![0.0; d]);
    let mut c = DMatrix::zeros(d, d);
    for obs in 0..data.len() {
        term(data, model, gamma, MomentSource::Simulated(store, Half::First), obs, &mut a)?;
        term(data, model, gamma, MomentSource::Simulated(store, Half::Second), obs, &mut b)?;
        let w = weight.at(obs);
        score(&a, w, b.r, &mut ua);
        score(&b, w, a.r, &mut ub);
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] += (ua[i] + ub[i]) * (ua[j] + ub[j]);
            }
        }
    }
    Ok(c / (4 * data.len()) as f64)
}

/// Covariance `B̂⁻¹ Ĉ B̂⁻¹ / n` and standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Sandwich {
    pub covariance: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    pub condition: f64,
}

/// Condition number `σ_max/σ_min` of a square matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

pub fn sandwich(parts: &SandwichParts) -> Result<Sandwich> {
    let d = parts.b.nrows();
    if parts.b.ncols() != d || parts.c.nrows() != d || parts.c.ncols() != d {
        return Err(Error::dim("sandwich matrices", d, parts.c.nrows()));
    }
    if parts.n == 0 {
        return Err(Error::Config("sandwich needs n >= 1".into()));
    }
    if !parts.b.iter().chain(parts.c.iter()).all(|v| v.is_finite()) {
        return Err(Error::InferenceUnavailable {
            reason: "B or C has non-finite entries".into(),
            condition: f64::NAN,
        });
    }
    let svd = parts.b.clone().svd(true, true);
    let max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let min = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition < MAX_CONDITION) {
        return Err(Error::InferenceUnavailable {
            reason: "B is singular or ill-conditioned".into(),
            condition,
        });
    }
    let b_inv = svd
        .pseudo_inverse(0.0)
        .map_err(|e| Error::InferenceUnavailable {
            reason: e.to_string(),
            condition,
        })?;
    let m = &b_inv * &parts.c * &b_inv / parts.n as f64;
    let covariance = (&m + m.transpose()) * 0.5;
    let std_errors = covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok(Sandwich {
        covariance,
        std_errors,
        condition,
    })
}

/// Two-sided normal quantile for a confidence level in `(0, 1)`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level must be in (0, 1), got {level}")));
    }
    let n = Normal::standard();
    Ok(n.inverse_cdf(0.5 + level / 2.0))
}

/// Wald interval `estimate ± z_{(1+level)/2} · se`.
pub fn wald_interval(estimate: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    let z = normal_quantile(level)?;
    Ok((estimate - z * se, estimate + z * se))
}

/// Difference between simulated and exact meat matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyGap {
    pub s: usize,
    pub gap: Vec<Vec<f64>>,
    pub trace: f64,
    /// `S · trace(gap)`; roughly constant in `S` when the gap is `O(1/S)`.
    pub scaled_trace: f64,
    pub min_eigenvalue: f64,
}

pub fn efficiency_gap(c: &DMatrix<f64>, cs: &DMatrix<f64>, s: usize) -> Result<EfficiencyGap> {
    if c.shape() != cs.shape() || c.nrows() != c.ncols() {
        return Err(Error::dim("efficiency gap matrices", c.nrows(), cs.nrows()));
    }
    let gap = cs - c;
    let sym = (&gap + gap.transpose()) * 0.5;
    let min_eigenvalue = SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let trace = gap.trace();
    Ok(EfficiencyGap {
        s,
        gap: rows(&gap),
        trace,
        scaled_trace: s as f64 * trace,
        min_eigenvalue,
    })
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_algebra() {
        let parts = SandwichParts {
            b: DMatrix::identity(3, 3),
            c: DMatrix::identity(3, 3),
            n: 100,
        };
        let s = sandwich(&parts).unwrap();
        assert!((s.covariance.clone() - DMatrix::identity(3, 3) / 100.0).abs().max() < 1e-15);
        for se in s.std_errors {
            assert!((se - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn diagonal_algebra() {
        let parts = SandwichParts {
            b: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 2.0])),
            c: DMatrix::identity(2, 2),
            n: 10,
        };
        let s = sandwich(&parts).unwrap();
        assert!((s.covariance[(0, 0)] - 1.0 / 40.0).abs() < 1e-15);
        assert_eq!(s.covariance[(0, 1)], 0.0);
    }

    #[test]
    fn singular_b_is_rejected() {
        let parts = SandwichParts {
            b: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            c: DMatrix::identity(2, 2),
            n: 10,
        };
        match sandwich(&parts) {
            Err(Error::InferenceUnavailable { condition, .. }) => assert!(condition >= MAX_CONDITION),
            other => panic!("expected inference error, got {other:?}"),
        }
    }

    #[test]
    fn quantile_and_interval() {
        assert!((normal_quantile(0.95).unwrap() - 1.959_963_984_540_054).abs() < 1e-9);
        let (lo, hi) = wald_interval(1.0, 0.5, 0.95).unwrap();
        assert!((hi - lo - 2.0 * 0.5 * 1.959_963_984_540_054).abs() < 1e-9);
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn zero_gap() {
        let c = DMatrix::identity(2, 2);
        let g = efficiency_gap(&c, &c, 25).unwrap();
        assert_eq!(g.trace, 0.0);
        assert_eq!(g.min_eigenvalue, 0.0);
    }
}
