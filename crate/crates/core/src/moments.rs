//! Exact conditional moments `m1(z; γ) = E[Y | Z = z]`,
//! `m2(z; γ) = E[Y² | Z = z]` and their gradients in `γ`.
//!
//! Closed forms exist for the built-in models. For any regression function
//! under normal measurement error, [`m_quad`] integrates against a
//! Gauss–Hermite rule and serves as an independent check on the closed forms
//! and the simulators.

use crate::error::{Error, Result};
use crate::model::{BuiltinKind, ModelSpec, MomentPair};
use crate::quadrature::{QuadratureRule, DEFAULT_ORDER};

fn check_gamma(model: &ModelSpec, z: &[f64], gamma: &[f64]) -> Result<()> {
    let d = model.dims();
    if z.len() != d.k {
        return Err(Error::dim("z", d.k, z.len()));
    }
    if gamma.len() != d.len() {
        return Err(Error::dim("parameter vector", d.len(), gamma.len()));
    }
    Ok(())
}

fn closed<'a>(model: &'a ModelSpec) -> Result<&'a dyn crate::model::ClosedMoments> {
    model.closed_moments().ok_or_else(|| {
        Error::Unsupported(format!(
            "model '{}' has no closed-form moments; use quadrature (normal errors, k <= 3) or simulated moments",
            model.name()
        ))
    })
}

fn finite_or_err(model: &ModelSpec, z: &[f64], m: MomentPair) -> Result<MomentPair> {
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::Evaluation(format!(
            "moments of '{}' at z = {z:?} are not finite ({}, {})",
            model.name(),
            m.m1,
            m.m2
        )))
    }
}

pub fn m1_closed(model: &ModelSpec, z: &[f64], gamma: &[f64]) -> Result<f64> {
    check_gamma(model, z, gamma)?;
    Ok(finite_or_err(model, z, closed(model)?.moments(z, gamma))?.m1)
}

pub fn m2_closed(model: &ModelSpec, z: &[f64], gamma: &[f64]) -> Result<f64> {
    check_gamma(model, z, gamma)?;
    Ok(finite_or_err(model, z, closed(model)?.moments(z, gamma))?.m2)
}

/// Closed-form moments and gradients in one call.
pub fn closed_with_gradient(model: &ModelSpec, z: &[f64], gamma: &[f64]) -> Result<(MomentPair, Vec<f64>, Vec<f64>)> {
    check_gamma(model, z, gamma)?;
    let n = gamma.len();
    let (mut d1, mut d2) = (vec![0.0; n], vec![0.0; n]);
    let m = closed(model)?.moments_with_gradient(z, gamma, &mut d1, &mut d2);
    Ok((finite_or_err(model, z, m)?, d1, d2))
}

fn normal_variance(model: &ModelSpec, gamma: &[f64]) -> Result<f64> {
    let psi = &gamma[model.dims().psi_range()];
    model.density().validate(psi).map_err(Error::Domain)?;
    model.density().normal_variance(psi).ok_or_else(|| {
        Error::Unsupported(format!(
            "quadrature oracle requires a normal error density, model '{}' uses '{}'",
            model.name(),
            model.density().name()
        ))
    })
}

/// Moments by quadrature against the standard-normal `rule`, rescaled to the
/// current `σ_δ²`.
pub fn m_quad(model: &ModelSpec, z: &[f64], gamma: &[f64], rule: &QuadratureRule) -> Result<MomentPair> {
    check_gamma(model, z, gamma)?;
    if rule.dim() != model.dims().k {
        return Err(Error::dim("quadrature rule dimension", model.dims().k, rule.dim()));
    }
    let sd = normal_variance(model, gamma)?.sqrt() / rule.variance().sqrt();
    let d = model.dims();
    let theta = &gamma[d.theta_range()];
    let mut x = vec![0.0; d.k];
    let (mut s1, mut s2) = (0.0, 0.0);
    for (j, w) in rule.weights().iter().enumerate() {
        for ((xi, zi), u) in x.iter_mut().zip(z).zip(rule.node(j)) {
            *xi = zi + sd * u;
        }
        let g = model.regression().value(&x, theta);
        s1 += w * g;
        s2 += w * g * g;
    }
    finite_or_err(
        model,
        z,
        MomentPair {
            m1: s1,
            m2: s2 + gamma[d.sigma_index()],
        },
    )
}

/// Quadrature moments together with gradients. The ψ-derivatives use
/// `∫ h ∂f/∂ψ dt = E[h · (∂f/∂ψ)/f]`, evaluated on the same nodes.
pub fn m_quad_with_gradient(
    model: &ModelSpec,
    z: &[f64],
    gamma: &[f64],
    rule: &QuadratureRule,
    d1: &mut [f64],
    d2: &mut [f64],
) -> Result<MomentPair> {
    check_gamma(model, z, gamma)?;
    if rule.dim() != model.dims().k {
        return Err(Error::dim("quadrature rule dimension", model.dims().k, rule.dim()));
    }
    let sd = normal_variance(model, gamma)?.sqrt() / rule.variance().sqrt();
    let d = model.dims();
    let theta = &gamma[d.theta_range()];
    let psi = &gamma[d.psi_range()];
    let mut x = vec![0.0; d.k];
    let mut t = vec![0.0; d.k];
    let mut dg = vec![0.0; d.p];
    let mut df = vec![0.0; d.q];
    d1.fill(0.0);
    d2.fill(0.0);
    let (mut s1, mut s2) = (0.0, 0.0);
    for (j, w) in rule.weights().iter().enumerate() {
        for (((xi, ti), zi), u) in x.iter_mut().zip(t.iter_mut()).zip(z).zip(rule.node(j)) {
            *ti = sd * u;
            *xi = zi + *ti;
        }
        let (g, _) = model.g_value_and_gradient(&x, theta, &mut dg);
        s1 += w * g;
        s2 += w * g * g;
        for a in 0..d.p {
            d1[a] += w * dg[a];
            d2[a] += 2.0 * w * g * dg[a];
        }
        if d.q > 0 {
            let (f, _) = model.density_value_and_gradient(&t, psi, &mut df);
            for b in 0..d.q {
                let score = df[b] / f;
                d1[d.p + b] += w * g * score;
                d2[d.p + b] += w * g * g * score;
            }
        }
    }
    d1[d.sigma_index()] = 0.0;
    d2[d.sigma_index()] = 1.0;
    finite_or_err(
        model,
        z,
        MomentPair {
            m1: s1,
            m2: s2 + gamma[d.sigma_index()],
        },
    )
}

fn gradients(model: &ModelSpec, z: &[f64], gamma: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if model.closed_moments().is_some() {
        let (_, d1, d2) = closed_with_gradient(model, z, gamma)?;
        return Ok((d1, d2));
    }
    let rule = QuadratureRule::standard(DEFAULT_ORDER, model.dims().k)?;
    let n = gamma.len();
    let (mut d1, mut d2) = (vec![0.0; n], vec![0.0; n]);
    m_quad_with_gradient(model, z, gamma, &rule, &mut d1, &mut d2)?;
    Ok((d1, d2))
}

/// `∂m1/∂γ`: closed form when available, otherwise differentiated
/// quadrature (order 20).
pub fn grad_m1(model: &ModelSpec, z: &[f64], gamma: &[f64]) -> Result<Vec<f64>> {
    Ok(gradients(model, z, gamma)?.0)
}

pub fn grad_m2(model: &ModelSpec, z: &[f64], gamma: &[f64]) -> Result<Vec<f64>> {
    Ok(gradients(model, z, gamma)?.1)
}

fn reparam_kind(model: &ModelSpec) -> Result<BuiltinKind> {
    match model.kind() {
        Some(k @ (BuiltinKind::Example1 | BuiltinKind::Example2)) => Ok(k),
        _ => Err(Error::Unsupported(format!(
            "no reduced-form reparameterization for model '{}'",
            model.name()
        ))),
    }
}

/// Maps structural parameters `(θ, σ_δ², σ_ε²)` to the reduced-form
/// coefficients `ϕ` of the moment regressions.
///
/// - `example1`: `ϕ = (θ1, θ2, θ3 e^{θ2² s/2}, θ1² s + σ_ε², θ3² e^{2θ2² s})`
/// - `example2`: `ϕ = (θ1 e^{|θ2|² s/2}, θ2, θ1² e^{2|θ2|² s}, σ_ε²)`
pub fn theta_to_phi(model: &ModelSpec, gamma: &[f64]) -> Result<Vec<f64>> {
    let kind = reparam_kind(model)?;
    let d = model.dims();
    if gamma.len() != d.len() {
        return Err(Error::dim("parameter vector", d.len(), gamma.len()));
    }
    Ok(match kind {
        BuiltinKind::Example1 => {
            let (t1, t2, t3, s, se) = (gamma[0], gamma[1], gamma[2], gamma[3], gamma[4]);
            vec![
                t1,
                t2,
                t3 * (0.5 * t2 * t2 * s).exp(),
                t1 * t1 * s + se,
                t3 * t3 * (2.0 * t2 * t2 * s).exp(),
            ]
        }
        _ => {
            let k = d.k;
            let (t1, t2, s, se) = (gamma[0], &gamma[1..=k], gamma[k + 1], gamma[k + 2]);
            let b: f64 = t2.iter().map(|v| v * v).sum();
            let mut phi = Vec::with_capacity(k + 3);
            phi.push(t1 * (0.5 * b * s).exp());
            phi.extend_from_slice(t2);
            phi.push(t1 * t1 * (2.0 * b * s).exp());
            phi.push(se);
            phi
        }
    })
}

/// Inverse of [`theta_to_phi`].
///
/// The amplitude is recovered as `θ3 = ϕ3 / √(ϕ5/ϕ3²)` (example1) and
/// `θ1 = ϕ1 / √(ϕ3/ϕ1²)` (example2), which keeps the sign of the reduced
/// coefficient.
pub fn phi_to_theta(model: &ModelSpec, phi: &[f64]) -> Result<Vec<f64>> {
    let kind = reparam_kind(model)?;
    let d = model.dims();
    if phi.len() != d.len() {
        return Err(Error::dim("reduced-form vector", d.len(), phi.len()));
    }
    match kind {
        BuiltinKind::Example1 => {
            let (p1, p2, p3, p4, p5) = (phi[0], phi[1], phi[2], phi[3], phi[4]);
            if p2 == 0.0 || p3 == 0.0 || p5 <= 0.0 {
                return Err(Error::SingularMap(format!(
                    "example1 inverse needs phi2 != 0, phi3 != 0, phi5 > 0 (got {p2}, {p3}, {p5})"
                )));
            }
            let ratio = p5 / (p3 * p3);
            let s = ratio.ln() / (p2 * p2);
            Ok(vec![p1, p2, p3 / ratio.sqrt(), s, p4 - p1 * p1 * s])
        }
        _ => {
            let k = d.k;
            let (p1, p2, p3, p4) = (phi[0], &phi[1..=k], phi[k + 1], phi[k + 2]);
            let b: f64 = p2.iter().map(|v| v * v).sum();
            if b == 0.0 || p1 == 0.0 || p3 <= 0.0 {
                return Err(Error::SingularMap(format!(
                    "example2 inverse needs phi2 != 0, phi1 != 0, phi3 > 0 (got |phi2|^2 = {b}, {p1}, {p3})"
                )));
            }
            let ratio = p3 / (p1 * p1);
            let mut out = Vec::with_capacity(k + 3);
            out.push(p1 / ratio.sqrt());
            out.extend_from_slice(p2);
            out.push(ratio.ln() / b);
            out.push(p4);
            Ok(out)
        }
    }
}
