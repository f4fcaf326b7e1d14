//! Importance-sampling simulators for the conditional moments.
//!
//! For each observation `i` a [`DrawStore`] holds `2S` i.i.d. draws `t_is`
//! from an importance density `φ`, split into two halves. The simulators
//!
//! ```text
//! m_{1,S}(Z_i; γ) = (1/S) Σ_{s ∈ half} g(Z_i + t_is; θ) f_δ(t_is; ψ) / φ(t_is)
//! m_{2,S}(Z_i; γ) = (1/S) Σ_{s ∈ half} g²(Z_i + t_is; θ) f_δ(t_is; ψ) / φ(t_is) + σ_ε²
//! ```
//!
//! are deterministic smooth functions of `γ` once the store is built, so the
//! simulated objective can be handed to an ordinary optimizer.
//!
//! Draws for observation `i` come from `ChaCha8Rng::seed_from_u64(seed)`
//! switched to stream `i`, consumed in order `s = 0..2S`. Any subset of
//! observations can therefore be regenerated on its own and is bit-identical
//! to the corresponding slice of the full store.

use std::ops::Range;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{Derivative, ErrorDensity, ModelSpec, MomentPair, ParamSpace};

/// A sampling density `φ` on `R^k` with full support.
pub trait Proposal: Send + Sync {
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    fn density(&self, t: &[f64]) -> f64;
    fn sample(&self, rng: &mut dyn RngCore, out: &mut [f64]);
    fn mean(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

/// Product of independent scaled Student-t densities.
#[derive(Debug, Clone)]
pub struct StudentTProduct {
    k: usize,
    nu: f64,
    scale: f64,
    log_norm: f64,
    dist: StudentT<f64>,
}

impl StudentTProduct {
    pub fn new(k: usize, nu: f64, scale: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("importance density needs k >= 1".into()));
        }
        if !(nu.is_finite() && nu > 0.0 && scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!(
                "student-t importance density needs nu > 0 and scale > 0 (got {nu}, {scale})"
            )));
        }
        let log_norm = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln() - scale.ln();
        let dist = StudentT::new(nu).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            k,
            nu,
            scale,
            log_norm,
            dist,
        })
    }
}

impl Proposal for StudentTProduct {
    fn name(&self) -> String {
        format!("student-t(nu={}, scale={})", self.nu, self.scale)
    }

    fn dim(&self) -> usize {
        self.k
    }

    fn density(&self, t: &[f64]) -> f64 {
        let mut log = self.k as f64 * self.log_norm;
        for v in t {
            let u = v / self.scale;
            log -= 0.5 * (self.nu + 1.0) * (u * u / self.nu).ln_1p();
        }
        log.exp()
    }

    fn sample(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.scale * self.dist.sample(rng);
        }
    }
}

/// `φ = f_δ(·; ψ0)` for a fixed `ψ0`.
struct MatchingDensity {
    density: Arc<dyn ErrorDensity>,
    psi: Vec<f64>,
}

impl Proposal for MatchingDensity {
    fn name(&self) -> String {
        format!("{}(psi={:?})", self.density.name(), self.psi)
    }

    fn dim(&self) -> usize {
        self.density.dim()
    }

    fn density(&self, t: &[f64]) -> f64 {
        self.density.density(t, &self.psi)
    }

    fn sample(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        self.density.sample(&self.psi, rng, out);
    }
}

/// Shared handle to an importance density.
#[derive(Clone)]
pub struct ImportanceDensity {
    inner: Arc<dyn Proposal>,
}

impl std::fmt::Debug for ImportanceDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("ImportanceDensity").field(&self.inner.name()).finish()
    }
}

/// Degrees of freedom of the default importance density.
pub const DEFAULT_NU: f64 = 5.0;

impl ImportanceDensity {
    pub fn new(proposal: Arc<dyn Proposal>) -> Self {
        Self { inner: proposal }
    }

    pub fn student_t(k: usize, nu: f64, scale: f64) -> Result<Self> {
        Ok(Self::new(Arc::new(StudentTProduct::new(k, nu, scale)?)))
    }

    /// Default `φ`: independent t₅ coordinates scaled by the largest `σ_δ`
    /// the ψ-box allows.
    pub fn default_for(model: &ModelSpec, space: &ParamSpace) -> Result<Self> {
        Self::default_with_nu(model, space, DEFAULT_NU)
    }

    pub fn default_with_nu(model: &ModelSpec, space: &ParamSpace, nu: f64) -> Result<Self> {
        let d = model.dims();
        let upper = &space.upper()[d.psi_range()];
        let scale = model
            .density()
            .normal_variance(upper)
            .map(f64::sqrt)
            .unwrap_or_else(|| upper.iter().copied().fold(1.0, f64::max).sqrt());
        Self::student_t(d.k, nu, scale)
    }

    /// `φ = f_δ(·; ψ)`; the importance weights are exactly 1 at that `ψ`.
    pub fn matching(model: &ModelSpec, psi: &[f64]) -> Result<Self> {
        model.density().validate(psi).map_err(Error::Domain)?;
        Ok(Self::new(Arc::new(MatchingDensity {
            density: model.shared_density(),
            psi: psi.to_vec(),
        })))
    }

    pub fn tag(&self) -> String {
        self.inner.name()
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn density(&self, t: &[f64]) -> f64 {
        self.inner.density(t)
    }

    pub fn mean(&self) -> Vec<f64> {
        self.inner.mean()
    }

    pub fn sample(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        self.inner.sample(rng, out)
    }
}

/// Which half of the `2S` draws a simulator uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Half {
    /// `s = 1..S`
    First,
    /// `s = S+1..2S`
    Second,
}

/// Frozen importance-sampling draws for a contiguous range of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawStore {
    offset: usize,
    n: usize,
    s: usize,
    k: usize,
    seed: u64,
    tag: String,
    draws: Vec<f64>,
    phi: Vec<f64>,
}

/// RNG for observation `i` of a store with the given seed.
pub fn observation_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

impl DrawStore {
    /// Draws for observations `0..n`.
    pub fn build(n: usize, s: usize, k: usize, phi: &ImportanceDensity, seed: u64) -> Result<Self> {
        Self::build_range(0..n, s, k, phi, seed)
    }

    /// Draws for observations in `range` only, identical to the same rows of
    /// the full store.
    pub fn build_range(range: Range<usize>, s: usize, k: usize, phi: &ImportanceDensity, seed: u64) -> Result<Self> {
        let n = range.len();
        if n == 0 || s == 0 {
            return Err(Error::Config(format!("draw store needs n >= 1 and S >= 1 (got n = {n}, S = {s})")));
        }
        if phi.dim() != k {
            return Err(Error::dim("importance density dimension", k, phi.dim()));
        }
        let per = 2 * s;
        let mut draws = vec![0.0; n * per * k];
        let mut dens = vec![0.0; n * per];
        for (local, i) in range.clone().enumerate() {
            let mut rng = observation_rng(seed, i);
            for j in 0..per {
                let at = (local * per + j) * k;
                let t = &mut draws[at..at + k];
                phi.sample(&mut rng, t);
                let v = phi.density(t);
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Evaluation(format!(
                        "importance density is {v} at draw {j} of observation {i}"
                    )));
                }
                dens[local * per + j] = v;
            }
        }
        Ok(Self {
            offset: range.start,
            n,
            s,
            k,
            seed,
            tag: phi.tag(),
            draws,
            phi: dens,
        })
    }

    /// First observation index covered by the store.
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Simulation size `S` (each half holds `S` draws).
    pub fn s(&self) -> usize {
        self.s
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Draw `j ∈ 0..2S` for local observation `i`.
    #[inline]
    pub fn draw(&self, i: usize, j: usize) -> &[f64] {
        let at = (i * 2 * self.s + j) * self.k;
        &self.draws[at..at + self.k]
    }

    #[inline]
    pub fn phi(&self, i: usize, j: usize) -> f64 {
        self.phi[i * 2 * self.s + j]
    }

    pub fn half_range(&self, half: Half) -> Range<usize> {
        match half {
            Half::First => 0..self.s,
            Half::Second => self.s..2 * self.s,
        }
    }

    /// The same draws with the two halves exchanged.
    pub fn swapped_halves(&self) -> Self {
        let mut out = self.clone();
        let (s, k) = (self.s, self.k);
        for i in 0..self.n {
            for j in 0..s {
                for c in 0..k {
                    out.draws[(i * 2 * s + j) * k + c] = self.draws[(i * 2 * s + j + s) * k + c];
                    out.draws[(i * 2 * s + j + s) * k + c] = self.draws[(i * 2 * s + j) * k + c];
                }
                out.phi[i * 2 * s + j] = self.phi[i * 2 * s + j + s];
                out.phi[i * 2 * s + j + s] = self.phi[i * 2 * s + j];
            }
        }
        out
    }

    /// Largest importance weight `f_δ(t; ψ)/φ(t)` over the store and its
    /// ratio to the median weight.
    pub fn weight_stats(&self, model: &ModelSpec, psi: &[f64]) -> WeightStats {
        let mut w: Vec<f64> = (0..self.n)
            .flat_map(|i| (0..2 * self.s).map(move |j| (i, j)))
            .map(|(i, j)| model.density().density(self.draw(i, j), psi) / self.phi(i, j))
            .collect();
        let max = w.iter().copied().fold(0.0, f64::max);
        let mid = w.len() / 2;
        let median = *w.select_nth_unstable_by(mid, f64::total_cmp).1;
        WeightStats {
            max,
            median,
            ratio: if median > 0.0 { max / median } else { f64::INFINITY },
        }
    }
}

/// Weight diagnostics for a store at a parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightStats {
    pub max: f64,
    pub median: f64,
    pub ratio: f64,
}

/// Threshold on `max weight / median weight` above which a fit records a
/// warning.
pub const WEIGHT_RATIO_WARNING: f64 = 1e3;

fn check_args(model: &ModelSpec, z: &[f64], gamma: &[f64], store: &DrawStore, i: usize) -> Result<()> {
    let d = model.dims();
    if z.len() != d.k || store.k() != d.k {
        return Err(Error::dim("z", d.k, z.len()));
    }
    if gamma.len() != d.len() {
        return Err(Error::dim("parameter vector", d.len(), gamma.len()));
    }
    if i >= store.n() {
        return Err(Error::Config(format!("observation {i} outside draw store of size {}", store.n())));
    }
    model.density().validate(&gamma[d.psi_range()]).map_err(Error::Domain)
}

/// Simulated `(m_{1,·}, m_{2,·})` for local observation `i` of `store`.
pub(crate) fn simulate(model: &ModelSpec, z: &[f64], gamma: &[f64], store: &DrawStore, i: usize, half: Half) -> MomentPair {
    let d = model.dims();
    let theta = &gamma[d.theta_range()];
    let psi = &gamma[d.psi_range()];
    let mut x = [0.0; 8];
    let mut xv = Vec::new();
    let x: &mut [f64] = if d.k <= 8 {
        &mut x[..d.k]
    } else {
        xv.resize(d.k, 0.0);
        &mut xv
    };
    // Mean computed as anchor + Σ(a_s − anchor)/S; identical summands give
    // the summand back exactly.
    let (mut anchor1, mut anchor2) = (0.0, 0.0);
    let (mut sum1, mut sum2) = (0.0, 0.0);
    for (pos, j) in store.half_range(half).enumerate() {
        let t = store.draw(i, j);
        for ((xc, zc), tc) in x.iter_mut().zip(z).zip(t) {
            *xc = zc + tc;
        }
        let g = model.regression().value(x, theta);
        let w = model.density().density(t, psi) / store.phi(i, j);
        let a1 = g * w;
        let a2 = g * g * w;
        if pos == 0 {
            anchor1 = a1;
            anchor2 = a2;
        } else {
            sum1 += a1 - anchor1;
            sum2 += a2 - anchor2;
        }
    }
    let s = store.s() as f64;
    MomentPair {
        m1: anchor1 + sum1 / s,
        m2: anchor2 + sum2 / s + gamma[d.sigma_index()],
    }
}

/// Simulated moments and their exact `γ`-gradients for the frozen draws.
/// Returns whether any derivative fell back to finite differences.
pub(crate) fn simulate_with_gradient(
    model: &ModelSpec,
    z: &[f64],
    gamma: &[f64],
    store: &DrawStore,
    i: usize,
    half: Half,
    d1: &mut [f64],
    d2: &mut [f64],
) -> (MomentPair, bool) {
    let d = model.dims();
    let (p, q) = (d.p, d.q);
    let theta = &gamma[d.theta_range()];
    let psi = &gamma[d.psi_range()];
    let mut x = vec![0.0; d.k];
    let mut dg = vec![0.0; p];
    let mut df = vec![0.0; q];
    let mut anchor = vec![0.0; 2 * (p + q) + 2];
    let mut sum = vec![0.0; 2 * (p + q) + 2];
    let mut terms = vec![0.0; 2 * (p + q) + 2];
    let mut fallback = false;
    for (pos, j) in store.half_range(half).enumerate() {
        let t = store.draw(i, j);
        for ((xc, zc), tc) in x.iter_mut().zip(z).zip(t) {
            *xc = zc + tc;
        }
        let (g, fd_g) = model.g_value_and_gradient(&x, theta, &mut dg);
        let (f, fd_f) = model.density_value_and_gradient(t, psi, &mut df);
        fallback |= fd_g || fd_f;
        let phi = store.phi(i, j);
        let w = f / phi;
        terms[0] = g * w;
        terms[1] = g * g * w;
        for a in 0..p {
            terms[2 + a] = dg[a] * w;
            terms[2 + p + q + a] = (2.0 * g * dg[a]) * w;
        }
        for b in 0..q {
            let r = df[b] / phi;
            terms[2 + p + b] = g * r;
            terms[2 + 2 * p + q + b] = g * g * r;
        }
        if pos == 0 {
            anchor.copy_from_slice(&terms);
        } else {
            for ((s, t), a) in sum.iter_mut().zip(&terms).zip(&anchor) {
                *s += t - a;
            }
        }
    }
    let s = store.s() as f64;
    let mean = |c: usize| anchor[c] + sum[c] / s;
    for a in 0..p + q {
        d1[a] = mean(2 + a);
        d2[a] = mean(2 + p + q + a);
    }
    d1[d.sigma_index()] = 0.0;
    d2[d.sigma_index()] = 1.0;
    (
        MomentPair {
            m1: mean(0),
            m2: mean(1) + gamma[d.sigma_index()],
        },
        fallback,
    )
}

pub fn m1_s(model: &ModelSpec, z: &[f64], gamma: &[f64], store: &DrawStore, i: usize) -> Result<f64> {
    check_args(model, z, gamma, store, i)?;
    Ok(simulate(model, z, gamma, store, i, Half::First).m1)
}

pub fn m1_2s(model: &ModelSpec, z: &[f64], gamma: &[f64], store: &DrawStore, i: usize) -> Result<f64> {
    check_args(model, z, gamma, store, i)?;
    Ok(simulate(model, z, gamma, store, i, Half::Second).m1)
}

pub fn m2_s(model: &ModelSpec, z: &[f64], gamma: &[f64], store: &DrawStore, i: usize) -> Result<f64> {
    check_args(model, z, gamma, store, i)?;
    Ok(simulate(model, z, gamma, store, i, Half::First).m2)
}

pub fn m2_2s(model: &ModelSpec, z: &[f64], gamma: &[f64], store: &DrawStore, i: usize) -> Result<f64> {
    check_args(model, z, gamma, store, i)?;
    Ok(simulate(model, z, gamma, store, i, Half::Second).m2)
}

/// Both simulated moments for one half.
pub fn simulated_moments(model: &ModelSpec, z: &[f64], gamma: &[f64], store: &DrawStore, i: usize, half: Half) -> Result<MomentPair> {
    check_args(model, z, gamma, store, i)?;
    Ok(simulate(model, z, gamma, store, i, half))
}

fn grad_both(model: &ModelSpec, z: &[f64], gamma: &[f64], store: &DrawStore, i: usize, half: Half) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    check_args(model, z, gamma, store, i)?;
    let n = gamma.len();
    let (mut d1, mut d2) = (vec![0.0; n], vec![0.0; n]);
    let (_, fd) = simulate_with_gradient(model, z, gamma, store, i, half, &mut d1, &mut d2);
    Ok((d1, d2, fd))
}

/// `∂m_{1,·}/∂γ` on the frozen draws of `half`.
pub fn grad_m1_s(model: &ModelSpec, z: &[f64], gamma: &[f64], store: &DrawStore, i: usize, half: Half) -> Result<Derivative<Vec<f64>>> {
    let (d1, _, fd) = grad_both(model, z, gamma, store, i, half)?;
    Ok(Derivative {
        value: d1,
        finite_difference: fd,
    })
}

pub fn grad_m2_s(model: &ModelSpec, z: &[f64], gamma: &[f64], store: &DrawStore, i: usize, half: Half) -> Result<Derivative<Vec<f64>>> {
    let (_, d2, fd) = grad_both(model, z, gamma, store, i, half)?;
    Ok(Derivative {
        value: d2,
        finite_difference: fd,
    })
}
