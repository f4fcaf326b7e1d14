#![allow(dead_code)]

use berkson::builtin;
use berkson::datagen::{self, EpsDist, GenConfig, ModelChoice, ZDist};
use berkson::{Dataset, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MODELS: [&str; 4] = ["example1", "example2", "example3", "constant"];

pub fn model(name: &str) -> ModelSpec {
    builtin::builtin(name, None).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random interior `(z, γ)` for a built-in model, kept in a range where
/// the exponential terms stay moderate.
pub fn random_point(name: &str, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let mut u = |a: f64, b: f64| rng.random_range(a..b);
    let z = match name {
        "constant" => vec![u(-1.0, 1.0)],
        _ => vec![u(-1.0, 1.0), u(-1.0, 1.0)],
    };
    let gamma = match name {
        "example1" => vec![u(-1.0, 1.5), u(0.3, 1.2), u(0.3, 1.5), u(0.1, 1.0), u(0.2, 2.0)],
        "example2" => vec![u(0.5, 2.0), u(-0.8, 0.8), u(0.2, 0.8), u(0.1, 1.0), u(0.2, 2.0)],
        "example3" => vec![u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0), u(0.1, 1.0), u(0.2, 2.0)],
        "constant" => vec![u(-2.0, 2.0), u(0.2, 2.0)],
        other => panic!("no sampler for {other}"),
    };
    (z, gamma)
}

/// `E[g(z + δ)]` and `E[g(z + δ)²] + σ_ε²` by a tensor trapezoid rule on
/// `±10σ_δ` with 401 nodes per coordinate. The integrands are smooth and
/// decay like a Gaussian, so the rule is accurate to near machine precision.
pub fn trapezoid_moments(model: &ModelSpec, z: &[f64], gamma: &[f64]) -> (f64, f64) {
    let d = model.dims();
    let theta = &gamma[d.theta_range()];
    let psi = &gamma[d.psi_range()];
    let var = model.density().normal_variance(psi).expect("normal error density");
    let sd = var.sqrt();
    let m = 401;
    let h = 20.0 / (m - 1) as f64;
    let node = |a: usize| -10.0 + a as f64 * h;
    let w1 = |u: f64| h * (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut x = vec![0.0; d.k];
    let mut idx = vec![0usize; d.k];
    loop {
        let mut w = 1.0;
        for j in 0..d.k {
            let u = node(idx[j]);
            x[j] = z[j] + sd * u;
            w *= w1(u);
        }
        let g = model.regression().value(&x, theta);
        s1 += w * g;
        s2 += w * g * g;
        let mut j = 0;
        loop {
            if j == d.k {
                return (s1, s2 + gamma[d.sigma_index()]);
            }
            idx[j] += 1;
            if idx[j] < m {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Central differences with step `h = 1e-5 (1 + |x_j|)`.
pub fn central_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut w = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = 1e-5 * (1.0 + x[j].abs());
            w[j] = x[j] + h;
            let up = f(&w);
            w[j] = x[j] - h;
            let down = f(&w);
            w[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise relative error, with the denominator floored at
/// `1e-3 · ‖want‖∞` so that near-zero components are compared on the scale
/// of the vector.
pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    got.iter()
        .zip(want)
        .map(|(g, w)| (g - w).abs() / w.abs().max(1e-3 * scale).max(1e-12))
        .fold(0.0, f64::max)
}

pub fn example1_data(gamma0: &[f64], n: usize, seed: u64) -> Dataset {
    generate("example1", gamma0, n, seed)
}

pub fn generate(name: &str, gamma0: &[f64], n: usize, seed: u64) -> Dataset {
    datagen::generate_dataset(&GenConfig {
        model: ModelChoice { name: name.into(), k: None },
        gamma0: gamma0.to_vec(),
        n,
        z: ZDist::Uniform { low: -1.0, high: 1.0 },
        epsilon: EpsDist::Normal,
        seed,
    })
    .unwrap()
}
