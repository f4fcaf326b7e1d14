//! Tensor-product Gauss–Hermite rules for expectations under `N(0, σ² I_k)`.

use crate::error::{Error, Result};

/// Largest predictor dimension for which tensor quadrature is offered.
pub const MAX_QUADRATURE_DIM: usize = 3;

/// Default per-axis order.
pub const DEFAULT_ORDER: usize = 20;

/// One-dimensional nodes and weights for `E f(U)`, `U ~ N(0, 1)`.
fn hermite_standard_normal(order: usize) -> (Vec<f64>, Vec<f64>) {
    // Newton iteration on the orthonormal physicists' recurrence, with the
    // classical asymptotic initial guesses for the roots.
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let n = order;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * (1.0 + z.abs()) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let mut pairs: Vec<(f64, f64)> = x.iter().zip(&w).map(|(a, b)| (a * sqrt2, b * inv_sqrt_pi)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Nodes (row-major `M × k`) and weights for `N(0, σ² I_k)` with
/// `M = order^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    order: usize,
    k: usize,
    variance: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Rule for the standard normal `N(0, I_k)`.
    pub fn standard(order: usize, k: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("quadrature order must be at least 1".into()));
        }
        if k == 0 || k > MAX_QUADRATURE_DIM {
            return Err(Error::Unsupported(format!(
                "tensor quadrature supports 1 <= k <= {MAX_QUADRATURE_DIM}, got k = {k}; use the simulated moments instead"
            )));
        }
        let (x, w) = hermite_standard_normal(order);
        let total = order.pow(k as u32);
        let mut nodes = Vec::with_capacity(total * k);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; k];
        for _ in 0..total {
            let mut wt = 1.0;
            for &j in &idx {
                nodes.push(x[j]);
                wt *= w[j];
            }
            weights.push(wt);
            for d in (0..k).rev() {
                idx[d] += 1;
                if idx[d] < order {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Self {
            order,
            k,
            variance: 1.0,
            nodes,
            weights,
        })
    }

    /// The same rule transformed for `N(0, variance · I_k)`.
    pub fn scaled(&self, variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::Domain(format!("quadrature variance must be positive, got {variance}")));
        }
        let factor = (variance / self.variance).sqrt();
        Ok(Self {
            nodes: self.nodes.iter().map(|v| v * factor).collect(),
            variance,
            ..self.clone()
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.k..(j + 1) * self.k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ_j w_j f(node_j)`.
    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * f(self.node(j)))
            .sum()
    }
}
