//! Central finite differences, used as the derivative fallback for models
//! that do not supply analytic forms.

/// Step used for coordinate `x`: `1e-6 * (1 + |x|)`.
#[inline]
pub fn step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

/// Central-difference gradient of a scalar function.
pub fn gradient<F>(x: &[f64], mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = x.to_vec();
    let mut out = vec![0.0; x.len()];
    for j in 0..x.len() {
        let h = step(x[j]);
        work[j] = x[j] + h;
        let up = f(&work);
        work[j] = x[j] - h;
        let down = f(&work);
        work[j] = x[j];
        out[j] = (up - down) / (2.0 * h);
    }
    out
}

/// Central-difference Jacobian of a vector-valued gradient, i.e. a Hessian
/// when `f` returns a gradient. Row `j` holds the derivative along `x_j`.
pub fn jacobian<F>(x: &[f64], m: usize, mut f: F) -> Vec<Vec<f64>>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut work = x.to_vec();
    let mut out = vec![vec![0.0; m]; x.len()];
    for j in 0..x.len() {
        let h = step(x[j]);
        work[j] = x[j] + h;
        let up = f(&work);
        work[j] = x[j] - h;
        let down = f(&work);
        work[j] = x[j];
        for (o, (u, d)) in out[j].iter_mut().zip(up.iter().zip(&down)) {
            *o = (u - d) / (2.0 * h);
        }
    }
    out
}

/// Second-order central differences of a scalar function (Hessian).
pub fn hessian<F>(x: &[f64], mut f: F) -> Vec<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x.len();
    let mut work = x.to_vec();
    let mut out = vec![vec![0.0; d]; d];
    let f0 = f(x);
    for i in 0..d {
        // Larger step: second differences lose precision with 1e-6.
        let hi = 1e-4 * (1.0 + x[i].abs());
        for j in i..d {
            let hj = 1e-4 * (1.0 + x[j].abs());
            let value = if i == j {
                work[i] = x[i] + hi;
                let up = f(&work);
                work[i] = x[i] - hi;
                let down = f(&work);
                work[i] = x[i];
                (up - 2.0 * f0 + down) / (hi * hi)
            } else {
                let mut eval = |si: f64, sj: f64| {
                    work[i] = x[i] + si * hi;
                    work[j] = x[j] + sj * hj;
                    let v = f(&work);
                    work[i] = x[i];
                    work[j] = x[j];
                    v
                };
                (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                    / (4.0 * hi * hj)
            };
            out[i][j] = value;
            out[j][i] = value;
        }
    }
    out
}
