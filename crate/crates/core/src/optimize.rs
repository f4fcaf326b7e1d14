//! Box-constrained minimization: multistart Nelder–Mead with adaptive
//! coefficients, followed by a projected BFGS polish when gradients exist.

use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamSpace;

/// A scalar function on the parameter box. Failed evaluations are treated
/// as `+∞` by the optimizer.
pub trait Objective {
    fn value(&self, x: &[f64]) -> Result<f64>;

    /// Value and gradient, or `None` when no analytic gradient is available.
    fn value_and_gradient(&self, _x: &[f64]) -> Option<Result<(f64, Vec<f64>)>> {
        None
    }
}

impl<F: Fn(&[f64]) -> Result<f64>> Objective for F {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeOptions {
    /// Number of starts: the box center plus `starts − 1` seeded uniform draws.
    pub starts: usize,
    pub max_iterations: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub seed: u64,
    pub polish: bool,
    /// Initial simplex edge as a fraction of the box width.
    pub initial_step: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            starts: 5,
            max_iterations: 2000,
            ftol: 1e-10,
            xtol: 1e-8,
            seed: 0,
            polish: true,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub boundary_hit: bool,
    pub n_evals: usize,
    pub iterations: usize,
}

/// Relative distance to a bound under which a coordinate counts as on it.
pub const BOUNDARY_TOL: f64 = 1e-8;

/// Simplex tolerances used when a gradient polish follows; either one
/// ends the simplex phase.
const PRE_POLISH_FTOL: f64 = 1e-6;
const PRE_POLISH_XTOL: f64 = 1e-3;

struct Counted<'a, O: Objective + ?Sized> {
    inner: &'a O,
    evals: Cell<usize>,
}

impl<O: Objective + ?Sized> Counted<'_, O> {
    fn value(&self, x: &[f64]) -> f64 {
        self.evals.set(self.evals.get() + 1);
        match self.inner.value(x) {
            Ok(v) if !v.is_nan() => v,
            _ => f64::INFINITY,
        }
    }

    fn value_and_gradient(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evals.set(self.evals.get() + 1);
        match self.inner.value_and_gradient(x)? {
            Ok((v, g)) if v.is_finite() && g.iter().all(|d| d.is_finite()) => Some((v, g)),
            _ => Some((f64::INFINITY, Vec::new())),
        }
    }
}

/// Minimizes over the box. `warm` starts are tried before the default ones.
pub fn minimize<O: Objective + ?Sized>(
    objective: &O,
    space: &ParamSpace,
    options: &MinimizeOptions,
    warm: &[Vec<f64>],
) -> Result<Minimum> {
    if options.starts == 0 && warm.is_empty() {
        return Err(Error::Config("at least one start is required".into()));
    }
    if options.max_iterations == 0 {
        return Err(Error::Config("max_iterations must be positive".into()));
    }
    let counted = Counted {
        inner: objective,
        evals: Cell::new(0),
    };
    let mut starts: Vec<Vec<f64>> = warm.iter().map(|w| space.projected(w)).collect();
    if options.starts > 0 {
        starts.push(space.center());
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        for _ in 1..options.starts {
            starts.push(space.sample_uniform(&mut rng));
        }
    }
    let mut best: Option<Minimum> = None;
    for x0 in &starts {
        let run = local_search(&counted, space, options, x0);
        let better = match &best {
            None => true,
            Some(b) => run.value < b.value || (run.value == b.value && lex_less(&run.x, &b.x)),
        };
        if better {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one start");
    if !best.value.is_finite() {
        return Err(Error::Optimization(
            "objective could not be evaluated at any point visited from the starts".into(),
        ));
    }
    best.boundary_hit = space.on_boundary(&best.x, BOUNDARY_TOL);
    best.n_evals = counted.evals.get();
    Ok(best)
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

fn local_search<O: Objective + ?Sized>(f: &Counted<'_, O>, space: &ParamSpace, options: &MinimizeOptions, x0: &[f64]) -> Minimum {
    let has_gradient = options.polish && f.inner.value_and_gradient(x0).is_some();
    let (ftol, xtol) = if has_gradient {
        (options.ftol.max(PRE_POLISH_FTOL), options.xtol.max(PRE_POLISH_XTOL))
    } else {
        (options.ftol, options.xtol)
    };
    let nm = nelder_mead(f, space, options, ftol, xtol, has_gradient, x0);
    if !has_gradient || !nm.value.is_finite() {
        return nm;
    }
    let polished = bfgs(f, space, options, &nm.x);
    if polished.value <= nm.value {
        Minimum {
            iterations: nm.iterations + polished.iterations,
            ..polished
        }
    } else {
        nm
    }
}

fn nelder_mead<O: Objective + ?Sized>(
    f: &Counted<'_, O>,
    space: &ParamSpace,
    options: &MinimizeOptions,
    ftol: f64,
    xtol: f64,
    coarse: bool,
    x0: &[f64],
) -> Minimum {
    let free: Vec<usize> = (0..space.dim()).filter(|&j| space.width(j) > 0.0).collect();
    let base = space.projected(x0);
    if free.is_empty() {
        let value = f.value(&base);
        return Minimum {
            x: base,
            value,
            converged: true,
            boundary_hit: false,
            n_evals: 0,
            iterations: 0,
        };
    }
    let n = free.len();
    let nf = n as f64;
    let (alpha, beta, gamma, delta) = if n >= 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };
    let lift = |y: &[f64]| -> Vec<f64> {
        let mut x = base.clone();
        for (a, &j) in free.iter().enumerate() {
            x[j] = y[a];
        }
        space.project(&mut x);
        x
    };
    let clamp = |y: &mut [f64]| {
        for (a, &j) in free.iter().enumerate() {
            y[a] = y[a].clamp(space.lower()[j], space.upper()[j]);
        }
    };
    let start: Vec<f64> = free.iter().map(|&j| base[j]).collect();
    let mut simplex = vec![start.clone()];
    for (a, &j) in free.iter().enumerate() {
        let h = options.initial_step * space.width(j);
        let mut v = start.clone();
        v[a] = if v[a] + h <= space.upper()[j] { v[a] + h } else { v[a] - h };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f.value(&lift(v))).collect();
    let mut streak = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then_with(|| lex_cmp(&simplex[a], &simplex[b])));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let fbest = values[0];
        let spread = values[n] - fbest;
        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs() / (1.0 + b.abs())))
            .fold(0.0, f64::max);
        let flat = spread <= ftol * (1.0 + fbest.abs());
        let small = size <= xtol;
        if fbest.is_finite() && (flat && small || coarse && (flat || small)) {
            streak += 1;
            if streak >= 2 {
                converged = true;
                break;
            }
        } else {
            streak = 0;
        }

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut y: Vec<f64> = centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect();
            clamp(&mut y);
            y
        };
        let xr = along(alpha);
        let fr = f.value(&lift(&xr));
        if fr < values[0] {
            let xe = along(beta);
            let fe = f.value(&lift(&xe));
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < values[n] {
            let xc = along(gamma * alpha);
            let fc = f.value(&lift(&xc));
            let ok = fc <= fr;
            (xc, fc, ok)
        } else {
            let xc = along(-gamma);
            let fc = f.value(&lift(&xc));
            let ok = fc < values[n];
            (xc, fc, ok)
        };
        if accept {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            let mut y: Vec<f64> = best.iter().zip(&simplex[i]).map(|(b, v)| b + delta * (v - b)).collect();
            clamp(&mut y);
            values[i] = f.value(&lift(&y));
            simplex[i] = y;
        }
    }
    let mut bi = 0;
    for i in 1..=n {
        if values[i] < values[bi] || (values[i] == values[bi] && lex_less(&simplex[i], &simplex[bi])) {
            bi = i;
        }
    }
    Minimum {
        x: lift(&simplex[bi]),
        value: values[bi],
        converged,
        boundary_hit: false,
        n_evals: 0,
        iterations,
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.total_cmp(y);
        if o != std::cmp::Ordering::Equal {
            return o;
        }
    }
    std::cmp::Ordering::Equal
}

/// Gradient with components zeroed where a bound blocks descent.
fn projected_gradient(space: &ParamSpace, x: &[f64], g: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let w = space.width(j);
            let tol = BOUNDARY_TOL * w;
            if w == 0.0 || (x[j] <= space.lower()[j] + tol && g[j] > 0.0) || (x[j] >= space.upper()[j] - tol && g[j] < 0.0) {
                0.0
            } else {
                g[j]
            }
        })
        .collect()
}

fn bfgs<O: Objective + ?Sized>(f: &Counted<'_, O>, space: &ParamSpace, options: &MinimizeOptions, x0: &[f64]) -> Minimum {
    let n = x0.len();
    let mut x = space.projected(x0);
    let (mut fx, mut g) = match f.value_and_gradient(&x) {
        Some((v, g)) if v.is_finite() => (v, g),
        _ => {
            return Minimum {
                x,
                value: f64::INFINITY,
                converged: false,
                boundary_hit: false,
                n_evals: 0,
                iterations: 0,
            }
        }
    };
    let mut h: Option<Vec<Vec<f64>>> = None;
    let mut streak = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        iterations += 1;
        let pg = projected_gradient(space, &x, &g);
        if pg.iter().all(|v| *v == 0.0) {
            converged = true;
            break;
        }
        let mut step = None;
        for attempt in 0..2 {
            let dir: Vec<f64> = match (&h, attempt) {
                (Some(hm), 0) => (0..n).map(|i| -(0..n).map(|j| hm[i][j] * pg[j]).sum::<f64>()).collect(),
                _ => {
                    let gmax = pg.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                    let wmin = (0..n).map(|j| space.width(j)).filter(|w| *w > 0.0).fold(f64::INFINITY, f64::min);
                    let c = 0.1 * wmin / gmax;
                    pg.iter().map(|v| -c * v).collect()
                }
            };
            let dir: Vec<f64> = dir.iter().zip(&pg).map(|(d, p)| if *p == 0.0 { 0.0 } else { *d }).collect();
            if dir.iter().zip(&pg).map(|(d, p)| d * p).sum::<f64>() >= 0.0 {
                continue;
            }
            if let Some(found) = line_search(f, space, &x, fx, &g, &dir) {
                step = Some(found);
                break;
            }
            if h.is_none() {
                break;
            }
        }
        let Some((xn, fxn, gn)) = step else {
            converged = true;
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let decrease = fx - fxn;
        let small_step = s.iter().zip(&xn).all(|(d, v)| d.abs() <= options.xtol * (1.0 + v.abs()));
        if decrease <= options.ftol * (1.0 + fxn.abs()) && small_step {
            streak += 1;
        } else {
            streak = 0;
        }
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum::<f64>().sqrt();
        let yy: f64 = yv.iter().map(|a| a * a).sum::<f64>().sqrt();
        if sy > 1e-12 * ss * yy {
            let hm = h.get_or_insert_with(|| {
                let scale = sy / (yy * yy);
                (0..n).map(|i| (0..n).map(|j| if i == j { scale } else { 0.0 }).collect()).collect()
            });
            bfgs_update(hm, &s, &yv, sy);
        }
        x = xn;
        fx = fxn;
        g = gn;
        if streak >= 2 {
            converged = true;
            break;
        }
    }
    Minimum {
        x,
        value: fx,
        converged,
        boundary_hit: false,
        n_evals: 0,
        iterations,
    }
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

type Point = (Vec<f64>, f64, Vec<f64>);

fn line_search<O: Objective + ?Sized>(f: &Counted<'_, O>, space: &ParamSpace, x: &[f64], fx: f64, g: &[f64], dir: &[f64]) -> Option<Point> {
    let mut t = 1.0;
    for _ in 0..40 {
        let trial: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + t * d).collect();
        let trial = space.projected(&trial);
        let moved: f64 = trial.iter().zip(x).zip(g).map(|((a, b), gi)| (a - b) * gi).sum();
        if trial.iter().zip(x).all(|(a, b)| a == b) {
            return None;
        }
        if let Some((v, gn)) = f.value_and_gradient(&trial) {
            if v.is_finite() && v <= fx + 1e-4 * moved && v < fx {
                return Some((trial, v, gn));
            }
        }
        t *= 0.5;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        center: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn value(&self, x: &[f64]) -> Result<f64> {
            Ok(x.iter().zip(&self.center).enumerate().map(|(i, (a, c))| (i + 1) as f64 * (a - c).powi(2)).sum())
        }

        fn value_and_gradient(&self, x: &[f64]) -> Option<Result<(f64, Vec<f64>)>> {
            let g = x.iter().zip(&self.center).enumerate().map(|(i, (a, c))| 2.0 * (i + 1) as f64 * (a - c)).collect();
            Some(self.value(x).map(|v| (v, g)))
        }
    }

    fn unit_box(n: usize) -> ParamSpace {
        let mut lower = vec![-1.0; n];
        lower[n - 1] = 0.0;
        ParamSpace::new(lower, vec![2.0; n]).unwrap()
    }

    #[test]
    fn nelder_mead_finds_interior_minimum() {
        let f = |x: &[f64]| -> Result<f64> { Ok((x[0] - 0.3).powi(2) + 10.0 * (x[1] - 0.2).powi(2)) };
        let opts = MinimizeOptions {
            starts: 2,
            ..Default::default()
        };
        let m = minimize(&f, &unit_box(2), &opts, &[]).unwrap();
        assert!(m.converged);
        assert!(!m.boundary_hit);
        assert!((m.x[0] - 0.3).abs() < 1e-6 && (m.x[1] - 0.2).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| -> Result<f64> { Ok(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)) };
        let m = minimize(&f, &unit_box(2), &MinimizeOptions::default(), &[]).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m.x);
    }

    #[test]
    fn bfgs_polish_reaches_high_accuracy() {
        let q = Quadratic {
            center: vec![0.1, -0.4, 1.3, 0.7],
        };
        let m = minimize(&q, &unit_box(4), &MinimizeOptions::default(), &[]).unwrap();
        assert!(m.converged);
        for (a, b) in m.x.iter().zip(&q.center) {
            assert!((a - b).abs() < 1e-7, "{:?}", m.x);
        }
    }

    #[test]
    fn constrained_minimum_on_boundary() {
        let q = Quadratic {
            center: vec![3.0, 0.5],
        };
        let m = minimize(&q, &unit_box(2), &MinimizeOptions::default(), &[]).unwrap();
        assert_eq!(m.x[0], 2.0);
        assert!((m.x[1] - 0.5).abs() < 1e-7);
        assert!(m.boundary_hit);
    }

    #[test]
    fn failed_evaluations_are_avoided() {
        let f = |x: &[f64]| -> Result<f64> {
            if x[0] > 0.5 {
                Err(Error::Evaluation("bad region".into()))
            } else {
                Ok((x[0] - 1.0).powi(2))
            }
        };
        let space = ParamSpace::new(vec![0.0], vec![2.0]).unwrap();
        let m = minimize(&f, &space, &MinimizeOptions::default(), &[]).unwrap();
        assert!(m.x[0] <= 0.5 && m.x[0] > 0.49, "{:?}", m.x);
    }

    #[test]
    fn everywhere_failing_is_an_error() {
        let f = |_: &[f64]| -> Result<f64> { Err(Error::Evaluation("no".into())) };
        let r = minimize(&f, &unit_box(2), &MinimizeOptions::default(), &[]);
        assert!(matches!(r, Err(Error::Optimization(_))));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let f = |x: &[f64]| -> Result<f64> { Ok((x[0] * 3.0).sin() + x[1] * x[1]) };
        let o = MinimizeOptions {
            seed: 9,
            ..Default::default()
        };
        let a = minimize(&f, &unit_box(2), &o, &[]).unwrap();
        let b = minimize(&f, &unit_box(2), &o, &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_coordinates_stay_fixed() {
        let q = Quadratic { center: vec![0.2, 0.9] };
        let space = ParamSpace::new(vec![-1.0, 0.5], vec![2.0, 0.5]).unwrap();
        let m = minimize(&q, &space, &MinimizeOptions::default(), &[]).unwrap();
        assert_eq!(m.x[1], 0.5);
        assert!((m.x[0] - 0.2).abs() < 1e-7);
    }
}
