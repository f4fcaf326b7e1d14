mod common;

use berkson::moments::{self, m1_closed, m2_closed};
use berkson::objective::{self, MomentSource, Weight};
use berkson::quadrature::{QuadratureRule, DEFAULT_ORDER};
use berkson::simulated::{self, DrawStore, Half, ImportanceDensity};
use common::*;
use nalgebra::Matrix2;

fn assert_close(got: &[f64], want: &[f64], tol: f64, what: &str) {
    let e = max_rel_err(got, want);
    assert!(e < tol, "{what}: rel err {e:.3e}\n got  {got:?}\n want {want:?}");
}

#[test]
fn regression_gradient_and_hessian() {
    for name in MODELS {
        let m = model(name);
        let d = m.dims();
        let mut r = rng(21);
        for _ in 0..20 {
            let (z, g) = random_point(name, &mut r);
            let theta = &g[d.theta_range()];
            let grad = m.grad_g_theta(&z, theta).unwrap();
            assert!(!grad.finite_difference);
            let fd = central_gradient(theta, |t| m.eval_g(&z, t).unwrap());
            assert_close(&grad.value, &fd, 1e-6, &format!("{name} dg"));
            let hess = m.hess_g_theta(&z, theta).unwrap().value;
            for j in 0..d.p {
                let fd = central_gradient(theta, |t| m.grad_g_theta(&z, t).unwrap().value[j]);
                let row: Vec<f64> = hess.row(j).iter().copied().collect();
                assert_close(&row, &fd, 1e-6, &format!("{name} d2g row {j}"));
            }
        }
    }
}

#[test]
fn density_gradient_and_hessian() {
    let m = model("example1");
    let mut r = rng(22);
    for _ in 0..20 {
        let (z, g) = random_point("example1", &mut r);
        let psi = &g[m.dims().psi_range()];
        let grad = m.grad_density_psi(&z, psi).unwrap().value;
        let fd = central_gradient(psi, |p| m.eval_density(&z, p).unwrap());
        assert_close(&grad, &fd, 1e-6, "df");
        let hess = m.hess_density_psi(&z, psi).unwrap().value;
        let fd = central_gradient(psi, |p| m.grad_density_psi(&z, p).unwrap().value[0]);
        assert_close(&[hess[(0, 0)]], &fd, 1e-6, "d2f");
    }
}

#[test]
fn closed_moment_gradients() {
    for name in MODELS {
        let m = model(name);
        let mut r = rng(23);
        for _ in 0..20 {
            let (z, g) = random_point(name, &mut r);
            let (_, d1, d2) = moments::closed_with_gradient(&m, &z, &g).unwrap();
            assert_close(&d1, &central_gradient(&g, |x| m1_closed(&m, &z, x).unwrap()), 1e-6, &format!("{name} dm1"));
            assert_close(&d2, &central_gradient(&g, |x| m2_closed(&m, &z, x).unwrap()), 1e-6, &format!("{name} dm2"));
        }
    }
}

#[test]
fn quadrature_moment_gradients() {
    for name in MODELS {
        let m = model(name);
        let rule = QuadratureRule::standard(DEFAULT_ORDER, m.dims().k).unwrap();
        let mut r = rng(24);
        for _ in 0..10 {
            let (z, g) = random_point(name, &mut r);
            let n = g.len();
            let (mut d1, mut d2) = (vec![0.0; n], vec![0.0; n]);
            moments::m_quad_with_gradient(&m, &z, &g, &rule, &mut d1, &mut d2).unwrap();
            let q = |x: &[f64]| moments::m_quad(&m, &z, x, &rule).unwrap();
            assert_close(&d1, &central_gradient(&g, |x| q(x).m1), 1e-6, &format!("{name} quad dm1"));
            assert_close(&d2, &central_gradient(&g, |x| q(x).m2), 1e-6, &format!("{name} quad dm2"));
        }
    }
}

#[test]
fn simulated_moment_gradients() {
    let phi = ImportanceDensity::student_t(2, 5.0, 1.5).unwrap();
    let store = DrawStore::build(1, 50, 2, &phi, 3).unwrap();
    for name in ["example1", "example2", "example3"] {
        let m = model(name);
        let mut r = rng(25);
        for _ in 0..10 {
            let (z, g) = random_point(name, &mut r);
            for half in [Half::First, Half::Second] {
                let sim = |x: &[f64]| simulated::simulated_moments(&m, &z, x, &store, 0, half).unwrap();
                let d1 = simulated::grad_m1_s(&m, &z, &g, &store, 0, half).unwrap().value;
                let d2 = simulated::grad_m2_s(&m, &z, &g, &store, 0, half).unwrap().value;
                assert_close(&d1, &central_gradient(&g, |x| sim(x).m1), 1e-6, &format!("{name} dm1_s"));
                assert_close(&d2, &central_gradient(&g, |x| sim(x).m2), 1e-6, &format!("{name} dm2_s"));
            }
        }
    }
}

fn weight() -> Weight {
    Weight::Constant(Matrix2::new(2.0, 0.3, 0.3, 0.5))
}

#[test]
fn distance_objective_gradient() {
    for name in MODELS {
        let m = model(name);
        let mut r = rng(26);
        for rep in 0..10 {
            let (_, g) = random_point(name, &mut r);
            let data = generate(name, &g, 40, rep);
            let (_, at) = random_point(name, &mut r);
            let w = weight();
            let (q, grad) = objective::grad_q_n(&data, &m, &at, &w, MomentSource::Closed).unwrap();
            assert_eq!(q, objective::q_n(&data, &m, &at, &w, MomentSource::Closed).unwrap());
            let fd = central_gradient(&at, |x| objective::q_n(&data, &m, x, &w, MomentSource::Closed).unwrap());
            assert_close(&grad, &fd, 1e-5, &format!("{name} dQ"));
        }
    }
}

#[test]
fn simulated_objective_gradient() {
    for name in MODELS {
        let m = model(name);
        let k = m.dims().k;
        let phi = ImportanceDensity::student_t(k, 5.0, 1.5).unwrap();
        let mut r = rng(27);
        for rep in 0..10 {
            let (_, g) = random_point(name, &mut r);
            let data = generate(name, &g, 30, rep);
            let store = DrawStore::build(data.len(), 20, k, &phi, rep).unwrap();
            let (_, at) = random_point(name, &mut r);
            let w = weight();
            let (q, grad) = objective::grad_q_ns(&data, &m, &at, &w, &store).unwrap();
            assert!((q - objective::q_ns(&data, &m, &at, &w, &store).unwrap()).abs() <= 1e-12 * (1.0 + q.abs()));
            let fd = central_gradient(&at, |x| objective::q_ns(&data, &m, x, &w, &store).unwrap());
            assert_close(&grad, &fd, 1e-5, &format!("{name} dQ_S"));
        }
    }
}
