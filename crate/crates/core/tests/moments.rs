mod common;

use berkson::moments::{self, m1_closed, m2_closed};
use berkson::quadrature::{QuadratureRule, DEFAULT_ORDER};
use berkson::simulated::{DrawStore, Half, ImportanceDensity};
use berkson::{builtin, simulated};
use common::*;

#[test]
fn closed_forms_match_trapezoid_oracle() {
    for name in MODELS {
        let m = model(name);
        let mut r = rng(11);
        for _ in 0..100 {
            let (z, g) = random_point(name, &mut r);
            let (o1, o2) = trapezoid_moments(&m, &z, &g);
            let c1 = m1_closed(&m, &z, &g).unwrap();
            let c2 = m2_closed(&m, &z, &g).unwrap();
            assert!((c1 - o1).abs() < 1e-8, "{name} m1 at {z:?} {g:?}: {c1} vs {o1}");
            assert!((c2 - o2).abs() < 1e-7, "{name} m2 at {z:?} {g:?}: {c2} vs {o2}");
        }
    }
}

#[test]
fn gauss_hermite_matches_trapezoid_oracle() {
    for name in MODELS {
        let m = model(name);
        let rule = QuadratureRule::standard(DEFAULT_ORDER, m.dims().k).unwrap();
        let mut r = rng(12);
        for _ in 0..20 {
            let (z, g) = random_point(name, &mut r);
            let (o1, o2) = trapezoid_moments(&m, &z, &g);
            let q = moments::m_quad(&m, &z, &g, &rule).unwrap();
            assert!((q.m1 - o1).abs() < 1e-8, "{name}: {} vs {o1}", q.m1);
            assert!((q.m2 - o2).abs() < 1e-7, "{name}: {} vs {o2}", q.m2);
        }
    }
}

// Frozen oracle values at z = (0.3, -0.5), γ = (1, 1, 1, 0.25, 1):
// m1 = 0.3 + e^{-0.5 + 0.125}, m2 from the trapezoid rule.
#[test]
fn example1_reference_point() {
    let m = model("example1");
    let z = [0.3, -0.5];
    let g = [1.0, 1.0, 1.0, 0.25, 1.0];
    let m1 = m1_closed(&m, &z, &g).unwrap();
    assert!((m1 - 0.987_289_278_790_972_2).abs() < 1e-12, "{m1}");
    let (o1, o2) = trapezoid_moments(&m, &z, &g);
    assert!((o1 - m1).abs() < 1e-12);
    let m2 = m2_closed(&m, &z, &g).unwrap();
    assert!((m2 - o2).abs() < 1e-10, "{m2} vs {o2}");
}

#[test]
fn density_integrates_to_one() {
    let m = model("example1");
    let rule = QuadratureRule::standard(DEFAULT_ORDER, 2).unwrap();
    for s in [0.25, 1.0, 4.0] {
        // Integrate f_δ / φ_N against the standard rule, where φ_N is the
        // normal density the rule is built for.
        let scaled = rule.scaled(s).unwrap();
        let total = scaled.integrate(|t| {
            let phi = (-(t[0] * t[0] + t[1] * t[1]) / (2.0 * s)).exp() / (2.0 * std::f64::consts::PI * s);
            m.eval_density(t, &[s]).unwrap() / phi
        });
        assert!((total - 1.0).abs() < 1e-8, "sigma2 = {s}: {total}");
    }
}

#[test]
fn conditional_variance_nonnegative_at_truth() {
    for name in MODELS {
        let m = model(name);
        let mut r = rng(13);
        for _ in 0..100 {
            let (z, g) = random_point(name, &mut r);
            let v = m2_closed(&m, &z, &g).unwrap() - m1_closed(&m, &z, &g).unwrap().powi(2);
            assert!(v >= -1e-10, "{name}: {v}");
        }
    }
}

#[test]
fn reparameterization_round_trips() {
    for name in ["example1", "example2"] {
        let m = model(name);
        let mut r = rng(14);
        for _ in 0..50 {
            let (_, g) = random_point(name, &mut r);
            let phi = moments::theta_to_phi(&m, &g).unwrap();
            let back = moments::phi_to_theta(&m, &phi).unwrap();
            for (a, b) in back.iter().zip(&g) {
                assert!((a - b).abs() < 1e-10, "{name}: {back:?} vs {g:?}");
            }
            let again = moments::theta_to_phi(&m, &back).unwrap();
            for (a, b) in again.iter().zip(&phi) {
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
            }
        }
    }
}

fn store_stats(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn simulator_is_unbiased_across_stores() {
    let reps = 500;
    for name in ["example1", "example2", "example3"] {
        let m = model(name);
        let (z, g) = random_point(name, &mut rng(15));
        let (o1, o2) = trapezoid_moments(&m, &z, &g);
        let phi = ImportanceDensity::student_t(2, 5.0, 1.0).unwrap();
        let (mut s1, mut s2) = (Vec::new(), Vec::new());
        for r in 0..reps {
            let store = DrawStore::build(1, 40, 2, &phi, 1000 + r).unwrap();
            let mp = simulated::simulated_moments(&m, &z, &g, &store, 0, Half::First).unwrap();
            s1.push(mp.m1);
            s2.push(mp.m2);
        }
        let (mean1, var1) = store_stats(&s1);
        let (mean2, var2) = store_stats(&s2);
        let se = |v: f64| (v / reps as f64).sqrt();
        assert!((mean1 - o1).abs() < 4.0 * se(var1), "{name} m1: {mean1} vs {o1}");
        assert!((mean2 - o2).abs() < 4.0 * se(var2), "{name} m2: {mean2} vs {o2}");
    }
}

#[test]
fn halves_are_uncorrelated_and_variance_scales() {
    let m = model("example1");
    let (z, g) = random_point("example1", &mut rng(16));
    let phi = ImportanceDensity::student_t(2, 5.0, 1.0).unwrap();
    let reps = 500;
    let run = |s: usize| -> (Vec<f64>, Vec<f64>) {
        (0..reps)
            .map(|r| {
                let store = DrawStore::build(1, s, 2, &phi, 5000 + r as u64).unwrap();
                (
                    simulated::m1_s(&m, &z, &g, &store, 0).unwrap(),
                    simulated::m1_2s(&m, &z, &g, &store, 0).unwrap(),
                )
            })
            .unzip()
    };
    let (a, b) = run(25);
    let (ma, va) = store_stats(&a);
    let (mb, vb) = store_stats(&b);
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (reps as f64 - 1.0);
    let corr = cov / (va * vb).sqrt();
    assert!(corr.abs() < 4.0 / (reps as f64).sqrt(), "corr {corr}");
    let (c, _) = run(100);
    let (_, vc) = store_stats(&c);
    let ratio = va / (4.0 * vc);
    assert!((0.7..=1.4).contains(&ratio), "variance ratio {ratio}");
}

#[test]
fn simulator_is_deterministic_and_halves_swap() {
    let m = model("example2");
    let (z, g) = random_point("example2", &mut rng(17));
    let space = builtin::default_space(&m).unwrap();
    let phi = ImportanceDensity::default_for(&m, &space).unwrap();
    let store = DrawStore::build(3, 30, 2, &phi, 9).unwrap();
    let again = DrawStore::build(3, 30, 2, &phi, 9).unwrap();
    let swapped = store.swapped_halves();
    for i in 0..3 {
        let a = simulated::simulated_moments(&m, &z, &g, &store, i, Half::First).unwrap();
        assert_eq!(a, simulated::simulated_moments(&m, &z, &g, &again, i, Half::First).unwrap());
        assert_eq!(a, simulated::simulated_moments(&m, &z, &g, &swapped, i, Half::Second).unwrap());
    }
}
