mod common;

use fracpar_core::extension::*;
use fracpar_core::fractional::{symbol, FractionalOrder};
use fracpar_core::grid::TimeGrid;
use fracpar_core::{Error, ModalField};
use num_complex::Complex64;
use std::f64::consts::PI;

fn order(s: f64) -> FractionalOrder {
    FractionalOrder::new(s).unwrap()
}

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn half_order_profile_is_the_exponential() {
    let s = order(0.5);
    for (l, r) in [(1.0, 0.0), (0.0, 1.0), (3.0, -2.0)] {
        let z = Complex64::new(l, r);
        let mesh = ExtensionMesh::for_symbol(z, 4000, 30.0, s).unwrap();
        let p = solve_extension_mode(l, r, &mesh).unwrap();
        let k = z.sqrt();
        let worst = mesh
            .nodes
            .iter()
            .zip(&p.values)
            .map(|(&y, v)| (v - (-k * y).exp()).norm())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-4, "z = {z}: {worst:.3e}");
    }
    // d_{1/2} = 1 and φ'(0) = −√z.
    assert!((trace_constant(s) - 1.0).abs() < 1e-14);
    let one = extrapolated_trace(1.0, 0.0, s, &ExtensionConfig::default()).unwrap();
    assert!(rel(one.value, Complex64::new(1.0, 0.0)) <= 1e-4);
    let rot = extrapolated_trace(0.0, 1.0, s, &ExtensionConfig::default()).unwrap();
    assert!(rel(rot.value, Complex64::from_polar(1.0, PI / 4.0)) <= 1e-3);
}

#[test]
fn zero_symbol_gives_constant_profile_and_zero_trace() {
    let s = order(0.3);
    let mesh = ExtensionMesh::new(1.0, 50, s).unwrap();
    let p = solve_extension_mode(0.0, 0.0, &mesh).unwrap();
    assert!(p.values.iter().all(|v| *v == Complex64::new(1.0, 0.0)));
    assert_eq!(neumann_trace(&p, s), Complex64::new(0.0, 0.0));
    assert_eq!(extrapolated_trace(0.0, 0.0, s, &ExtensionConfig::default()).unwrap().value.norm(), 0.0);
}

#[test]
fn generic_profiles_solve_the_discrete_problem_and_decay() {
    for s in [0.3, 0.7] {
        let o = order(s);
        for (l, r) in [(2.0, 0.7), (0.1, 30.0), (50.0, 0.0)] {
            let mesh = ExtensionMesh::for_symbol(Complex64::new(l, r), 800, 30.0, o).unwrap();
            let p = solve_extension_mode(l, r, &mesh).unwrap();
            assert!(p.ode_residual() <= 1e-8, "s={s} λ={l} ρ={r}: {:.3e}", p.ode_residual());
            assert_eq!(p.values[0], Complex64::new(1.0, 0.0));
            assert!(p.values.last().unwrap().norm() <= 1e-6);
            if r == 0.0 {
                assert!(p.values.windows(2).all(|w| w[1].norm() <= w[0].norm()));
            }
        }
    }
}

#[test]
fn traces_match_the_principal_power() {
    let est = extrapolated_trace(2.0, 0.7, order(0.3), &ExtensionConfig::default()).unwrap();
    let want = Complex64::new(2.0, 0.7).powf(0.3);
    assert!(rel(est.value, want) <= 1e-2);
    assert!((est.observed_order - 2.0).abs() < 0.2, "order {}", est.observed_order);
    // Second-order convergence of the single-mesh trace.
    let o = order(0.7);
    let errs: Vec<f64> = [200, 400, 800]
        .iter()
        .map(|&m| {
            let mesh = ExtensionMesh::for_symbol(Complex64::new(4.0, -3.0), m, 30.0, o).unwrap();
            rel(neumann_trace(&solve_extension_mode(4.0, -3.0, &mesh).unwrap(), o), symbol(4.0, -3.0, 0.7))
        })
        .collect();
    assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
}

#[test]
fn shallow_mesh_and_bad_symbols_are_rejected() {
    let s = order(0.5);
    let mesh = ExtensionMesh::new(2.0, 200, s).unwrap();
    assert!(matches!(solve_extension_mode(1.0, 0.0, &mesh), Err(Error::Mesh(_))));
    assert!(matches!(solve_extension_mode(-1.0, 0.0, &mesh), Err(Error::InvalidParameter(_))));
    assert!(matches!(ExtensionMesh::new(0.0, 10, s), Err(Error::Mesh(_))));
}

/// Band-limited field on 16 modes and the lowest 16 frequencies.
fn band_limited(d: &fracpar_core::grid::SpectralDecomposition, time: &TimeGrid, amp: f64) -> fracpar_core::SpaceTimeField {
    let mut c = ModalField::zeros(time.n_steps(), d.n_modes());
    let period = time.n_steps() as f64 * time.dt();
    for k in 0..16 {
        for i in 0..time.n_steps() {
            let t = time.time(i) + time.horizon();
            let mut v = Complex64::new(0.0, 0.0);
            for m in 1..=8 {
                let w = 2.0 * PI * m as f64 / period;
                v += Complex64::from_polar(amp / ((k + m) as f64), w * t * if k % 2 == 0 { 1.0 } else { -1.0 });
            }
            // Smooth start from zero at −T.
            let ramp = (t / period).powi(3) * (1.0 - t / period).powi(3) * 64.0;
            c.set(i, k, v * ramp);
        }
    }
    d.from_modal(&c)
}

#[test]
fn extension_route_matches_the_spectral_multiplier() {
    let (_, d) = common::identity_1d(32, 2.0);
    let time = TimeGrid::from_steps(1.0, 1.0, 32).unwrap();
    let cfg = ExtensionConfig {
        cells: 100,
        ..Default::default()
    };
    let u = band_limited(&d, &time, 1.0);
    let mut ratios = Vec::new();
    for s in [0.3, 0.7] {
        let rep = extension_consistency(&d, &time, &u, order(s), &cfg).unwrap();
        assert!(rep.relative_error <= 1e-2, "s={s}: {:.3e}", rep.relative_error);
        assert!(rep.max_trace_error <= 1e-2);
        ratios.push(rep.energy_ratio);
    }
    // Empirical energy constant is stable under mesh refinement.
    for r in [200, 400] {
        let rep = extension_consistency(&d, &time, &u, order(0.7), &ExtensionConfig { cells: r, ..cfg }).unwrap();
        assert!((rep.energy_ratio / ratios[1] - 1.0).abs() <= 0.2, "{} vs {}", rep.energy_ratio, ratios[1]);
    }
    let zero = extension_consistency(&d, &time, &u.sub(&u), order(0.5), &cfg).unwrap();
    assert_eq!((zero.hs.max_abs(), zero.energy, zero.energy_ratio), (0.0, 0.0, 0.0));
}
