mod common;


use fracpar_core::forward::*;
use fracpar_core::fractional::*;
use fracpar_core::grid::*;
use fracpar_core::SpaceTimeField;
use num_complex::Complex64;

struct Setup {
    grid: BoxGrid,
    time: TimeGrid,
    masks: RegionMasks,
    source: Region,
}

fn setup_1d(n_x: usize, n_t: usize) -> Setup {
    let grid = BoxGrid::new(1, 2.0, n_x).unwrap();
    let time = TimeGrid::from_steps(1.0, 1.0, n_t).unwrap();
    let omega = Region::ball([0.0, 0.0], 0.5);
    let source = Region::ball([1.2, 0.0], 0.3);
    let probe = Region::ball([-1.2, 0.0], 0.3);
    let masks = region_masks(&grid, &omega, &source, Some(&probe)).unwrap();
    Setup { grid, time, masks, source }
}

fn decomp(s: &Setup, fam: &ConductivityFamily) -> (ConductivityField, SpectralDecomposition) {
    let om = Region::ball([0.0, 0.0], 0.5);
    let sig = build_conductivity(&s.grid, fam, &om).unwrap();
    let d = spectral_decompose(&assemble_elliptic(&s.grid, &sig).unwrap(), 1e-10).unwrap();
    (sig, d)
}

fn bump(s: &Setup) -> ExteriorData {
    let p = BumpParams {
        time_center: -0.2,
        time_half_width: 0.6,
        ..Default::default()
    };
    ExteriorData::bump(&s.grid, &s.time, &s.masks, &s.source, &p).unwrap()
}

fn causal<'a>(d: &'a SpectralDecomposition, time: &TimeGrid, s: f64) -> CausalHs<'a> {
    CausalHs::new(d, time, FractionalOrder::new(s).unwrap(), BalakrishnanQuadrature::default()).unwrap()
}

#[test]
fn gmres_matches_dense_oracle() {
    let s = setup_1d(32, 16);
    let (_, d) = decomp(&s, &ConductivityFamily::scalar_bump(0.5));
    let (_, id) = decomp(&s, &ConductivityFamily::Identity);
    let f = bump(&s);
    let w = s.grid.weights();
    for order in [0.3, 0.5, 0.8] {
        let op = causal(&d, &s.time, order);
        let dense = solve_nonlocal_direct(&op, &s.time, &s.masks, &f).unwrap();
        let nodes = s.masks.omega_nodes();
        let pre = IdentityPreconditioner::new(&id, &s.time, FractionalOrder::new(order).unwrap(), &nodes, 1.0, 1e-8).unwrap();
        let sol = solve_nonlocal(&op, &s.time, &s.masks, &f, Preconditioner::IdentitySymbol(&pre), &NonlocalConfig::default()).unwrap();
        assert!(common::rel_err(&sol.u, &dense, s.time.dt(), &w) <= 1e-8);
        assert!(sol.interior_residual <= 1e-6);
        let cp = CausalPreconditioner::new(&op, &nodes).unwrap();
        let sol2 = solve_nonlocal(&op, &s.time, &s.masks, &f, Preconditioner::Causal(&cp), &NonlocalConfig::default()).unwrap();
        assert!(sol2.iterations <= 3);
        assert!(common::rel_err(&sol2.u, &dense, s.time.dt(), &w) <= 1e-8);
    }
}

#[test]
fn solution_keeps_exterior_data_and_vanishes_in_the_past() {
    let s = setup_1d(64, 64);
    let (_, d) = decomp(&s, &ConductivityFamily::Identity);
    let op = causal(&d, &s.time, 0.5);
    let f = bump(&s);
    let cp = CausalPreconditioner::new(&op, &s.masks.omega_nodes()).unwrap();
    let sol = solve_nonlocal(&op, &s.time, &s.masks, &f, Preconditioner::Causal(&cp), &NonlocalConfig::default()).unwrap();
    for i in 0..s.time.n_steps() {
        for x in 0..s.grid.n_nodes() {
            if !s.masks.omega[x] {
                assert_eq!(sol.u.get(i, x), f.field.get(i, x));
            }
        }
    }
    // Data starts at t = -0.8, so the solution is zero before.
    for i in 0..5 {
        assert!(sol.u.slice(i).iter().all(|z| z.norm() < 1e-14));
    }
    assert!(sol.interior_residual <= 1e-6);
    // Zero data gives the zero solution.
    let zero = ExteriorData::from_field(SpaceTimeField::zeros(s.time.n_steps(), s.grid.n_nodes()), &s.masks).unwrap();
    let z = solve_nonlocal(&op, &s.time, &s.masks, &zero, Preconditioner::Causal(&cp), &NonlocalConfig::default()).unwrap();
    assert_eq!(z.u.max_abs(), 0.0);
}

#[test]
fn conductivities_are_distinguished_by_exterior_data() {
    let s = setup_1d(64, 64);
    let (_, d1) = decomp(&s, &ConductivityFamily::Identity);
    let (_, d2) = decomp(&s, &ConductivityFamily::scalar_bump(0.5));
    let f = bump(&s);
    let cfg = NonlocalConfig::default();
    let mut data = Vec::new();
    for d in [&d1, &d2] {
        let op = causal(d, &s.time, 0.5);
        let cp = CausalPreconditioner::new(&op, &s.masks.omega_nodes()).unwrap();
        let sol = solve_nonlocal(&op, &s.time, &s.masks, &f, Preconditioner::Causal(&cp), &cfg).unwrap();
        data.push(extract_nonlocal_cauchy(&op, &s.time, &s.masks, &sol.u));
    }
    let gap = data[0].relative_gap(&data[1], &s.grid.weights(), s.time.dt());
    assert!(gap >= 10.0 * cfg.residual_tol, "gap {gap:e}");
    assert_eq!(data[0].relative_gap(&data[0], &s.grid.weights(), s.time.dt()), 0.0);
}

#[test]
fn rejects_bad_exterior_data() {
    let s = setup_1d(32, 16);
    let mut bad = SpaceTimeField::zeros(s.time.n_steps(), s.grid.n_nodes());
    bad.set(3, 16, Complex64::new(1.0, 0.0));
    assert!(matches!(ExteriorData::from_field(bad.clone(), &s.masks), Err(fracpar_core::Error::Support(_))));
    bad.set(3, 16, Complex64::new(0.0, 0.0));
    let src = (0..s.grid.n_nodes()).find(|&x| s.masks.source[x]).unwrap();
    bad.set(2, src, Complex64::new(f64::NAN, 0.0));
    assert!(matches!(ExteriorData::from_field(bad, &s.masks), Err(fracpar_core::Error::NonFinite(_))));
}

#[test]
fn stagnation_is_reported_with_history() {
    let s = setup_1d(32, 16);
    let (_, d) = decomp(&s, &ConductivityFamily::Identity);
    let op = causal(&d, &s.time, 0.5);
    let cfg = NonlocalConfig {
        gmres: GmresConfig { tol: 1e-14, restart: 2, max_iter: 4 },
        ..Default::default()
    };
    match solve_nonlocal(&op, &s.time, &s.masks, &bump(&s), Preconditioner::None, &cfg) {
        Err(fracpar_core::Error::Stagnation { iterations, history, .. }) => {
            assert_eq!(iterations, 4);
            assert_eq!(history.len(), 4);
        }
        other => panic!("expected stagnation, got {:?}", other.map(|s| s.iterations)),
    }
}

fn local_setup(n_x: usize, n_t: usize) -> (BoxGrid, TimeGrid, RegionMasks, EllipticOperator) {
    let grid = BoxGrid::new(1, 2.0, n_x).unwrap();
    let time = TimeGrid::from_steps(1.0, 1.0, n_t).unwrap();
    let omega = Region::Box { lo: [-0.5, 0.0], hi: [0.5, 0.0] };
    let masks = region_masks(&grid, &omega, &Region::ball([1.2, 0.0], 0.3), None).unwrap();
    let sig = build_conductivity(&grid, &ConductivityFamily::Identity, &omega).unwrap();
    let op = assemble_elliptic(&grid, &sig).unwrap();
    (grid, time, masks, op)
}

#[test]
fn local_solver_converges_at_second_order() {
    use std::f64::consts::PI;
    let exact = |t: f64, x: f64| (PI * (t + 1.0) / 4.0).sin() * (2.0 * x).cos();
    let forcing = |t: f64, x: f64| ((PI / 4.0) * (PI * (t + 1.0) / 4.0).cos() + 4.0 * (PI * (t + 1.0) / 4.0).sin()) * (2.0 * x).cos();
    let mut errs = Vec::new();
    for n_x in [33usize, 65, 129] {
        let (grid, time, masks, op) = local_setup(n_x, 512);
        let g = SpaceTimeField::from_real_fn(&time, &grid, |t, x| exact(t, x[0]));
        let f = SpaceTimeField::from_real_fn(&time, &grid, |t, x| forcing(t, x[0]));
        let sol = solve_local(&op, &time, &masks, &g, Some(&f), ThetaScheme::default()).unwrap();
        let last = time.n_steps() - 1;
        let err = (0..grid.n_nodes())
            .filter(|&x| masks.omega[x])
            .map(|x| (sol.v.get(last, x).re - exact(time.time(last), grid.coord(x)[0])).abs())
            .fold(0.0, f64::max);
        errs.push(err);
    }
    assert!(errs[0] / errs[1] > 3.0 && errs[1] / errs[2] > 3.0, "{errs:?}");
}

#[test]
fn local_solver_stability_bound() {
    let (grid, time, masks, op) = local_setup(65, 64);
    let g = SpaceTimeField::from_real_fn(&time, &grid, |t, _| (3.0 * t).sin().powi(2));
    let sol = solve_local(&op, &time, &masks, &g, None, ThetaScheme { theta: 1.0 }).unwrap();
    assert!(sol.max_l2 <= 10.0 * sol.data_norm);
}

#[test]
fn local_flux_is_exact_for_quadratics() {
    let grid = BoxGrid::new(2, 1.5, 33).unwrap();
    let time = TimeGrid::from_steps(0.5, 0.5, 4).unwrap();
    let omega = Region::ball([0.0, 0.0], 0.6);
    let masks = region_masks(&grid, &omega, &Region::ball([1.0, 0.0], 0.2), None).unwrap();
    let sig = build_conductivity(&grid, &ConductivityFamily::anisotropic(0.5), &omega).unwrap();
    let v = SpaceTimeField::from_real_fn(&time, &grid, |t, x| (1.0 + t) * (x[0] * x[0] + x[0] * x[1] - 2.0 * x[1]));
    let c = extract_local_cauchy(&grid, &sig, &masks, &v, time.n_steps()).unwrap();
    for (b, &node) in masks.sigma.iter().enumerate() {
        let x = grid.coord(node);
        let grad = [2.0 * x[0] + x[1], x[0] - 2.0];
        let sg = sig.at(node).apply(grad);
        let nu = masks.normals[b];
        let want = (1.0 + time.time(1)) * (sg[0] * nu[0] + sg[1] * nu[1]);
        let got = c.flux[masks.sigma.len() + b].re;
        assert!((got - want).abs() < 1e-9, "node {node}: {got} vs {want}");
    }
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig { failure_persistence: None, ..proptest::prelude::ProptestConfig::with_cases(32) })]

    #[test]
    fn backward_euler_keeps_nonnegative_data_nonnegative(vals in proptest::collection::vec(0.0f64..1.0, 32)) {
        let (grid, time, masks, op) = local_setup(17, 16);
        let g = SpaceTimeField::from_real_fn(&time, &grid, |t, x| {
            let k = (((t + 1.0) * 8.0) as usize + if x[0] > 0.0 { 16 } else { 0 }) % 32;
            vals[k]
        });
        let sol = solve_local(&op, &time, &masks, &g, None, ThetaScheme { theta: 1.0 }).unwrap();
        proptest::prop_assert!(sol.v.data().iter().all(|z| z.re >= -1e-12));
    }
}
