use fracpar_core::grid::*;
use fracpar_core::lifted::{lift_modal, verify_lifted_pde_sampled, TauConfig, TauGrid};
use fracpar_core::transform::*;
use fracpar_core::{Error, ModalField};
use faer::Mat;
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::PI;

fn twist() -> Diffeomorphism {
    Diffeomorphism::radial_twist(0.5, 0.45).unwrap()
}

fn squeeze() -> Diffeomorphism {
    Diffeomorphism::radial_squeeze(0.3, 0.45).unwrap()
}

fn omega() -> Region {
    Region::ball([0.0, 0.0], 0.6)
}

fn fd_jacobian(f: &Diffeomorphism, x: [f64; 2]) -> [[f64; 2]; 2] {
    let e = 1e-6;
    let mut j = [[0.0; 2]; 2];
    for c in 0..2 {
        let mut p = x;
        let mut m = x;
        p[c] += e;
        m[c] -= e;
        let (fp, fm) = (f.forward(p), f.forward(m));
        for r in 0..2 {
            j[r][c] = (fp[r] - fm[r]) / (2.0 * e);
        }
    }
    j
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn maps_invert_and_match_finite_difference_jacobians(r in 0.0f64..0.7, th in 0.0f64..(2.0 * PI)) {
        let x = [r * th.cos(), r * th.sin()];
        for f in [Diffeomorphism::identity(), twist(), squeeze()] {
            let y = f.forward(x);
            let back = f.inverse(y);
            prop_assert!((back[0] - x[0]).hypot(back[1] - x[1]) <= 1e-12);
            let j = f.jacobian(x);
            let fd = fd_jacobian(&f, x);
            for a in 0..2 {
                for b in 0..2 {
                    prop_assert!((j[a][b] - fd[a][b]).abs() <= 1e-6, "{:?} at {:?}", f.kind, x);
                }
            }
            if r >= 0.45 {
                prop_assert_eq!(y, x);
            }
        }
        prop_assert!((twist().det(x) - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn validation_reports_and_rejections() {
    let grid = BoxGrid::new(2, 1.5, 48).unwrap();
    let rep = twist().validate(&grid, &omega()).unwrap();
    assert!((rep.min_det - 1.0).abs() < 1e-12 && (rep.min_det_inverse - 1.0).abs() < 1e-12);
    assert!(rep.max_roundtrip <= 1e-10);
    assert!(rep.lipschitz > 1.0 && rep.lipschitz < 2.0);
    let sq = squeeze().validate(&grid, &omega()).unwrap();
    assert!(sq.min_det > 0.0 && sq.min_det < 1.0);
    // A twist reaching past the interior region moves exterior nodes.
    let wide = Diffeomorphism::radial_twist(0.5, 0.9).unwrap();
    assert!(matches!(wide.validate(&grid, &omega()), Err(Error::Map(_))));
    assert!(matches!(Diffeomorphism::radial_squeeze(-2.0, 0.45), Err(Error::Map(_))));
}

#[test]
fn pushforward_identities() {
    let grid = BoxGrid::new(2, 1.5, 48).unwrap();
    let om = omega();
    let w = grid.weights();
    let aniso = ConductivityFamily::anisotropic(0.8);
    let base = build_conductivity(&grid, &aniso, &om).unwrap();
    // Identity map returns σ unchanged.
    let same = pushforward_family(&grid, &Diffeomorphism::identity(), &aniso, &om).unwrap();
    assert_eq!(same.values(), base.values());

    let ident = build_conductivity(&grid, &ConductivityFamily::Identity, &om).unwrap();
    let pushed = pushforward_family(&grid, &twist(), &ConductivityFamily::Identity, &om).unwrap();
    let gap = ident.l2_distance(&pushed, &w, |n| om.contains(grid.coord(n), 2));
    assert!(gap > 0.1, "coefficient gap {gap}");
    assert!(!pushed.is_scalar());

    let pa = pushforward_family(&grid, &twist(), &aniso, &om).unwrap();
    for n in 0..grid.n_nodes() {
        let y = grid.coord(n);
        let s = pa.at(n);
        let orig = aniso.eval(twist().inverse(y), 2, &om);
        // det(JσJᵀ) = det σ when det J = 1.
        let d = s.xx * s.yy - s.xy * s.xy;
        let d0 = orig.xx * orig.yy - orig.xy * orig.xy;
        assert!((d - d0).abs() <= 1e-12 * d0, "node {n}");
        if !om.contains(y, 2) {
            assert_eq!(s, base.at(n));
        }
    }
}

#[test]
fn pushforward_one_matches_determinants() {
    let grid = BoxGrid::new(2, 1.5, 40).unwrap();
    let om = omega();
    assert!(pushforward_one(&grid, &Diffeomorphism::identity()).iter().all(|&v| v == 1.0));
    assert!(pushforward_one(&grid, &twist()).iter().all(|&v| (v - 1.0).abs() <= 1e-10));
    let sq = squeeze();
    let w = pushforward_one(&grid, &sq);
    let mut moved = 0.0f64;
    for n in 0..grid.n_nodes() {
        let y = grid.coord(n);
        let j = fd_jacobian(&sq, sq.inverse(y));
        let oracle = 1.0 / (j[0][0] * j[1][1] - j[0][1] * j[1][0]);
        assert!((w[n] - oracle).abs() <= 1e-6, "node {n}");
        if !om.contains(y, 2) {
            assert_eq!(w[n], 1.0);
        }
        moved = moved.max((w[n] - 1.0).abs());
    }
    assert!(moved > 0.1);
}

/// Closed-form Neumann mode `cos(πa i/(N-1)) cos(πb j/(N-1))` of the
/// `σ = I` operator as a one-mode decomposition.
fn cosine_mode(grid: &BoxGrid, op: &EllipticOperator, a: usize, b: usize) -> SpectralDecomposition {
    let n = grid.n_per_axis();
    let h = grid.spacing();
    let arg = |k: usize| PI * k as f64 / (n - 1) as f64;
    let lam = 4.0 / (h * h) * ((arg(a) / 2.0).sin().powi(2) + (arg(b) / 2.0).sin().powi(2));
    let raw: Vec<f64> = (0..grid.n_nodes())
        .map(|node| {
            let (i, j) = grid.ij(node);
            (arg(a) * i as f64).cos() * (arg(b) * j as f64).cos()
        })
        .collect();
    let norm = raw.iter().zip(op.mass()).map(|(v, m)| v * v * m).sum::<f64>().sqrt();
    let modes = Mat::<f64>::from_fn(grid.n_nodes(), 1, |i, _| raw[i] / norm);
    SpectralDecomposition::from_modes(op, vec![lam], modes, 1e-10).unwrap()
}

fn bump_series(time: &TimeGrid, n_modes: usize, k: usize) -> ModalField {
    let mut c = ModalField::zeros(time.n_steps(), n_modes);
    for i in 0..time.n_steps() {
        let s = time.time(i) / 0.4;
        let v = if s.abs() < 1.0 { (1.0 - s * s).powi(6) } else { 0.0 };
        c.set(i, k, Complex64::new(v, 0.0));
    }
    c
}

#[test]
fn identity_map_reproduces_the_lifted_residual() {
    let grid = BoxGrid::new(2, 1.5, 12).unwrap();
    let om = omega();
    let sigma = build_conductivity(&grid, &ConductivityFamily::Identity, &om).unwrap();
    let op = assemble_elliptic(&grid, &sigma).unwrap();
    let d = spectral_decompose(&op, 1e-10).unwrap();
    let time = TimeGrid::from_steps(0.5, 0.5, 16).unwrap();
    let tau = TauGrid::new(&time, TauConfig::default()).unwrap();
    let mut c = bump_series(&time, d.n_modes(), 2);
    for i in 0..time.n_steps() {
        c.set(i, 7, c.get(i, 2) * 0.5);
    }
    let u = lift_modal(&d, &time, &c, &tau).unwrap();
    let s = Sampling { t_stride: 2, tau_stride: 3 };
    let got = verify_transformation(&u, &Diffeomorphism::identity(), &grid, &op, s).unwrap();
    let want = verify_lifted_pde_sampled(&u, 2, 3);
    assert!(want.relative > 0.0);
    assert!((got.relative - want.relative).abs() <= 1e-8 * want.relative.max(1e-12) + 1e-10);

    let zero = lift_modal(&d, &time, &ModalField::zeros(time.n_steps(), d.n_modes()), &tau).unwrap();
    let z = verify_transformation(&zero, &twist(), &grid, &op, s).unwrap();
    assert_eq!((z.relative, z.absolute), (0.0, 0.0));
}

#[test]
fn twisted_single_mode_solves_the_pushed_equation() {
    let time = TimeGrid::from_steps(0.5, 0.5, 16).unwrap();
    let om = omega();
    let f = twist();
    let mut res = Vec::new();
    for n in [32, 64, 128] {
        let grid = BoxGrid::new(2, 1.5, n).unwrap();
        let ident = build_conductivity(&grid, &ConductivityFamily::Identity, &om).unwrap();
        let op = assemble_elliptic(&grid, &ident).unwrap();
        let d = cosine_mode(&grid, &op, 3, 2);
        let tau = TauGrid::new(&time, TauConfig::default()).unwrap();
        let u = lift_modal(&d, &time, &bump_series(&time, 1, 0), &tau).unwrap();
        let pushed = pushforward_family(&grid, &f, &ConductivityFamily::Identity, &om).unwrap();
        let pop = assemble_elliptic(&grid, &pushed).unwrap();
        let r = verify_transformation(&u, &f, &grid, &pop, Sampling { t_stride: 2, tau_stride: 4 }).unwrap();
        res.push(r.relative);
    }
    println!("transformed residuals {res:?}");
    assert!(res[1] <= 5e-2, "{res:?}");
    assert!(res[0] / res[1] >= 2.0 && res[1] / res[2] >= 2.0, "{res:?}");
}

#[test]
fn identity_pair_is_indistinguishable() {
    let cfg = NonuniqConfig {
        map: Diffeomorphism::identity(),
        levels: vec![32],
        n_t: 16,
        ..Default::default()
    };
    let rep = nonuniqueness_experiment(&cfg).unwrap();
    let l = rep.levels[0];
    assert!(l.interior_residual <= 1e-6);
    for g in [l.cauchy_gap, l.coeff_gap, l.exterior_lift_gap, l.local_gap] {
        assert!(g <= 1e-6, "{l:?}");
    }
}

#[test]
fn twist_pair_is_much_closer_than_a_matched_bump() {
    let cfg = NonuniqConfig {
        n_t: 16,
        ..Default::default()
    };
    let setup = cfg.setup(32).unwrap();
    let (a, b) = cfg.media(&setup).unwrap();
    let twin = compare_media(&cfg, &setup, &a, &b).unwrap();
    let other = matched_bump(&cfg, &setup).unwrap();
    let ctrl = compare_media(&cfg, &setup, &a, &other).unwrap();
    println!("twist {twin:?}\nbump {ctrl:?}");
    assert!((ctrl.coeff_gap - twin.coeff_gap).abs() <= 1e-9 * twin.coeff_gap);
    assert!(twin.coeff_gap >= 0.1);
    assert!(ctrl.cauchy_gap >= 10.0 * twin.cauchy_gap, "{} vs {}", ctrl.cauchy_gap, twin.cauchy_gap);
}
