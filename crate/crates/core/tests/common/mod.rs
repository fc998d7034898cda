#![allow(dead_code)]

use fracpar_core::grid::{
    assemble_elliptic, build_conductivity, spectral_decompose, BoxGrid, ConductivityFamily, Region, SpectralDecomposition,
    TimeGrid,
};
use fracpar_core::SpaceTimeField;
use num_complex::Complex64;

pub fn identity_1d(n_x: usize, half_width: f64) -> (BoxGrid, SpectralDecomposition) {
    let g = BoxGrid::new(1, half_width, n_x).unwrap();
    let om = Region::ball([0.0, 0.0], 0.5);
    let sig = build_conductivity(&g, &ConductivityFamily::Identity, &om).unwrap();
    let d = spectral_decompose(&assemble_elliptic(&g, &sig).unwrap(), 1e-10).unwrap();
    (g, d)
}

/// `(1 - x^2)^p` on `|x| < 1`.
pub fn poly_bump(x: f64, p: i32) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - x * x).powi(p)
    }
}

/// Smooth field built from a few modes with positive eigenvalue, vanishing
/// near both ends of the time window.
pub fn smooth_modal_field(time: &TimeGrid, d: &SpectralDecomposition, modes: &[usize]) -> SpaceTimeField {
    let n = d.n_modes();
    let mut f = SpaceTimeField::zeros(time.n_steps(), n);
    let mid = 0.5 * (time.end() - time.horizon());
    let half = 0.4 * (time.end() + time.horizon());
    for i in 0..time.n_steps() {
        let t = time.time(i);
        let b = poly_bump((t - mid) / half, 8);
        for (r, &k) in modes.iter().enumerate() {
            let phi = d.mode(k);
            let amp = b * (1.0 + 0.5 * ((r as f64 + 1.0) * t).sin()) / (1.0 + r as f64);
            for x in 0..n {
                let z = f.get(i, x) + Complex64::new(amp * phi[x], 0.0);
                f.set(i, x, z);
            }
        }
    }
    f
}

pub fn rel_err(a: &SpaceTimeField, b: &SpaceTimeField, dt: f64, w: &[f64]) -> f64 {
    a.sub(b).norm(dt, w) / b.norm(dt, w)
}

pub mod desk {
    use fracpar_core::forward::{BumpParams, CausalPreconditioner, ExteriorData, NonlocalConfig, Preconditioner, solve_nonlocal};
    use fracpar_core::fractional::{BalakrishnanQuadrature, CausalHs, FractionalOrder};
    use fracpar_core::grid::*;
    use fracpar_core::SpaceTimeField;

    /// One-dimensional desk problem: `Ω = [-0.5, 0.5]` in `[-2, 2]`, source
    /// `W₁ = ball(1.2, 0.3)`, probe `W₂ = ball(-1.2, 0.3)`, `T = T_end = 1`.
    pub struct Desk {
        pub grid: BoxGrid,
        pub time: TimeGrid,
        pub omega: Region,
        pub source: Region,
        pub masks: RegionMasks,
    }

    pub fn desk_1d(n_x: usize, n_t: usize) -> Desk {
        let grid = BoxGrid::new(1, 2.0, n_x).unwrap();
        let time = TimeGrid::from_steps(1.0, 1.0, n_t).unwrap();
        let omega = Region::ball([0.0, 0.0], 0.5);
        let source = Region::ball([1.2, 0.0], 0.3);
        let probe = Region::ball([-1.2, 0.0], 0.3);
        let masks = region_masks(&grid, &omega, &source, Some(&probe)).unwrap();
        Desk {
            grid,
            time,
            omega,
            source,
            masks,
        }
    }

    pub struct Medium {
        pub sigma: ConductivityField,
        pub op: EllipticOperator,
        pub decomp: SpectralDecomposition,
    }

    pub fn medium(d: &Desk, fam: &ConductivityFamily) -> Medium {
        let sigma = build_conductivity(&d.grid, fam, &d.omega).unwrap();
        let op = assemble_elliptic(&d.grid, &sigma).unwrap();
        let decomp = spectral_decompose(&op, 1e-10).unwrap();
        Medium { sigma, op, decomp }
    }

    pub fn bump(d: &Desk) -> ExteriorData {
        let p = BumpParams {
            time_center: -0.2,
            time_half_width: 0.6,
            ..Default::default()
        };
        ExteriorData::bump(&d.grid, &d.time, &d.masks, &d.source, &p).unwrap()
    }

    pub fn causal<'a>(decomp: &'a SpectralDecomposition, time: &TimeGrid, s: f64) -> CausalHs<'a> {
        CausalHs::new(decomp, time, FractionalOrder::new(s).unwrap(), BalakrishnanQuadrature::default()).unwrap()
    }

    pub fn solve(d: &Desk, m: &Medium, s: f64, f: &ExteriorData) -> SpaceTimeField {
        let op = causal(&m.decomp, &d.time, s);
        let pre = CausalPreconditioner::new(&op, &d.masks.omega_nodes()).unwrap();
        solve_nonlocal(&op, &d.time, &d.masks, f, Preconditioner::Causal(&pre), &NonlocalConfig::default())
            .unwrap()
            .u
    }
}
