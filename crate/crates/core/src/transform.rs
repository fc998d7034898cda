//! Diffeomorphisms that fix the exterior, push-forward of conductivities and
//! the paired-medium experiment showing that exterior data cannot tell `σ`
//! from `F_*σ`.
//!
//! Jacobians follow `DF_ij = ∂F_i/∂x_j`, and the push-forward is
//! `F_*σ = (DF σ DFᵀ / det DF) ∘ F⁻¹`, which is the form produced by the
//! change of variables `y = F(x)` in `∫ σ∇u·∇u dx`.

use crate::error::{invalid, Error, Result};
use crate::forward::{
    extract_nonlocal_cauchy, solve_nonlocal, BumpParams, CauchyDataNonlocal, CausalPreconditioner, ExteriorData,
    Preconditioner,
};
use crate::fractional::{BalakrishnanQuadrature, CausalHs, FractionalOrder};
use crate::grid::{
    assemble_elliptic, build_conductivity, region_masks, spectral_decompose, BoxGrid, ConductivityFamily,
    ConductivityField, EllipticOperator, Region, RegionMasks, SpectralDecomposition, Sym2, TimeGrid,
};
use crate::interp::lagrange4;
use crate::lifted::{lift, reduce_solution, LiftedField, ReduceConfig, ReducedData, TauGrid};
use faer::Mat;
use num_complex::Complex64;

type Mat2 = [[f64; 2]; 2];

/// Map families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapKind {
    Identity,
    /// `(r, θ) ↦ (r, θ + g(r))`, `g(r) = a (1 − r²/r₀²)³` for `r < r₀`.
    RadialTwist { amplitude: f64, r0: f64 },
    /// `x ↦ x (1 + a b(r))` with the same profile `b`; not area preserving.
    RadialSqueeze { amplitude: f64, r0: f64 },
}

/// Invertible map of the plane equal to the identity outside a ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diffeomorphism {
    pub kind: MapKind,
    pub center: [f64; 2],
}

/// `(b, b')` for `b(r) = (1 − r²/r₀²)³` on `r < r₀`, zero beyond.
fn profile(r: f64, r0: f64) -> (f64, f64) {
    if r >= r0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - r * r / (r0 * r0);
    (q * q * q, -6.0 * r / (r0 * r0) * q * q)
}

fn rotate(a: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = a.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Node-wise validation summary of a map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapReport {
    pub min_det: f64,
    /// Minimum of `det DF⁻¹ = 1 / det DF` over the nodes.
    pub min_det_inverse: f64,
    pub max_roundtrip: f64,
    /// Largest spectral norm of `DF` over the nodes.
    pub lipschitz: f64,
}

impl Diffeomorphism {
    pub fn identity() -> Self {
        Self {
            kind: MapKind::Identity,
            center: [0.0, 0.0],
        }
    }

    pub fn radial_twist(amplitude: f64, r0: f64) -> Result<Self> {
        if !(amplitude.is_finite() && r0 > 0.0) {
            return Err(invalid("twist needs finite amplitude and r0 > 0"));
        }
        Ok(Self {
            kind: MapKind::RadialTwist { amplitude, r0 },
            center: [0.0, 0.0],
        })
    }

    /// Radial squeeze; rejects amplitudes for which `r(1 + a b(r))` is not
    /// strictly increasing.
    pub fn radial_squeeze(amplitude: f64, r0: f64) -> Result<Self> {
        if !(amplitude.is_finite() && r0 > 0.0) {
            return Err(invalid("squeeze needs finite amplitude and r0 > 0"));
        }
        for k in 0..=1000 {
            let r = r0 * k as f64 / 1000.0;
            let (b, db) = profile(r, r0);
            if 1.0 + amplitude * b <= 0.0 || 1.0 + amplitude * (b + r * db) <= 0.0 {
                return Err(Error::Map(format!("squeeze amplitude {amplitude} folds the map at r = {r:.4}")));
            }
        }
        Ok(Self {
            kind: MapKind::RadialSqueeze { amplitude, r0 },
            center: [0.0, 0.0],
        })
    }

    pub fn with_center(mut self, center: [f64; 2]) -> Self {
        self.center = center;
        self
    }

    /// Radius beyond which the map is the identity.
    pub fn support_radius(&self) -> f64 {
        match self.kind {
            MapKind::Identity => 0.0,
            MapKind::RadialTwist { r0, .. } | MapKind::RadialSqueeze { r0, .. } => r0,
        }
    }

    pub fn is_area_preserving(&self) -> bool {
        !matches!(self.kind, MapKind::RadialSqueeze { .. })
    }

    fn rel(&self, x: [f64; 2]) -> ([f64; 2], f64) {
        let d = [x[0] - self.center[0], x[1] - self.center[1]];
        (d, d[0].hypot(d[1]))
    }

    pub fn forward(&self, x: [f64; 2]) -> [f64; 2] {
        let (d, r) = self.rel(x);
        let v = match self.kind {
            MapKind::Identity => return x,
            MapKind::RadialTwist { amplitude, r0 } => {
                if r >= r0 {
                    return x;
                }
                rotate(amplitude * profile(r, r0).0, d)
            }
            MapKind::RadialSqueeze { amplitude, r0 } => {
                if r >= r0 {
                    return x;
                }
                let f = 1.0 + amplitude * profile(r, r0).0;
                [d[0] * f, d[1] * f]
            }
        };
        [self.center[0] + v[0], self.center[1] + v[1]]
    }

    pub fn inverse(&self, y: [f64; 2]) -> [f64; 2] {
        let (d, rho) = self.rel(y);
        let v = match self.kind {
            MapKind::Identity => return y,
            MapKind::RadialTwist { amplitude, r0 } => {
                if rho >= r0 {
                    return y;
                }
                // The twist keeps radii, so the inverse rotates back by g(|y|).
                rotate(-amplitude * profile(rho, r0).0, d)
            }
            MapKind::RadialSqueeze { amplitude, r0 } => {
                if rho >= r0 {
                    return y;
                }
                if rho == 0.0 {
                    return y;
                }
                let r = squeeze_radius(amplitude, r0, rho);
                [d[0] * r / rho, d[1] * r / rho]
            }
        };
        [self.center[0] + v[0], self.center[1] + v[1]]
    }

    /// Closed-form `DF(x)`.
    pub fn jacobian(&self, x: [f64; 2]) -> Mat2 {
        let (d, r) = self.rel(x);
        match self.kind {
            MapKind::Identity => [[1.0, 0.0], [0.0, 1.0]],
            MapKind::RadialTwist { amplitude, r0 } => {
                if r >= r0 || r == 0.0 {
                    let g = amplitude * profile(r, r0).0;
                    let (s, c) = g.sin_cos();
                    return [[c, -s], [s, c]];
                }
                let (b, db) = profile(r, r0);
                let (g, dg) = (amplitude * b, amplitude * db);
                // R(g) [I + g'(r) (J x) x̂ᵀ], J the quarter turn.
                let jx = [-d[1], d[0]];
                let xh = [d[0] / r, d[1] / r];
                let m = [
                    [1.0 + dg * jx[0] * xh[0], dg * jx[0] * xh[1]],
                    [dg * jx[1] * xh[0], 1.0 + dg * jx[1] * xh[1]],
                ];
                let (s, c) = g.sin_cos();
                let rot = [[c, -s], [s, c]];
                mul(&rot, &m)
            }
            MapKind::RadialSqueeze { amplitude, r0 } => {
                let (b, db) = profile(r, r0);
                let f = 1.0 + amplitude * b;
                if r == 0.0 || r >= r0 {
                    return [[f, 0.0], [0.0, f]];
                }
                let xh = [d[0] / r, d[1] / r];
                let k = amplitude * db * r;
                [
                    [f + k * xh[0] * xh[0], k * xh[0] * xh[1]],
                    [k * xh[1] * xh[0], f + k * xh[1] * xh[1]],
                ]
            }
        }
    }

    pub fn det(&self, x: [f64; 2]) -> f64 {
        let j = self.jacobian(x);
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    }

    /// Checks the identity outside `omega`, positive Jacobians and the
    /// round trip `F(F⁻¹(y)) = y` at every node.
    pub fn validate(&self, grid: &BoxGrid, omega: &Region) -> Result<MapReport> {
        if grid.dim() != 2 && self.kind != MapKind::Identity {
            return Err(invalid("non-identity maps need a two-dimensional grid"));
        }
        let mut rep = MapReport {
            min_det: f64::INFINITY,
            min_det_inverse: f64::INFINITY,
            max_roundtrip: 0.0,
            lipschitz: 0.0,
        };
        for node in 0..grid.n_nodes() {
            let y = grid.coord(node);
            if !omega.contains(y, grid.dim()) && (self.forward(y) != y || self.inverse(y) != y) {
                return Err(Error::Map(format!("map moves exterior node {node} at {y:?}")));
            }
            let x = self.inverse(y);
            let back = self.forward(x);
            let err = (back[0] - y[0]).hypot(back[1] - y[1]);
            let det = self.det(y);
            if !(det.is_finite() && det > 0.0) {
                return Err(Error::Map(format!("det DF = {det:.3e} at node {node}")));
            }
            rep.min_det = rep.min_det.min(det);
            rep.min_det_inverse = rep.min_det_inverse.min(1.0 / det);
            rep.max_roundtrip = rep.max_roundtrip.max(err);
            rep.lipschitz = rep.lipschitz.max(spectral_norm(&self.jacobian(y)));
        }
        if rep.max_roundtrip > 1e-10 {
            return Err(Error::Map(format!("round trip error {:.3e}", rep.max_roundtrip)));
        }
        Ok(rep)
    }
}

/// Solves `r (1 + a b(r)) = ρ` on `[0, r₀]`, Newton safeguarded by bisection.
fn squeeze_radius(a: f64, r0: f64, rho: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, r0);
    let mut r = rho;
    for _ in 0..100 {
        let (b, db) = profile(r, r0);
        let f = r * (1.0 + a * b) - rho;
        if f > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let step = f / (1.0 + a * (b + r * db));
        let mut next = r - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - r).abs() <= 1e-16 * r0 {
            return next;
        }
        r = next;
    }
    r
}

fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn spectral_norm(a: &Mat2) -> f64 {
    let ata = Sym2 {
        xx: a[0][0] * a[0][0] + a[1][0] * a[1][0],
        xy: a[0][0] * a[0][1] + a[1][0] * a[1][1],
        yy: a[0][1] * a[0][1] + a[1][1] * a[1][1],
    };
    ata.eigenvalues().1.sqrt()
}

/// `J σ Jᵀ / det J`.
pub fn congruence(j: &Mat2, s: &Sym2) -> Sym2 {
    let sm = [[s.xx, s.xy], [s.xy, s.yy]];
    let js = mul(j, &sm);
    let jt = [[j[0][0], j[1][0]], [j[0][1], j[1][1]]];
    let m = mul(&js, &jt);
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    Sym2 {
        xx: m[0][0] / det,
        xy: 0.5 * (m[0][1] + m[1][0]) / det,
        yy: m[1][1] / det,
    }
}

/// `F_*σ` at every node, with `σ` given pointwise.
pub fn pushforward_sigma(
    grid: &BoxGrid,
    map: &Diffeomorphism,
    sigma_at: impl Fn([f64; 2]) -> Sym2,
    omega: &Region,
) -> Result<ConductivityField> {
    let mut values = Vec::with_capacity(grid.n_nodes());
    for node in 0..grid.n_nodes() {
        let y = grid.coord(node);
        let x = map.inverse(y);
        let s = congruence(&map.jacobian(x), &sigma_at(x));
        let (lo, _) = s.eigenvalues();
        if !(lo.is_finite() && lo > 0.0) {
            return Err(Error::Conductivity(format!(
                "push-forward loses ellipticity at node {node} (y = {y:?}), smallest eigenvalue {lo:.3e}"
            )));
        }
        values.push(s);
    }
    ConductivityField::from_values(grid, values, omega)
}

/// `F_*σ` for a named family.
pub fn pushforward_family(
    grid: &BoxGrid,
    map: &Diffeomorphism,
    family: &ConductivityFamily,
    omega: &Region,
) -> Result<ConductivityField> {
    let dim = grid.dim();
    pushforward_sigma(grid, map, |x| family.eval(x, dim, omega), omega)
}

/// `F_*1 = 1 / det DF ∘ F⁻¹` at every node.
pub fn pushforward_one(grid: &BoxGrid, map: &Diffeomorphism) -> Vec<f64> {
    (0..grid.n_nodes()).map(|n| 1.0 / map.det(map.inverse(grid.coord(n)))).collect()
}

/// Cubic (bicubic in 2D) Lagrange stencil of the nodal interpolant at `y`.
#[derive(Debug, Clone)]
struct Stencil {
    nodes: Vec<usize>,
    weights: Vec<f64>,
}

fn axis_stencil(grid: &BoxGrid, y: f64) -> Result<(usize, [f64; 4])> {
    let n = grid.n_per_axis();
    let p = (y + grid.half_width()) / grid.spacing();
    let tol = 1e-9;
    if !(p >= -tol && p <= (n - 1) as f64 + tol) {
        return Err(Error::Map(format!("interpolation point {y} outside the grid")));
    }
    let start = (p.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let s = start as f64;
    Ok((start, lagrange4([s, s + 1.0, s + 2.0, s + 3.0], p)))
}

fn stencil_at(grid: &BoxGrid, y: [f64; 2]) -> Result<Stencil> {
    let (sx, wx) = axis_stencil(grid, y[0])?;
    if grid.dim() == 1 {
        return Ok(Stencil {
            nodes: (0..4).map(|a| sx + a).collect(),
            weights: wx.to_vec(),
        });
    }
    let (sy, wy) = axis_stencil(grid, y[1])?;
    let mut st = Stencil {
        nodes: Vec::with_capacity(16),
        weights: Vec::with_capacity(16),
    };
    for (b, wyb) in wy.iter().enumerate() {
        for (a, wxa) in wx.iter().enumerate() {
            st.nodes.push(grid.index(sx + a, sy + b));
            st.weights.push(wxa * wyb);
        }
    }
    Ok(st)
}

fn interpolate(st: &[Stencil], v: &[Complex64]) -> Vec<Complex64> {
    st.iter()
        .map(|s| s.nodes.iter().zip(&s.weights).map(|(&n, &w)| v[n] * w).sum())
        .collect()
}

/// Sample strides for [`verify_transformation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub t_stride: usize,
    pub tau_stride: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            t_stride: 1,
            tau_stride: 1,
        }
    }
}

/// Residual of the transformed lifted equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformResidual {
    pub relative: f64,
    pub absolute: f64,
    /// `‖L̃ Ũ‖` over the sampled set.
    pub reference: f64,
}

/// Builds `Ũ(t, τ, y) = U(t, τ, F⁻¹(y))` by cubic interpolation and
/// evaluates `F_*1 (∂_t + ∂_τ)Ũ + L̃ Ũ`, `L̃` the operator of `F_*σ`.
pub fn verify_transformation(
    u: &LiftedField<'_>,
    map: &Diffeomorphism,
    grid: &BoxGrid,
    push: &EllipticOperator,
    sampling: Sampling,
) -> Result<TransformResidual> {
    let decomp = u.decomposition();
    if push.n() != grid.n_nodes() || decomp.mass().len() != grid.n_nodes() {
        return Err(Error::Shape("operator, decomposition and grid disagree".into()));
    }
    let stencils = (0..grid.n_nodes())
        .map(|n| stencil_at(grid, map.inverse(grid.coord(n))))
        .collect::<Result<Vec<_>>>()?;
    let weight = pushforward_one(grid, map);
    let mass = push.mass();
    let (time, tau) = (u.time(), u.tau());
    let (mut num, mut den) = (0.0, 0.0);
    for i in (0..time.n_steps()).step_by(sampling.t_stride.max(1)) {
        for j in (1..tau.active(i)).step_by(sampling.tau_stride.max(1)) {
            let w = time.dt() * tau.weights()[j];
            let ut = interpolate(&stencils, &decomp.inverse_complex(&u.modal(i, tau.nodes()[j])));
            let dt = interpolate(&stencils, &decomp.inverse_complex(&u.diagonal_derivative(i, j)));
            let lu = push.apply_l_complex(&ut);
            for x in 0..ut.len() {
                num += w * mass[x] * (weight[x] * dt[x] + lu[x]).norm_sqr();
                den += w * mass[x] * lu[x].norm_sqr();
            }
        }
    }
    let (absolute, reference) = (num.sqrt(), den.sqrt());
    Ok(TransformResidual {
        relative: if reference > 0.0 { absolute / reference } else { 0.0 },
        absolute,
        reference,
    })
}

/// Settings of the paired-medium experiment.
#[derive(Debug, Clone)]
pub struct NonuniqConfig {
    pub x_max: f64,
    /// Nodes per axis at each refinement level.
    pub levels: Vec<usize>,
    pub horizon: f64,
    pub n_t: usize,
    pub order: f64,
    pub omega: Region,
    pub source: Region,
    pub probe: Region,
    /// Base conductivity `σ`.
    pub sigma: ConductivityFamily,
    pub map: Diffeomorphism,
    pub data: BumpParams,
    pub reduce: ReduceConfig,
    pub eigen_tol: f64,
    /// Time stride of the exterior lifted-field comparison.
    pub lift_t_stride: usize,
}

impl Default for NonuniqConfig {
    fn default() -> Self {
        Self {
            x_max: 1.5,
            levels: vec![32, 48, 64],
            horizon: 0.5,
            n_t: 32,
            order: 0.5,
            omega: Region::ball([0.0, 0.0], 0.6),
            source: Region::ball([1.0, 0.0], 0.2),
            probe: Region::ball([-1.0, 0.0], 0.2),
            sigma: ConductivityFamily::Identity,
            map: Diffeomorphism::radial_twist(0.5, 0.45).expect("default twist"),
            data: BumpParams {
                time_center: -0.1,
                time_half_width: 0.3,
                ..Default::default()
            },
            reduce: ReduceConfig::default(),
            eigen_tol: 1e-8,
            lift_t_stride: 8,
        }
    }
}

/// Grids, masks and exterior data of one refinement level.
#[derive(Debug, Clone)]
pub struct NonuniqSetup {
    pub grid: BoxGrid,
    pub time: TimeGrid,
    pub masks: RegionMasks,
    pub f: ExteriorData,
}

impl NonuniqConfig {
    pub fn setup(&self, n_x: usize) -> Result<NonuniqSetup> {
        let grid = BoxGrid::new(2, self.x_max, n_x)?;
        let time = TimeGrid::from_steps(self.horizon, self.horizon, self.n_t)?;
        let masks = region_masks(&grid, &self.omega, &self.source, Some(&self.probe))?;
        let f = ExteriorData::bump(&grid, &time, &masks, &self.source, &self.data)?;
        Ok(NonuniqSetup { grid, time, masks, f })
    }

    /// `σ` and `F_*σ` on the level's grid.
    pub fn media(&self, setup: &NonuniqSetup) -> Result<(ConductivityField, ConductivityField)> {
        self.map.validate(&setup.grid, &self.omega)?;
        if self.map.support_radius() > 0.0 {
            let d = self.omega.signed_distance(self.map.center, 2);
            if d + self.map.support_radius() >= 0.0 {
                return Err(Error::Map("map support reaches the interior boundary".into()));
            }
        }
        let a = build_conductivity(&setup.grid, &self.sigma, &self.omega)?;
        let b = pushforward_family(&setup.grid, &self.map, &self.sigma, &self.omega)?;
        Ok((a, b))
    }
}

/// Gaps between two media at one refinement level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonuniqLevel {
    pub n_x: usize,
    pub h: f64,
    pub dt: f64,
    /// Relative gap of the exterior nonlocal Cauchy data.
    pub cauchy_gap: f64,
    /// `‖σ₁ − σ₂‖_{L²(Ω)}`.
    pub coeff_gap: f64,
    /// Relative gap of the lifted fields on the exterior.
    pub exterior_lift_gap: f64,
    /// Relative gap of the reduced local Cauchy data.
    pub local_gap: f64,
    /// Largest interior residual of the two solves.
    pub interior_residual: f64,
}

/// Per-level report of the paired-medium experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct NonuniqReport {
    pub levels: Vec<NonuniqLevel>,
}

struct MediumRun {
    decomp: SpectralDecomposition,
    nonlocal: CauchyDataNonlocal,
    reduced: ReducedData,
}

fn run_medium(cfg: &NonuniqConfig, setup: &NonuniqSetup, sigma: &ConductivityField) -> Result<MediumRun> {
    let op = assemble_elliptic(&setup.grid, sigma)?;
    let decomp = spectral_decompose(&op, cfg.eigen_tol)?;
    let (nonlocal, reduced) = {
        let hs = CausalHs::new(
            &decomp,
            &setup.time,
            FractionalOrder::new(cfg.order)?,
            BalakrishnanQuadrature::default(),
        )?;
        let pre = CausalPreconditioner::new(&hs, &setup.masks.omega_nodes())?;
        let sol = solve_nonlocal(&hs, &setup.time, &setup.masks, &setup.f, Preconditioner::Causal(&pre), &cfg.reduce.nonlocal)?;
        let nonlocal = extract_nonlocal_cauchy(&hs, &setup.time, &setup.masks, &sol.u);
        let reduced = reduce_solution(&hs, &setup.grid, sigma, &setup.time, &setup.masks, sol, &cfg.reduce.tau)?;
        (nonlocal, reduced)
    };
    Ok(MediumRun {
        decomp,
        nonlocal,
        reduced,
    })
}

/// Nodal lifted field at time `i` for all active `τ` nodes, `n × n_active`.
fn nodal_slices(u: &LiftedField<'_>, i: usize) -> (Mat<f64>, Option<Mat<f64>>) {
    let tau = u.tau();
    let na = tau.active(i);
    let modal: Vec<Vec<Complex64>> = (0..na).map(|j| u.modal(i, tau.nodes()[j])).collect();
    let m = u.n_modes();
    let re = Mat::<f64>::from_fn(m, na, |k, j| modal[j][k].re);
    let has_im = modal.iter().flatten().any(|z| z.im != 0.0);
    let phi = u.decomposition().modes();
    let ur = phi * &re;
    let ui = has_im.then(|| phi * Mat::<f64>::from_fn(m, na, |k, j| modal[j][k].im));
    (ur, ui)
}

/// `‖U₁ − U₂‖ / ‖U₁‖` over the exterior nodes, every `t_stride`-th time
/// level counted back from the last one, all `τ` nodes.
pub fn exterior_lift_gap(a: &LiftedField<'_>, b: &LiftedField<'_>, masks: &RegionMasks, weights: &[f64], t_stride: usize) -> f64 {
    let tau = a.tau();
    let n_t = a.time().n_steps();
    let (mut num, mut den) = (0.0, 0.0);
    for i in (0..n_t).rev().step_by(t_stride.max(1)) {
        let (ar, ai) = nodal_slices(a, i);
        let (br, bi) = nodal_slices(b, i);
        for j in 0..ar.ncols() {
            for x in (0..ar.nrows()).filter(|&x| masks.exterior(x)) {
                let za = Complex64::new(ar[(x, j)], ai.as_ref().map_or(0.0, |m| m[(x, j)]));
                let zb = Complex64::new(br[(x, j)], bi.as_ref().map_or(0.0, |m| m[(x, j)]));
                let w = weights[x] * tau.weights()[j];
                num += w * (za - zb).norm_sqr();
                den += w * za.norm_sqr();
            }
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// Solves the exterior problem for two media with the same data and
/// compares everything observable from outside `Ω`.
pub fn compare_media(
    cfg: &NonuniqConfig,
    setup: &NonuniqSetup,
    sigma_a: &ConductivityField,
    sigma_b: &ConductivityField,
) -> Result<NonuniqLevel> {
    // The two pipelines are independent.
    let (ra, rb) = std::thread::scope(|s| {
        let hb = s.spawn(|| run_medium(cfg, setup, sigma_b));
        let ra = run_medium(cfg, setup, sigma_a);
        (ra, hb.join().expect("medium worker panicked"))
    });
    let (ra, rb) = (ra?, rb?);
    let weights = setup.grid.weights();
    let dt = setup.time.dt();
    let tau = TauGrid::new(&setup.time, cfg.reduce.tau)?;
    let la = lift(&ra.decomp, &setup.time, &ra.reduced.solution.u, &tau)?;
    let lb = lift(&rb.decomp, &setup.time, &rb.reduced.solution.u, &tau)?;
    Ok(NonuniqLevel {
        n_x: setup.grid.n_per_axis(),
        h: setup.grid.spacing(),
        dt,
        cauchy_gap: ra.nonlocal.relative_gap(&rb.nonlocal, &weights, dt),
        coeff_gap: sigma_a.l2_distance(sigma_b, &weights, |n| setup.masks.omega[n]),
        exterior_lift_gap: exterior_lift_gap(&la, &lb, &setup.masks, &weights, cfg.lift_t_stride),
        local_gap: ra.reduced.cauchy.relative_gap(&rb.reduced.cauchy),
        interior_residual: ra.reduced.solution.interior_residual.max(rb.reduced.solution.interior_residual),
    })
}

/// One refinement level of the `(σ, F_*σ)` comparison.
pub fn nonuniqueness_level(cfg: &NonuniqConfig, n_x: usize) -> Result<NonuniqLevel> {
    let setup = cfg.setup(n_x)?;
    let (a, b) = cfg.media(&setup)?;
    compare_media(cfg, &setup, &a, &b)
}

/// Runs every refinement level of `cfg`.
pub fn nonuniqueness_experiment(cfg: &NonuniqConfig) -> Result<NonuniqReport> {
    if cfg.levels.is_empty() {
        return Err(invalid("no refinement levels"));
    }
    let levels = cfg.levels.iter().map(|&n| nonuniqueness_level(cfg, n)).collect::<Result<Vec<_>>>()?;
    Ok(NonuniqReport { levels })
}

/// Scalar bump at the origin whose distance from `σ` in `L²(Ω)` equals
/// that of `F_*σ`, for the control comparison.
pub fn matched_bump(cfg: &NonuniqConfig, setup: &NonuniqSetup) -> Result<ConductivityField> {
    let (a, b) = cfg.media(setup)?;
    let weights = setup.grid.weights();
    let keep = |n: usize| setup.masks.omega[n];
    let target = a.l2_distance(&b, &weights, keep);
    let unit = build_conductivity(&setup.grid, &ConductivityFamily::scalar_bump(1.0), &cfg.omega)?;
    let base = a.l2_distance(&unit, &weights, keep);
    if base == 0.0 {
        return Err(invalid("bump profile vanishes on the grid"));
    }
    let amp = target / base;
    let dim = setup.grid.dim();
    let bump = ConductivityFamily::scalar_bump(amp);
    let values = (0..setup.grid.n_nodes())
        .map(|n| {
            let x = setup.grid.coord(n);
            let s = a.at(n);
            let e = bump.eval(x, dim, &cfg.omega).xx - 1.0;
            Sym2 {
                xx: s.xx + e,
                xy: s.xy,
                yy: s.yy + e,
            }
        })
        .collect();
    ConductivityField::from_values(&setup.grid, values, &cfg.omega)
}
