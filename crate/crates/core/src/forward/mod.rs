//! Exterior data, the nonlocal exterior problem for `H^s`, the local
//! parabolic solver and Cauchy-data extraction.

mod gmres;
mod local;

pub use gmres::{gmres, GmresConfig, GmresResult};
pub use local::{extract_local_cauchy, solve_local, CauchyDataLocal, LocalSolution, ThetaScheme};

use crate::error::{invalid, Error, Result};
use crate::field::{ModalField, SpaceTimeField};
use crate::fractional::{CausalHs, FractionalOrder, HsOperator, Past, Power, SpectralHs};
use crate::grid::{BoxGrid, Region, RegionMasks, SpectralDecomposition, TimeGrid};
use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;

/// Exterior data `f`, supported in the source set and vanishing before `-T`.
#[derive(Debug, Clone)]
pub struct ExteriorData {
    pub field: SpaceTimeField,
}

/// Separable polynomial bump `a (1 - |x - c|²/r²)^p (1 - ((t - t_c)/w)²)^q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpParams {
    pub amplitude: f64,
    pub space_order: i32,
    pub time_center: f64,
    pub time_half_width: f64,
    pub time_order: i32,
}

impl Default for BumpParams {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            space_order: 6,
            time_center: 0.0,
            time_half_width: 0.5,
            time_order: 6,
        }
    }
}

fn bump1(x: f64, p: i32) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - x * x).powi(p)
    }
}

fn spatial_bump(region: &Region, x: [f64; 2], dim: usize, p: i32) -> f64 {
    match *region {
        Region::Ball { center, radius } => {
            let r2 = if dim == 1 {
                (x[0] - center[0]).powi(2)
            } else {
                (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)
            };
            if r2 >= radius * radius {
                0.0
            } else {
                (1.0 - r2 / (radius * radius)).powi(p)
            }
        }
        Region::Box { lo, hi } => {
            let axes = if dim == 1 { 1 } else { 2 };
            (0..axes)
                .map(|a| {
                    let c = 0.5 * (lo[a] + hi[a]);
                    bump1((x[a] - c) / (0.5 * (hi[a] - lo[a])), p)
                })
                .product()
        }
        Region::AnnularSector {
            center,
            r_in,
            r_out,
            theta0,
            theta1,
        } => {
            let dx = x[0] - center[0];
            let dy = if dim == 1 { 0.0 } else { x[1] - center[1] };
            let r = (dx * dx + dy * dy).sqrt();
            let th = dy.atan2(dx);
            let rr = (r - 0.5 * (r_in + r_out)) / (0.5 * (r_out - r_in));
            let tt = (th - 0.5 * (theta0 + theta1)) / (0.5 * (theta1 - theta0));
            bump1(rr, p) * if dim == 1 { 1.0 } else { bump1(tt, p) }
        }
    }
}

impl ExteriorData {
    /// Validates support: zero on the closed interior region and outside
    /// the measurement sets, finite everywhere.
    pub fn from_field(field: SpaceTimeField, masks: &RegionMasks) -> Result<Self> {
        if !field.is_finite() {
            return Err(Error::NonFinite("exterior data".into()));
        }
        if field.n_nodes() != masks.omega.len() {
            return Err(Error::Shape("exterior data does not match grid".into()));
        }
        for i in 0..field.n_t() {
            for (node, z) in field.slice(i).iter().enumerate() {
                if *z != Complex64::new(0.0, 0.0) && (masks.omega[node] || !masks.measured(node)) {
                    return Err(Error::Support(format!(
                        "exterior data nonzero at node {node}, time level {i}, outside the exterior sets"
                    )));
                }
            }
        }
        Ok(Self { field })
    }

    /// Polynomial bump over the source region.
    pub fn bump(grid: &BoxGrid, time: &TimeGrid, masks: &RegionMasks, source: &Region, p: &BumpParams) -> Result<Self> {
        if p.time_center - p.time_half_width < -time.horizon() || p.time_center + p.time_half_width > time.horizon() {
            return Err(invalid("time support of the bump must lie in [-T, T]"));
        }
        let dim = grid.dim();
        let field = SpaceTimeField::from_fn(time, grid, |t, x| {
            let node_val = spatial_bump(source, x, dim, p.space_order);
            let tv = bump1((t - p.time_center) / p.time_half_width, p.time_order);
            Complex64::new(p.amplitude * node_val * tv, 0.0)
        });
        let field = field.masked(|node| masks.source[node]);
        Self::from_field(field, masks)
    }
}

/// Inverse of the regularized `σ = I` multiplier, used as a right
/// preconditioner for the restricted operator.
pub struct IdentityPreconditioner<'a> {
    basis: crate::grid::SubsetBasis,
    op: SpectralHs<'a>,
    n_t: usize,
}

impl<'a> IdentityPreconditioner<'a> {
    pub fn new(
        identity: &'a SpectralDecomposition,
        time: &TimeGrid,
        order: FractionalOrder,
        nodes: &[usize],
        damping: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let op = SpectralHs::new(identity, time, order, Power::Full, false, damping)?.regularized_inverse(epsilon);
        Ok(Self {
            basis: identity.subset(nodes),
            op,
            n_t: time.n_steps(),
        })
    }

    /// Applies to a vector over (horizon levels × subset nodes).
    pub fn apply(&self, r: &[Complex64], n_h: usize) -> Vec<Complex64> {
        let ns = self.basis.nodes.len();
        let mut padded = vec![Complex64::new(0.0, 0.0); self.n_t * ns];
        padded[..n_h * ns].copy_from_slice(r);
        let c = self.basis.to_modal(self.n_t, &padded);
        let out = self.op.apply_modal(&c);
        let vals = self.basis.from_modal(&out);
        vals[..n_h * ns].to_vec()
    }
}

/// Exact inverse of the restricted causal operator by forward substitution
/// in time: the restricted operator is block lower-triangular Toeplitz with
/// blocks `B_j = Φ_S diag(K_k[j]) (MΦ)_S^T`.
pub struct CausalPreconditioner<'o, 'a> {
    op: &'o CausalHs<'a>,
    basis: crate::grid::SubsetBasis,
    lu: faer::linalg::solvers::PartialPivLu<f64>,
    ns: usize,
}

impl<'o, 'a> CausalPreconditioner<'o, 'a> {
    pub fn new(op: &'o CausalHs<'a>, nodes: &[usize]) -> Result<Self> {
        if op.past() != Past::Vanishing {
            return Err(invalid("forward substitution needs the vanishing past"));
        }
        let d = op.decomposition();
        let basis = d.subset(nodes);
        let m = d.n_modes();
        let ns = nodes.len();
        let phi = basis.modes_matrix();
        let wt = basis.weighted_matrix();
        let scaled = Mat::<f64>::from_fn(ns, m, |i, k| phi[(i, k)] * op.kernel(k)[0]);
        let b0 = &scaled * wt.transpose();
        let lu = b0.partial_piv_lu();
        Ok(Self { op, basis, lu, ns })
    }

    /// Applies the inverse to a vector over (horizon levels × subset nodes).
    pub fn apply(&self, r: &[Complex64], n_h: usize) -> Vec<Complex64> {
        let ns = self.ns;
        let m = self.op.decomposition().n_modes();
        let phi = self.basis.modes_matrix();
        let wt = self.basis.weighted_matrix();
        let mut past: Vec<Vec<Complex64>> = Vec::with_capacity(n_h);
        let mut out = vec![Complex64::new(0.0, 0.0); n_h * ns];
        let mut rhs = Mat::<f64>::zeros(ns, 2);
        for i in 0..n_h {
            let mut hist = vec![Complex64::new(0.0, 0.0); m];
            for (k, hk) in hist.iter_mut().enumerate() {
                let ker = self.op.kernel(k);
                for j in 1..=i {
                    *hk += past[i - j][k] * ker[j];
                }
            }
            for a in 0..ns {
                let mut acc = r[i * ns + a];
                for (k, hk) in hist.iter().enumerate() {
                    acc -= hk * phi[(a, k)];
                }
                rhs[(a, 0)] = acc.re;
                rhs[(a, 1)] = acc.im;
            }
            let sol = self.lu.solve(&rhs);
            let mut c = vec![Complex64::new(0.0, 0.0); m];
            for a in 0..ns {
                let z = Complex64::new(sol[(a, 0)], sol[(a, 1)]);
                out[i * ns + a] = z;
                for (k, ck) in c.iter_mut().enumerate() {
                    *ck += z * wt[(a, k)];
                }
            }
            past.push(c);
        }
        out
    }
}

/// Right preconditioners for [`solve_nonlocal`].
pub enum Preconditioner<'p, 'o, 'a> {
    None,
    /// Regularized inverse of the `σ = I` symbol.
    IdentitySymbol(&'p IdentityPreconditioner<'a>),
    /// Forward substitution with the causal kernels.
    Causal(&'p CausalPreconditioner<'o, 'a>),
}

/// Solver settings for the nonlocal exterior problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlocalConfig {
    pub gmres: GmresConfig,
    /// Required `‖H^s u‖_{Ω_T} / ‖f‖` after convergence.
    pub residual_tol: f64,
}

impl Default for NonlocalConfig {
    fn default() -> Self {
        Self {
            gmres: GmresConfig::default(),
            residual_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NonlocalSolution {
    /// `u = f + w` with `w` supported in the closed interior region.
    pub u: SpaceTimeField,
    pub iterations: usize,
    /// Final GMRES relative residual.
    pub solver_residual: f64,
    pub history: Vec<f64>,
    /// `‖H^s u‖_{Ω × (-T, T]} / ‖f‖`.
    pub interior_residual: f64,
}

/// Restricted operator `w ↦ (H^s E w)|_{Ω × (-T, T]}` on subset coordinates.
struct Restricted<'o, O: HsOperator> {
    op: &'o O,
    basis: crate::grid::SubsetBasis,
    n_t: usize,
    n_h: usize,
}

impl<O: HsOperator> Restricted<'_, O> {
    fn apply(&self, w: &[Complex64]) -> Vec<Complex64> {
        let ns = self.basis.nodes.len();
        let mut padded = vec![Complex64::new(0.0, 0.0); self.n_t * ns];
        padded[..self.n_h * ns].copy_from_slice(w);
        let c = self.basis.to_modal(self.n_t, &padded);
        let out = self.op.apply_modal(&c);
        let vals = self.basis.from_modal(&out);
        vals[..self.n_h * ns].to_vec()
    }

    fn rhs(&self, f: &SpaceTimeField) -> Vec<Complex64> {
        let d = self.op.decomposition();
        let hf: ModalField = self.op.apply_modal(&d.to_modal(f));
        let vals = self.basis.from_modal(&hf);
        vals[..self.n_h * self.basis.nodes.len()].iter().map(|z| -z).collect()
    }

    fn extend(&self, f: &SpaceTimeField, w: &[Complex64]) -> SpaceTimeField {
        let mut u = f.clone();
        let ns = self.basis.nodes.len();
        for i in 0..self.n_h {
            for (j, &node) in self.basis.nodes.iter().enumerate() {
                u.set(i, node, w[i * ns + j]);
            }
        }
        u
    }
}

fn interior_residual<O: HsOperator>(op: &O, u: &SpaceTimeField, f: &SpaceTimeField, masks: &RegionMasks, time: &TimeGrid) -> f64 {
    let hs = op.apply(u);
    let w = op.decomposition().mass();
    let n_h = time.n_horizon();
    let num = hs.norm_where(time.dt(), w, |i| i < n_h, |x| masks.omega[x]);
    let den = f.norm(time.dt(), w);
    if den == 0.0 {
        return num;
    }
    num / den
}

/// Solves `H^s u = 0` in `Ω × (-T, T]` with `u = f` outside `Ω`.
pub fn solve_nonlocal<O: HsOperator>(
    op: &O,
    time: &TimeGrid,
    masks: &RegionMasks,
    f: &ExteriorData,
    precond: Preconditioner<'_, '_, '_>,
    cfg: &NonlocalConfig,
) -> Result<NonlocalSolution> {
    let nodes = masks.omega_nodes();
    let n_h = time.n_horizon();
    let r = Restricted {
        op,
        basis: op.decomposition().subset(&nodes),
        n_t: time.n_steps(),
        n_h,
    };
    let b = r.rhs(&f.field);
    let res = match precond {
        Preconditioner::IdentitySymbol(p) => gmres(|w| r.apply(w), |v| p.apply(v, n_h), &b, &cfg.gmres),
        Preconditioner::Causal(p) => gmres(|w| r.apply(w), |v| p.apply(v, n_h), &b, &cfg.gmres),
        Preconditioner::None => gmres(|w| r.apply(w), |v| v.to_vec(), &b, &cfg.gmres),
    };
    if !res.converged {
        return Err(Error::Stagnation {
            iterations: res.iterations,
            residual: res.residual,
            history: res.history,
        });
    }
    let u = r.extend(&f.field, &res.x);
    let interior = interior_residual(op, &u, &f.field, masks, time);
    if !(interior <= cfg.residual_tol) {
        return Err(Error::Stagnation {
            iterations: res.iterations,
            residual: interior,
            history: res.history,
        });
    }
    Ok(NonlocalSolution {
        u,
        iterations: res.iterations,
        solver_residual: res.residual,
        history: res.history,
        interior_residual: interior,
    })
}

/// Dense oracle: assembles the restricted operator column by column and
/// solves by LU. Intended for small grids.
pub fn solve_nonlocal_direct<O: HsOperator>(op: &O, time: &TimeGrid, masks: &RegionMasks, f: &ExteriorData) -> Result<SpaceTimeField> {
    let nodes = masks.omega_nodes();
    let n_h = time.n_horizon();
    let r = Restricted {
        op,
        basis: op.decomposition().subset(&nodes),
        n_t: time.n_steps(),
        n_h,
    };
    let n = n_h * nodes.len();
    if n > 6000 {
        return Err(invalid(format!("{n} unknowns is too many for the dense oracle")));
    }
    let mut a = Mat::<faer::c64>::zeros(n, n);
    let mut e = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        e[j] = Complex64::new(1.0, 0.0);
        let col = r.apply(&e);
        for (i, v) in col.iter().enumerate() {
            a[(i, j)] = *v;
        }
        e[j] = Complex64::new(0.0, 0.0);
    }
    let b = r.rhs(&f.field);
    let bm = Mat::<faer::c64>::from_fn(n, 1, |i, _| b[i]);
    let x = a.partial_piv_lu().solve(&bm);
    let w: Vec<Complex64> = (0..n).map(|i| x[(i, 0)]).collect();
    if w.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("dense solve".into()));
    }
    Ok(r.extend(&f.field, &w))
}

/// Exterior values and `H^s u` on the measurement sets.
#[derive(Debug, Clone)]
pub struct CauchyDataNonlocal {
    pub nodes: Vec<usize>,
    /// `u` on the measurement nodes, time-major, horizon levels only.
    pub values: Vec<Complex64>,
    /// `H^s u` on the measurement nodes.
    pub hs: Vec<Complex64>,
    pub n_t: usize,
}

impl CauchyDataNonlocal {
    fn norm(v: &[Complex64], w: &[f64], ns: usize, dt: f64) -> f64 {
        (v.iter().enumerate().map(|(j, z)| z.norm_sqr() * w[j % ns]).sum::<f64>() * dt).sqrt()
    }

    /// Relative gap `‖(u₁, H^s u₁) − (u₂, H^s u₂)‖ / ‖(u₁, H^s u₁)‖` on the
    /// measurement sets.
    pub fn relative_gap(&self, other: &CauchyDataNonlocal, weights: &[f64], dt: f64) -> f64 {
        let ns = self.nodes.len();
        let w: Vec<f64> = self.nodes.iter().map(|&n| weights[n]).collect();
        let dv: Vec<Complex64> = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        let dh: Vec<Complex64> = self.hs.iter().zip(&other.hs).map(|(a, b)| a - b).collect();
        let num = (Self::norm(&dv, &w, ns, dt).powi(2) + Self::norm(&dh, &w, ns, dt).powi(2)).sqrt();
        let den = (Self::norm(&self.values, &w, ns, dt).powi(2) + Self::norm(&self.hs, &w, ns, dt).powi(2)).sqrt();
        num / den
    }

    /// Relative gap of the `H^s u` component only.
    pub fn hs_gap(&self, other: &CauchyDataNonlocal, weights: &[f64], dt: f64) -> f64 {
        let ns = self.nodes.len();
        let w: Vec<f64> = self.nodes.iter().map(|&n| weights[n]).collect();
        let dh: Vec<Complex64> = self.hs.iter().zip(&other.hs).map(|(a, b)| a - b).collect();
        Self::norm(&dh, &w, ns, dt) / Self::norm(&self.hs, &w, ns, dt)
    }
}

/// Restricts `u` and `H^s u` to the measurement nodes over `(-T, T]`.
pub fn extract_nonlocal_cauchy<O: HsOperator>(op: &O, time: &TimeGrid, masks: &RegionMasks, u: &SpaceTimeField) -> CauchyDataNonlocal {
    let hs = op.apply(u);
    let nodes: Vec<usize> = (0..masks.omega.len()).filter(|&n| masks.measured(n)).collect();
    let n_h = time.n_horizon();
    let mut values = Vec::with_capacity(n_h * nodes.len());
    let mut hsv = Vec::with_capacity(n_h * nodes.len());
    for i in 0..n_h {
        for &n in &nodes {
            values.push(u.get(i, n));
            hsv.push(hs.get(i, n));
        }
    }
    CauchyDataNonlocal {
        nodes,
        values,
        hs: hsv,
        n_t: n_h,
    }
}
