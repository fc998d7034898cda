//! θ-scheme for `∂_t v + L v = F` in the closed interior region with
//! Dirichlet data pinned on the boundary band, and local Cauchy data.

use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::grid::{BoxGrid, ConductivityField, EllipticOperator, RegionMasks, TimeGrid};
use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use num_complex::Complex64;

/// `θ = 1` is backward Euler, `θ = 1/2` Crank-Nicolson.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaScheme {
    pub theta: f64,
}

impl Default for ThetaScheme {
    fn default() -> Self {
        Self { theta: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct LocalSolution {
    /// Solution on the full grid, zero outside the interior region.
    pub v: SpaceTimeField,
    /// `max_t ‖v(t)‖_{L²(Ω)}`.
    pub max_l2: f64,
    /// `max_t ‖g(t)‖_{L²(Σ)} + ‖F‖_{L²(Ω_T)}`.
    pub data_norm: f64,
}

/// Solves with `v(-T) = 0`, `v = g` on the band nodes and source `F` on the
/// remaining interior nodes. `g` and `F` are full-grid fields; only their
/// band and interior values are read.
pub fn solve_local(
    op: &EllipticOperator,
    time: &TimeGrid,
    masks: &RegionMasks,
    g: &SpaceTimeField,
    source: Option<&SpaceTimeField>,
    scheme: ThetaScheme,
) -> Result<LocalSolution> {
    let n = op.n();
    if g.n_nodes() != n || g.n_t() != time.n_steps() {
        return Err(Error::Shape("Dirichlet data does not match grid".into()));
    }
    if !g.is_finite() || source.is_some_and(|f| !f.is_finite()) {
        return Err(Error::NonFinite("local data".into()));
    }
    let theta = scheme.theta;
    if !(0.5..=1.0).contains(&theta) {
        return Err(Error::InvalidParameter("θ must lie in [1/2, 1]".into()));
    }
    let mut is_band = vec![false; n];
    for &b in &masks.sigma {
        is_band[b] = true;
    }
    let interior: Vec<usize> = (0..n).filter(|&x| masks.omega[x] && !is_band[x]).collect();
    let mut pos = vec![usize::MAX; n];
    for (p, &x) in interior.iter().enumerate() {
        pos[x] = p;
    }
    let ni = interior.len();
    let dt = time.dt();
    let mass = op.mass();
    let mut a = Mat::<f64>::zeros(ni, ni);
    for (p, &x) in interior.iter().enumerate() {
        a[(p, p)] += mass[x];
        for (c, k) in op.row(x) {
            if pos[c] != usize::MAX {
                a[(p, pos[c])] += theta * dt * k;
            } else if !masks.omega[c] {
                return Err(Error::Geometry(format!("interior node {x} couples outside the region")));
            }
        }
    }
    let llt = a.llt(Side::Lower).map_err(|e| Error::Assembly(format!("local system not SPD: {e:?}")))?;

    let zero = Complex64::new(0.0, 0.0);
    let mut v = SpaceTimeField::zeros(time.n_steps(), n);
    let mut prev = vec![zero; n];
    let mut prev_f = vec![zero; n];
    let mut rhs = Mat::<f64>::zeros(ni, 2);
    for i in 0..time.n_steps() {
        let mut cur = vec![zero; n];
        for &b in &masks.sigma {
            cur[b] = g.get(i, b);
        }
        let cur_f: Vec<Complex64> = match source {
            Some(f) => f.slice(i).to_vec(),
            None => vec![zero; n],
        };
        for (p, &x) in interior.iter().enumerate() {
            let mut acc = prev[x] * mass[x];
            for (c, k) in op.row(x) {
                acc -= prev[c] * ((1.0 - theta) * dt * k);
                if is_band[c] {
                    acc -= cur[c] * (theta * dt * k);
                }
            }
            acc += (cur_f[x] * theta + prev_f[x] * (1.0 - theta)) * (dt * mass[x]);
            rhs[(p, 0)] = acc.re;
            rhs[(p, 1)] = acc.im;
        }
        let sol = llt.solve(&rhs);
        for (p, &x) in interior.iter().enumerate() {
            cur[x] = Complex64::new(sol[(p, 0)], sol[(p, 1)]);
        }
        v.slice_mut(i).copy_from_slice(&cur);
        prev = cur;
        prev_f = cur_f;
    }
    let w = op.mass();
    let mut max_l2 = 0.0f64;
    let mut gmax = 0.0f64;
    for i in 0..time.n_steps() {
        let l2: f64 = v.slice(i).iter().enumerate().filter(|(x, _)| masks.omega[*x]).map(|(x, z)| w[x] * z.norm_sqr()).sum();
        max_l2 = max_l2.max(l2.sqrt());
        let gb: f64 = masks.sigma.iter().map(|&b| w[b] * g.get(i, b).norm_sqr()).sum();
        gmax = gmax.max(gb.sqrt());
    }
    let fnorm = source.map_or(0.0, |f| f.norm_where(dt, w, |_| true, |x| masks.omega[x]));
    Ok(LocalSolution {
        v,
        max_l2,
        data_norm: gmax + fnorm,
    })
}

/// Trace and conormal derivative `(σ ∇v)·ν` on the band nodes.
#[derive(Debug, Clone)]
pub struct CauchyDataLocal {
    pub nodes: Vec<usize>,
    /// Time-major, one column per band node.
    pub trace: Vec<Complex64>,
    pub flux: Vec<Complex64>,
    pub n_t: usize,
}

impl CauchyDataLocal {
    /// Relative gap of the combined (trace, flux) data, sums over band nodes.
    pub fn relative_gap(&self, other: &CauchyDataLocal) -> f64 {
        let d2 = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>();
        let n2 = |a: &[Complex64]| a.iter().map(|x| x.norm_sqr()).sum::<f64>();
        ((d2(&self.trace, &other.trace) + d2(&self.flux, &other.flux)) / (n2(&self.trace) + n2(&self.flux))).sqrt()
    }
}

/// Second-order difference weights along one axis at `node`, using only
/// nodes accepted by `inside`. Returns `(offsets, weights)` in grid steps.
fn axis_stencil(grid: &BoxGrid, node: usize, axis: usize, prefer: f64, inside: &dyn Fn(usize) -> bool) -> Option<Vec<(usize, f64)>> {
    let (i, j) = grid.ij(node);
    let n = grid.n_per_axis() as isize;
    let h = grid.spacing();
    let at = |d: isize| -> Option<usize> {
        let (a, b) = if axis == 0 { (i as isize + d, j as isize) } else { (i as isize, j as isize + d) };
        if (0..n).contains(&a) && (0..n).contains(&b) {
            let id = grid.index(a as usize, b as usize);
            inside(id).then_some(id)
        } else {
            None
        }
    };
    // One-sided towards the interior first, matching the outward normal.
    let dir: isize = if prefer > 0.0 { -1 } else { 1 };
    if prefer != 0.0 {
        if let (Some(a), Some(b)) = (at(dir), at(2 * dir)) {
            let s = -(dir as f64);
            return Some(vec![(node, s * 1.5 / h), (a, -s * 2.0 / h), (b, s * 0.5 / h)]);
        }
    }
    if let (Some(a), Some(b)) = (at(-1), at(1)) {
        return Some(vec![(a, -0.5 / h), (b, 0.5 / h)]);
    }
    for d in [1isize, -1] {
        if let (Some(a), Some(b)) = (at(d), at(2 * d)) {
            let s = d as f64;
            return Some(vec![(node, -s * 1.5 / h), (a, s * 2.0 / h), (b, -s * 0.5 / h)]);
        }
    }
    None
}

/// Extracts trace and conormal flux on the band, first `n_t` time levels.
pub fn extract_local_cauchy(
    grid: &BoxGrid,
    sigma: &ConductivityField,
    masks: &RegionMasks,
    v: &SpaceTimeField,
    n_t: usize,
) -> Result<CauchyDataLocal> {
    let inside = |x: usize| masks.omega[x];
    let axes = grid.dim();
    let mut stencils = Vec::with_capacity(masks.sigma.len());
    for (b, &node) in masks.sigma.iter().enumerate() {
        let nu = masks.normals[b];
        let s = sigma.at(node);
        let dir = if axes == 1 { [s.xx * nu[0], 0.0] } else { s.apply(nu) };
        let mut st: Vec<(usize, f64)> = Vec::new();
        for a in 0..axes {
            if dir[a] == 0.0 {
                continue;
            }
            let ax = axis_stencil(grid, node, a, nu[a], &inside)
                .ok_or_else(|| Error::Geometry(format!("band node {node} lacks interior neighbors on axis {a}")))?;
            st.extend(ax.into_iter().map(|(id, w)| (id, w * dir[a])));
        }
        stencils.push(st);
    }
    let nb = masks.sigma.len();
    let mut trace = Vec::with_capacity(n_t * nb);
    let mut flux = Vec::with_capacity(n_t * nb);
    for i in 0..n_t {
        for (b, &node) in masks.sigma.iter().enumerate() {
            trace.push(v.get(i, node));
            flux.push(stencils[b].iter().map(|&(id, w)| v.get(i, id) * w).sum());
        }
    }
    Ok(CauchyDataLocal {
        nodes: masks.sigma.clone(),
        trace,
        flux,
        n_t,
    })
}
