//! Lifted field `U(t, τ, x) = P_τ[u(t − τ, ·)](x)` and the fields built on it.
//!
//! `U` solves `(∂_t + ∂_τ)U + L U = 0` with `U(t, 0) = u(t)`. Integrating in
//! `τ` gives `V` with `H V = u`, and `W = H^s V` solves `H W = H^s u`, which
//! vanishes inside `Ω`: that is the reduction of the nonlocal exterior
//! problem to a local lateral one.
//!
//! Everything is stored in modal space. A [`LiftedField`] keeps the modal
//! coefficients of `u` and evaluates `U_k(t, τ) = e^{-λ_k τ} û_k(t − τ)` on
//! demand, so no `(t, τ, x)` array is ever materialised unless asked for.

use crate::error::{invalid, Error, Result};
use crate::field::{ModalField, SpaceTimeField};
use crate::forward::{
    extract_local_cauchy, solve_nonlocal, CauchyDataLocal, CausalPreconditioner, ExteriorData, NonlocalConfig, NonlocalSolution,
    Preconditioner,
};
use crate::fractional::{CausalHs, FractionalOrder, HsOperator};
use crate::grid::{BoxGrid, ConductivityField, EllipticOperator, RegionMasks, SpectralDecomposition, TimeGrid};
use crate::interp::{eval_window, window_derivative, window_stencil};
use crate::quad::GaussRule;
use faer::{Mat, Side};
use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Parameters of the graded `τ` grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauConfig {
    /// Upper bound on the ratio of consecutive panel widths inside `[0, Δt]`.
    pub ratio: f64,
    /// First panel edge as a fraction of `Δt`.
    pub first_fraction: f64,
    pub gauss_points: usize,
    /// Each panel is split into this many equal sub-panels.
    pub subdivisions: usize,
    /// Relative tolerance for the `τ`-quadrature self-check in [`integrate_v`].
    pub convergence_tol: f64,
}

impl Default for TauConfig {
    fn default() -> Self {
        Self {
            ratio: 1.15,
            first_fraction: 0.125,
            gauss_points: 6,
            subdivisions: 1,
            convergence_tol: 1e-6,
        }
    }
}

impl TauConfig {
    /// Same grading with every panel halved.
    pub fn refined(&self) -> Self {
        Self {
            subdivisions: 2 * self.subdivisions,
            ..*self
        }
    }
}

/// Quadrature grid in `τ`: `τ_0 = 0` followed by Gauss nodes on panels that
/// are graded geometrically inside `[0, Δt]` and uniform of width `Δt`
/// beyond, up to `τ_max = T_end + T`.
///
/// Panel edges past `Δt` sit on multiples of `Δt`, so the cap `τ ≤ t_i + T`
/// is a prefix of the node list for every time sample.
#[derive(Debug, Clone)]
pub struct TauGrid {
    dt: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Width of the sub-panel holding each node.
    widths: Vec<f64>,
    /// `active[i]` = number of nodes with `τ ≤ t_i + T`.
    active: Vec<usize>,
    config: TauConfig,
}

impl TauGrid {
    pub fn new(time: &TimeGrid, config: TauConfig) -> Result<Self> {
        if !(config.ratio > 1.0) || !(config.first_fraction > 0.0 && config.first_fraction < 1.0) {
            return Err(invalid("tau grading needs ratio > 1 and first fraction in (0, 1)"));
        }
        if config.gauss_points < 2 || config.subdivisions == 0 {
            return Err(invalid("tau grid needs at least 2 Gauss points and 1 subdivision"));
        }
        let dt = time.dt();
        let n_steps = time.n_steps();
        let n_graded = ((1.0 / config.first_fraction).ln() / config.ratio.ln()).ceil() as usize;
        let r = (1.0 / config.first_fraction).powf(1.0 / n_graded as f64);
        // Panels as (lo, hi, step cap).
        let mut panels = vec![(0.0, dt * config.first_fraction, 1usize)];
        for k in 0..n_graded {
            let lo = dt * config.first_fraction * r.powi(k as i32);
            let hi = if k + 1 == n_graded { dt } else { lo * r };
            panels.push((lo, hi, 1));
        }
        for m in 1..n_steps {
            panels.push((m as f64 * dt, (m + 1) as f64 * dt, m + 1));
        }
        let rule = GaussRule::new(config.gauss_points);
        let mut nodes = vec![0.0];
        let mut weights = vec![0.0];
        let mut widths = vec![panels[0].1];
        let mut caps = vec![1usize];
        for &(lo, hi, cap) in &panels {
            let sub = (hi - lo) / config.subdivisions as f64;
            for q in 0..config.subdivisions {
                let a = lo + q as f64 * sub;
                for (x, w) in rule.on(a, a + sub) {
                    nodes.push(x);
                    weights.push(w);
                    widths.push(sub);
                    caps.push(cap);
                }
            }
        }
        let active = (0..n_steps).map(|i| caps.partition_point(|&c| c <= i + 1)).collect();
        Ok(Self {
            dt,
            nodes,
            weights,
            widths,
            active,
            config,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn config(&self) -> &TauConfig {
        &self.config
    }

    pub fn tau_max(&self) -> f64 {
        self.dt * self.active.len() as f64
    }

    /// Nodes contributing at time sample `i` (those with `τ ≤ t_i + T`).
    pub fn active(&self, i: usize) -> usize {
        self.active[i]
    }

    /// Diagonal differencing step used at node `j`: a quarter of the local
    /// sub-panel width, so it shrinks with every refinement of the grid.
    pub fn diagonal_step(&self, j: usize) -> f64 {
        0.25 * self.widths[j]
    }
}

/// `U(t_i, τ, ·)` for `u` given through its modal coefficients.
#[derive(Debug, Clone)]
pub struct LiftedField<'a> {
    decomp: &'a SpectralDecomposition,
    time: TimeGrid,
    tau: TauGrid,
    /// `series[k]` = `û_k(t_0..)`.
    series: Vec<Vec<Complex64>>,
}

/// Lifts `u` with the semigroup of `decomp`.
pub fn lift<'a>(decomp: &'a SpectralDecomposition, time: &TimeGrid, u: &SpaceTimeField, tau: &TauGrid) -> Result<LiftedField<'a>> {
    if u.n_t() != time.n_steps() || u.n_nodes() != decomp.mass().len() {
        return Err(Error::Shape(format!(
            "field {}x{} for {} steps and {} nodes",
            u.n_t(),
            u.n_nodes(),
            time.n_steps(),
            decomp.mass().len()
        )));
    }
    if !u.is_finite() {
        return Err(Error::NonFinite("lifted data".into()));
    }
    lift_modal(decomp, time, &decomp.to_modal(u), tau)
}

/// Lifts modal coefficients directly.
pub fn lift_modal<'a>(decomp: &'a SpectralDecomposition, time: &TimeGrid, c: &ModalField, tau: &TauGrid) -> Result<LiftedField<'a>> {
    if c.n_t != time.n_steps() || c.n_modes != decomp.n_modes() {
        return Err(Error::Shape("modal field does not match grid".into()));
    }
    if c.n_t < 4 {
        return Err(invalid("lifting needs at least 4 time samples"));
    }
    if (tau.dt - time.dt()).abs() > 1e-14 * time.dt() || tau.active.len() != time.n_steps() {
        return Err(invalid("tau grid was built for a different time grid"));
    }
    Ok(LiftedField {
        decomp,
        time: time.clone(),
        tau: tau.clone(),
        series: (0..c.n_modes).map(|k| c.mode_series(k)).collect(),
    })
}

impl<'a> LiftedField<'a> {
    pub fn decomposition(&self) -> &'a SpectralDecomposition {
        self.decomp
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn tau(&self) -> &TauGrid {
        &self.tau
    }

    pub fn n_modes(&self) -> usize {
        self.series.len()
    }

    /// Modal coefficients of `u` itself.
    pub fn data(&self) -> ModalField {
        let mut c = ModalField::zeros(self.time.n_steps(), self.n_modes());
        for (k, s) in self.series.iter().enumerate() {
            c.set_mode_series(k, s);
        }
        c
    }

    /// `û(t_i − τ)` for every mode (the un-damped part of `U`).
    fn shifted(&self, i: usize, tau: f64, out: &mut [Complex64]) {
        let p = i as f64 - tau / self.time.dt();
        if p <= -1.0 {
            out.iter_mut().for_each(|z| *z = ZERO);
            return;
        }
        let (start, w) = window_stencil(p, self.time.n_steps());
        for (z, s) in out.iter_mut().zip(&self.series) {
            *z = s[start] * w[0] + s[start + 1] * w[1] + s[start + 2] * w[2] + s[start + 3] * w[3];
        }
    }

    /// `U_k(t_i, τ)` for every mode.
    pub fn modal(&self, i: usize, tau: f64) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.n_modes()];
        self.shifted(i, tau, &mut out);
        for (z, &l) in out.iter_mut().zip(self.decomp.eigenvalues()) {
            *z *= (-l * tau).exp();
        }
        out
    }

    /// Modal `(∂_t + ∂_τ)U(t_i, τ_j)` by the fourth-order central difference
    /// `[U(-2h) − 8U(-h) + 8U(h) − U(2h)] / 12h` along the characteristic
    /// through `(t_i, τ_j)` (on which `t − τ` is constant).
    pub fn diagonal_derivative(&self, i: usize, j: usize) -> Vec<Complex64> {
        let tau = self.tau.nodes[j];
        let h = self.tau.diagonal_step(j);
        let mut out = vec![ZERO; self.n_modes()];
        self.shifted(i, tau, &mut out);
        for (z, &l) in out.iter_mut().zip(self.decomp.eigenvalues()) {
            let e = |a: f64| (-l * (tau + a * h)).exp();
            *z *= (e(-2.0) - 8.0 * e(-1.0) + 8.0 * e(1.0) - e(2.0)) / (12.0 * h);
        }
        out
    }

    /// Nodal `U(t_i, τ_j, ·)`.
    pub fn slice(&self, i: usize, j: usize) -> Vec<Complex64> {
        self.decomp.inverse_complex(&self.modal(i, self.tau.nodes[j]))
    }

    /// Dense `[t][τ][node]` array; intended for small grids.
    pub fn to_array(&self) -> Vec<Vec<Vec<Complex64>>> {
        (0..self.time.n_steps())
            .map(|i| (0..self.tau.len()).map(|j| self.slice(i, j)).collect())
            .collect()
    }

    fn check_compatible(&self, other: &LiftedField<'_>) -> Result<()> {
        if self.time != other.time || self.tau.nodes != other.tau.nodes || self.decomp.mass().len() != other.decomp.mass().len() {
            return Err(Error::Shape("lifted fields live on different grids".into()));
        }
        Ok(())
    }
}

/// Residual of the lifted equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftedResidual {
    /// `‖(∂_t + ∂_τ)U + L U‖ / ‖L U‖`, zero when `L U = 0`.
    pub relative: f64,
    pub absolute: f64,
    pub reference: f64,
}

/// Evaluates `(∂_t + ∂_τ)U + L U` by fourth-order central differences along
/// the characteristic `(t, τ) ↦ (t + h, τ + h)` and integrates its square
/// over `t`, `τ` and `x`.
pub fn verify_lifted_pde(u: &LiftedField<'_>) -> LiftedResidual {
    verify_lifted_pde_sampled(u, 1, 1)
}

/// [`verify_lifted_pde`] on every `t_stride`-th time and `tau_stride`-th `τ` node.
pub fn verify_lifted_pde_sampled(u: &LiftedField<'_>, t_stride: usize, tau_stride: usize) -> LiftedResidual {
    let dt = u.time.dt();
    let lambdas = u.decomp.eigenvalues();
    let (mut num, mut den) = (0.0, 0.0);
    for i in (0..u.time.n_steps()).step_by(t_stride.max(1)) {
        for j in (1..u.tau.active(i)).step_by(tau_stride.max(1)) {
            let w = dt * u.tau.weights[j];
            let d = u.diagonal_derivative(i, j);
            let c = u.modal(i, u.tau.nodes[j]);
            for ((d, z), &l) in d.iter().zip(&c).zip(lambdas) {
                num += w * (d + z * l).norm_sqr();
                den += w * (z * l).norm_sqr();
            }
        }
    }
    let (absolute, reference) = (num.sqrt(), den.sqrt());
    LiftedResidual {
        relative: if reference > 0.0 { absolute / reference } else { 0.0 },
        absolute,
        reference,
    }
}

/// `V(t) = ∫_0^{t+T} U(t, τ) dτ` in modal form.
pub fn integrate_v_modal(u: &LiftedField<'_>) -> Result<ModalField> {
    let v = integrate_with(u, &u.tau);
    let mut check_cfg = *u.tau.config();
    check_cfg.gauss_points += 2;
    let check = integrate_with(u, &TauGrid::new(&u.time, check_cfg)?);
    let norm = |c: &ModalField| c.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let diff: f64 = v.data.iter().zip(&check.data).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let scale = norm(&check);
    if scale > 0.0 && diff > u.tau.config().convergence_tol * scale {
        return Err(Error::QuadratureNotConverged {
            coarse: norm(&v),
            fine: scale,
        });
    }
    Ok(v)
}

fn integrate_with(u: &LiftedField<'_>, tau: &TauGrid) -> ModalField {
    let n_t = u.time.n_steps();
    let lambdas = u.decomp.eigenvalues();
    let mut v = ModalField::zeros(n_t, u.n_modes());
    let mut shifted = vec![ZERO; u.n_modes()];
    for i in 0..n_t {
        for j in 1..tau.active(i) {
            let t = tau.nodes[j];
            u.shifted(i, t, &mut shifted);
            for (k, (z, &l)) in shifted.iter().zip(lambdas).enumerate() {
                let add = *z * (tau.weights[j] * (-l * t).exp());
                v.data[i * v.n_modes + k] += add;
            }
        }
    }
    v
}

/// Nodal `V`; `V(t) = 0` for `t ≤ -T` by the layout.
pub fn integrate_v(u: &LiftedField<'_>) -> Result<SpaceTimeField> {
    Ok(u.decomp.from_modal(&integrate_v_modal(u)?))
}

/// Residual of a local heat equation `∂_t V + L V = g` in modal form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatResidual {
    /// `‖∂_t V + L V − g‖ / ‖g‖`, or the absolute residual when `g = 0`.
    pub relative: f64,
    pub absolute: f64,
}

/// `H V` in modal form: seven-point time derivative plus `λ_k V_k`.
pub fn apply_heat_modal(lambdas: &[f64], time: &TimeGrid, v: &ModalField) -> ModalField {
    let mut out = ModalField::zeros(v.n_t, v.n_modes);
    for k in 0..v.n_modes {
        let s = v.mode_series(k);
        let d = window_derivative(&s, time.dt());
        let hv: Vec<Complex64> = d.iter().zip(&s).map(|(a, b)| a + b * lambdas[k]).collect();
        out.set_mode_series(k, &hv);
    }
    out
}

/// `‖H V − u‖ / ‖u‖` with `V(-T) = 0`.
pub fn verify_hv(decomp: &SpectralDecomposition, time: &TimeGrid, v: &ModalField, u: &ModalField) -> HeatResidual {
    let hv = apply_heat_modal(decomp.eigenvalues(), time, v);
    let absolute = modal_norm(&hv.data.iter().zip(&u.data).map(|(a, b)| a - b).collect::<Vec<_>>(), time.dt());
    let scale = modal_norm(&u.data, time.dt());
    HeatResidual {
        relative: if scale > 0.0 { absolute / scale } else { absolute },
        absolute,
    }
}

fn modal_norm(data: &[Complex64], dt: f64) -> f64 {
    (dt * data.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
}

/// Output of [`compute_w`].
#[derive(Debug, Clone)]
pub struct WReport {
    pub w: SpaceTimeField,
    pub w_modal: ModalField,
    /// `‖H W − H^s u‖ / ‖H^s u‖`.
    pub consistency: f64,
    /// `‖H W‖_{Ω × (-T, T)} / ‖H W‖`.
    pub interior_ratio: f64,
    /// `max |W(-T, ·)|` from the semigroup formula.
    pub initial: f64,
}

/// `W = H^s V` and the checks on `H W`.
pub fn compute_w<O: HsOperator>(op: &O, time: &TimeGrid, masks: &RegionMasks, v: &ModalField, u: &ModalField) -> WReport {
    let decomp = op.decomposition();
    let w_modal = op.apply_modal(v);
    let hw = apply_heat_modal(decomp.eigenvalues(), time, &w_modal);
    let hsu = op.apply_modal(u);
    let gap: Vec<Complex64> = hw.data.iter().zip(&hsu.data).map(|(a, b)| a - b).collect();
    let scale = modal_norm(&hsu.data, time.dt());
    let consistency = if scale > 0.0 { modal_norm(&gap, time.dt()) / scale } else { modal_norm(&gap, time.dt()) };
    let hw_nodal = decomp.from_modal(&hw);
    let n_h = time.n_horizon();
    let full = hw_nodal.norm(time.dt(), decomp.mass());
    let inner = hw_nodal.norm_where(time.dt(), decomp.mass(), |i| i < n_h, |x| masks.omega[x]);
    let interior_ratio = if full > 0.0 { inner / full } else { 0.0 };
    // W(-T) = -s/Γ(1-s) ∫ (P_τ V(-T-τ) - V(-T)) τ^{-1-s} dτ: both terms read
    // samples at or before -T.
    let initial = (0..v.n_modes)
        .map(|k| {
            let s = v.mode_series(k);
            (eval_window(&s, -1.0) - eval_window(&s, -2.0)).norm()
        })
        .fold(0.0, f64::max);
    WReport {
        w: decomp.from_modal(&w_modal),
        w_modal,
        consistency,
        interior_ratio,
        initial,
    }
}

/// Settings for [`reduce_to_local`].
#[derive(Debug, Clone, Default)]
pub struct ReduceConfig {
    pub nonlocal: NonlocalConfig,
    pub tau: TauConfig,
}

/// Reduced local problem produced from exterior data.
#[derive(Debug, Clone)]
pub struct ReducedData {
    pub cauchy: CauchyDataLocal,
    pub solution: NonlocalSolution,
    pub v: ModalField,
    pub w: WReport,
    /// `‖H V − u‖ / ‖u‖`.
    pub hv_residual: f64,
}

/// Exterior data `f` ↦ lateral Cauchy data of `W`, through the solve, the
/// lift, `V` and `W = H^s V`.
pub fn reduce_to_local(
    op: &CausalHs<'_>,
    grid: &BoxGrid,
    sigma: &ConductivityField,
    time: &TimeGrid,
    masks: &RegionMasks,
    f: &ExteriorData,
    cfg: &ReduceConfig,
) -> Result<ReducedData> {
    let pre = CausalPreconditioner::new(op, &masks.omega_nodes())?;
    let solution = solve_nonlocal(op, time, masks, f, Preconditioner::Causal(&pre), &cfg.nonlocal)?;
    reduce_solution(op, grid, sigma, time, masks, solution, &cfg.tau)
}

/// [`reduce_to_local`] from an already computed exterior solution.
pub fn reduce_solution(
    op: &CausalHs<'_>,
    grid: &BoxGrid,
    sigma: &ConductivityField,
    time: &TimeGrid,
    masks: &RegionMasks,
    solution: NonlocalSolution,
    tau: &TauConfig,
) -> Result<ReducedData> {
    let decomp = op.decomposition();
    let tau = TauGrid::new(time, *tau)?;
    let lifted = lift(decomp, time, &solution.u, &tau)?;
    let v = integrate_v_modal(&lifted)?;
    let u_modal = lifted.data();
    let hv_residual = verify_hv(decomp, time, &v, &u_modal).relative;
    let w = compute_w(op, time, masks, &v, &u_modal);
    let cauchy = extract_local_cauchy(grid, sigma, masks, &w.w, time.n_steps())?;
    Ok(ReducedData {
        cauchy,
        solution,
        v,
        w,
        hv_residual,
    })
}

/// Energy balance of the lifted field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    /// `max_t ∫∫|U|² dx dτ + ∫∫∫ σ∇U·∇U dx dτ dt`.
    pub lhs: f64,
    /// `‖u‖²` in the `ℍ^s` norm of [`crate::fractional::fractional_norm`].
    pub hs_norm_sq: f64,
    /// `lhs / hs_norm_sq` (zero for `u = 0`).
    pub ratio: f64,
    /// Relative defect of `∫∫|U(t̃)|² + 2∫∫∫σ∇U·∇U = ∫∫|u|²` at the last sample.
    pub balance_defect: f64,
}

/// Energy of the lifted field against the data norm.
pub fn energy_check(u: &LiftedField<'_>, order: FractionalOrder) -> Result<EnergyReport> {
    let dt = u.time.dt();
    let lambdas = u.decomp.eigenvalues();
    let n_t = u.time.n_steps();
    let mut slice_mass = vec![0.0; n_t];
    let mut slice_energy = vec![0.0; n_t];
    for i in 0..n_t {
        for j in 1..u.tau.active(i) {
            let c = u.modal(i, u.tau.nodes[j]);
            let w = u.tau.weights[j];
            for (z, &l) in c.iter().zip(lambdas) {
                slice_mass[i] += w * z.norm_sqr();
                slice_energy[i] += w * l * z.norm_sqr();
            }
        }
    }
    let data_sq: Vec<f64> = (0..n_t).map(|i| u.series.iter().map(|s| s[i].norm_sqr()).sum()).collect();
    let max_mass = slice_mass.iter().cloned().fold(0.0, f64::max);
    let lhs = max_mass + dt * slice_energy.iter().sum::<f64>();
    // Trapezoid in time from the zero sample at -T.
    let trap = |v: &[f64]| dt * (v.iter().sum::<f64>() - 0.5 * v[n_t - 1]);
    let data_int = trap(&data_sq);
    let balance = slice_mass[n_t - 1] + 2.0 * trap(&slice_energy) - data_int;
    let hs = crate::fractional::fractional_norm(u.decomp, &u.time, &u.decomp.from_modal(&u.data()), order.s())?;
    let hs_norm_sq = hs * hs;
    Ok(EnergyReport {
        lhs,
        hs_norm_sq,
        ratio: if hs_norm_sq > 0.0 { lhs / hs_norm_sq } else { 0.0 },
        balance_defect: if data_int > 0.0 { balance.abs() / data_int } else { balance.abs() },
    })
}

/// Lifted field obtained by marching `(∂_t + ∂_τ)U + L U = 0` along the
/// characteristics `τ = m Δt` with an L-stable two-stage SDIRK scheme on the
/// nodal operator, independent of the eigendecomposition.
#[derive(Debug, Clone)]
pub struct MarchedField {
    /// `values[i][m]` = `U(t_i, m Δt, ·)` for `m = 0..=i`.
    pub values: Vec<Vec<Vec<Complex64>>>,
}

pub fn march_lifted(op: &EllipticOperator, time: &TimeGrid, u: &SpaceTimeField, substeps: usize) -> Result<MarchedField> {
    let n = op.n();
    if u.n_nodes() != n || u.n_t() != time.n_steps() {
        return Err(Error::Shape("marcher data does not match operator".into()));
    }
    let substeps = substeps.max(1);
    let h = time.dt() / substeps as f64;
    let gamma = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
    let mut a = Mat::<f64>::zeros(n, n);
    for r in 0..n {
        a[(r, r)] += op.mass()[r];
        for (c, v) in op.row(r) {
            a[(r, c)] += gamma * h * v;
        }
    }
    let llt = a.llt(Side::Lower).map_err(|e| Error::Assembly(format!("marcher factorization: {e:?}")))?;
    let solve = |rhs: &[f64]| -> Vec<f64> {
        use faer::linalg::solvers::Solve;
        let b = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
        let x = llt.solve(&b);
        (0..n).map(|i| x[(i, 0)]).collect()
    };
    let step = |y: &[f64]| -> Vec<f64> {
        let ky: Vec<f64> = op.apply_k(y).iter().map(|v| -v).collect();
        let k1 = solve(&ky);
        let mid: Vec<f64> = y.iter().zip(&k1).map(|(a, b)| a + (1.0 - gamma) * h * b).collect();
        let kmid: Vec<f64> = op.apply_k(&mid).iter().map(|v| -v).collect();
        let k2 = solve(&kmid);
        y.iter()
            .zip(k1.iter().zip(&k2))
            .map(|(a, (b, c))| a + h * ((1.0 - gamma) * b + gamma * c))
            .collect()
    };
    let n_t = time.n_steps();
    let mut values: Vec<Vec<Vec<Complex64>>> = (0..n_t).map(|i| Vec::with_capacity(i + 1)).collect();
    for start in 0..n_t {
        let mut re: Vec<f64> = u.slice(start).iter().map(|z| z.re).collect();
        let mut im: Vec<f64> = u.slice(start).iter().map(|z| z.im).collect();
        values[start].push(u.slice(start).to_vec());
        for i in start + 1..n_t {
            for _ in 0..substeps {
                re = step(&re);
                im = step(&im);
            }
            values[i].push(re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect());
        }
    }
    // values[i] was filled by starts 0..=i in order, i.e. m = i - start
    // descending; store by m ascending.
    for v in values.iter_mut() {
        v.reverse();
    }
    Ok(MarchedField { values })
}

/// `‖U_march − U_lift‖ / ‖U_lift‖` over the characteristic samples.
pub fn marcher_gap(u: &LiftedField<'_>, marched: &MarchedField) -> f64 {
    let dt = u.time.dt();
    let mass = u.decomp.mass();
    let (mut num, mut den) = (0.0, 0.0);
    for (i, row) in marched.values.iter().enumerate() {
        for (m, vals) in row.iter().enumerate() {
            let exact = u.decomp.inverse_complex(&u.modal(i, m as f64 * dt));
            for ((a, b), w) in vals.iter().zip(&exact).zip(mass) {
                num += w * (a - b).norm_sqr();
                den += w * b.norm_sqr();
            }
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// One entry of a moment table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEntry {
    pub n: usize,
    pub time_index: usize,
    pub node: usize,
    /// `∫ (U₁ − U₂) τ^{-(N+s)} dτ`.
    pub value: Complex64,
    /// `∫ |U₁| τ^{-(N+s)} dτ`, the scale of the value.
    pub reference: f64,
}

/// Moments of the lifted-field difference at probe points.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub entries: Vec<MomentEntry>,
}

impl MomentTable {
    /// `max |M_N| / max ∫|U₁|τ^{-(N+s)}` for one `N`.
    pub fn relative(&self, n: usize) -> f64 {
        let rows = self.entries.iter().filter(|e| e.n == n);
        let (num, den) = rows.fold((0.0f64, 0.0f64), |(a, b), e| (a.max(e.value.norm()), b.max(e.reference)));
        if den > 0.0 {
            num / den
        } else {
            num
        }
    }
}

/// Rejects probes closer than three grid cells to the support of `u`.
fn check_probe_distance(grid: &BoxGrid, probe: &[usize], support: &[bool]) -> Result<()> {
    let kappa = 3.0 * grid.spacing();
    for &p in probe {
        let x = grid.coord(p);
        for (z, &inside) in support.iter().enumerate() {
            if inside {
                let y = grid.coord(z);
                let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
                if d < kappa {
                    return Err(Error::Support(format!(
                        "probe node {p} lies {d:.3e} from the data support (need {kappa:.3e})"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// `(U₁ − U₂, U₁)` at the probe nodes for all active `τ` nodes at `t_i`.
fn probe_values(u1: &LiftedField<'_>, u2: &LiftedField<'_>, i: usize, probe: &[usize]) -> Vec<Vec<(Complex64, Complex64)>> {
    let b1 = u1.decomp.subset(probe);
    let b2 = u2.decomp.subset(probe);
    let (m1, m2) = (b1.modes_matrix(), b2.modes_matrix());
    (0..u1.tau.active(i))
        .map(|j| {
            let tau = u1.tau.nodes[j];
            let c1 = u1.modal(i, tau);
            let c2 = u2.modal(i, tau);
            (0..probe.len())
                .map(|p| {
                    let a: Complex64 = c1.iter().enumerate().map(|(k, z)| z * m1[(p, k)]).sum();
                    let b: Complex64 = c2.iter().enumerate().map(|(k, z)| z * m2[(p, k)]).sum();
                    (a - b, a)
                })
                .collect()
        })
        .collect()
}

/// `M_N(t_i, x) = ∫_0^∞ (U₁ − U₂)(t_i, τ, x) τ^{-(N+s)} dτ` for `N = 1..=n_max`.
///
/// `support` marks the nodes where either `u` may be nonzero; probes must
/// keep three cells away from it so the `τ → 0` end is controlled by the
/// kernel decay.
pub fn moment_diagnostics(
    u1: &LiftedField<'_>,
    u2: &LiftedField<'_>,
    order: FractionalOrder,
    n_max: usize,
    grid: &BoxGrid,
    probe: &[usize],
    support: &[bool],
    times: &[usize],
) -> Result<MomentTable> {
    u1.check_compatible(u2)?;
    check_probe_distance(grid, probe, support)?;
    let s = order.s();
    let mut entries = Vec::new();
    for &i in times {
        let vals = probe_values(u1, u2, i, probe);
        for n in 1..=n_max {
            for (p, &node) in probe.iter().enumerate() {
                let mut value = ZERO;
                let mut reference = 0.0;
                for (j, row) in vals.iter().enumerate().skip(1) {
                    let w = u1.tau.weights[j] * u1.tau.nodes[j].powf(-(n as f64 + s));
                    value += row[p].0 * w;
                    reference += row[p].1.norm() * w;
                }
                entries.push(MomentEntry {
                    n,
                    time_index: i,
                    node,
                    value,
                    reference,
                });
            }
        }
    }
    Ok(MomentTable { entries })
}

/// One entry of a Fourier table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierEntry {
    pub xi: f64,
    pub time_index: usize,
    pub node: usize,
    pub value: Complex64,
}

/// `G(ξ)` samples and the scale `∫|U₁| τ^{-1-s} dτ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierTable {
    pub entries: Vec<FourierEntry>,
    pub reference: f64,
}

impl FourierTable {
    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|e| e.value.norm()).fold(0.0, f64::max)
    }
}

/// `G(ξ) = ∫_0^∞ ΔU(t, α^{-1}, x) α^{s-1} e^{iξα} dα`, evaluated in the
/// original variable as `∫ ΔU(t, τ, x) τ^{-1-s} e^{iξ/τ} dτ`.
#[allow(clippy::too_many_arguments)]
pub fn fourier_diagnostic(
    u1: &LiftedField<'_>,
    u2: &LiftedField<'_>,
    order: FractionalOrder,
    grid: &BoxGrid,
    probe: &[usize],
    support: &[bool],
    times: &[usize],
    xis: &[f64],
) -> Result<FourierTable> {
    u1.check_compatible(u2)?;
    check_probe_distance(grid, probe, support)?;
    let s = order.s();
    let mut entries = Vec::new();
    let mut reference: f64 = 0.0;
    for &i in times {
        let vals = probe_values(u1, u2, i, probe);
        for (p, &node) in probe.iter().enumerate() {
            let r: f64 = vals
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, row)| row[p].1.norm() * u1.tau.weights[j] * u1.tau.nodes[j].powf(-1.0 - s))
                .sum();
            reference = reference.max(r);
            for &xi in xis {
                let mut value = ZERO;
                for (j, row) in vals.iter().enumerate().skip(1) {
                    let tau = u1.tau.nodes[j];
                    let phase = Complex64::from_polar(1.0, xi / tau);
                    value += row[p].0 * phase * (u1.tau.weights[j] * tau.powf(-1.0 - s));
                }
                entries.push(FourierEntry {
                    xi,
                    time_index: i,
                    node,
                    value,
                });
            }
        }
    }
    Ok(FourierTable { entries, reference })
}
