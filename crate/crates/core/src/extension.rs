//! Degenerate extension in an extra variable `y > 0`.
//!
//! In the eigenbasis of `L` and the Fourier basis in time, the extension
//! `y^{1-2s}∂_t U − ∇_{x,y}·(y^{1-2s} σ̃ ∇_{x,y} U) = 0` with `U(·,·,0) = u`
//! splits into `z y^{1-2s} φ − (y^{1-2s} φ')' = 0`, `φ(0) = 1`, for every
//! `z = λ + iρ`. The weighted flux `y^{1-2s} φ'` at `y = 0⁺`, scaled by
//! `−2^{2s-1} Γ(s)/Γ(1-s)`, returns `z^s`, which gives a third route to
//! `H^s` besides the spectral multiplier and the semigroup quadrature.
//!
//! The two-point problem is discretized conservatively: the flux across a
//! cell is `(φ_{j+1} − φ_j) / ∫ y^{2s-1}`, which is exact when the weighted
//! flux is constant on the cell, and the reaction uses the exact weighted
//! dual-cell measure.

use crate::error::{invalid, Error, Result};
use crate::field::SpaceTimeField;
use crate::fractional::{fractional_norm, hs_apply_spectral, symbol, FractionalOrder, Power};
use crate::grid::{SpectralDecomposition, TimeGrid};
use num_complex::Complex64;
use rustfft::FftPlanner;
use statrs::function::gamma::gamma;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Graded mesh `y_j = y_max (j/M)^γ` with `γ = max(2, 1/s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtensionMesh {
    pub nodes: Vec<f64>,
    /// `y^{1-2s}` at the nodes (`+∞` or 0 at `y = 0` as the exponent says).
    pub weight: Vec<f64>,
    pub s: f64,
    pub gamma: f64,
}

impl ExtensionMesh {
    pub fn new(y_max: f64, cells: usize, order: FractionalOrder) -> Result<Self> {
        if !(y_max.is_finite() && y_max > 0.0) || cells < 4 {
            return Err(Error::Mesh(format!("need y_max > 0 and at least 4 cells, got {y_max}, {cells}")));
        }
        let s = order.s();
        let gamma = 2.0f64.max(1.0 / s);
        let nodes: Vec<f64> = (0..=cells).map(|j| y_max * (j as f64 / cells as f64).powf(gamma)).collect();
        let weight = nodes.iter().map(|y| y.powf(1.0 - 2.0 * s)).collect();
        Ok(Self { nodes, weight, s, gamma })
    }

    /// Mesh whose depth covers `depth` decay lengths `1 / Re √z`.
    pub fn for_symbol(z: Complex64, cells: usize, depth: f64, order: FractionalOrder) -> Result<Self> {
        let y_max = if z.norm() == 0.0 { 1.0 } else { depth / z.sqrt().re };
        Self::new(y_max, cells, order)
    }

    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn y_max(&self) -> f64 {
        *self.nodes.last().expect("nonempty mesh")
    }

    /// `∫_a^b y^{2s-1} dy`.
    fn inv_weight_integral(&self, a: f64, b: f64) -> f64 {
        let p = 2.0 * self.s;
        (b.powf(p) - a.powf(p)) / p
    }

    /// `∫_a^b y^{1-2s} dy`.
    fn weight_integral(&self, a: f64, b: f64) -> f64 {
        let p = 2.0 - 2.0 * self.s;
        (b.powf(p) - a.powf(p)) / p
    }

    /// Cell resistances `∫_{y_j}^{y_{j+1}} y^{2s-1}`.
    fn resistances(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| self.inv_weight_integral(w[0], w[1])).collect()
    }

    /// Weighted dual-cell measures; the first covers `[0, y_{1/2}]`.
    fn dual_measures(&self) -> Vec<f64> {
        let m = self.cells();
        (0..=m)
            .map(|j| {
                let a = if j == 0 { 0.0 } else { 0.5 * (self.nodes[j - 1] + self.nodes[j]) };
                let b = if j == m { self.nodes[m] } else { 0.5 * (self.nodes[j] + self.nodes[j + 1]) };
                self.weight_integral(a, b)
            })
            .collect()
    }
}

/// Discrete profile `φ` of one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtensionProfile {
    pub mesh: ExtensionMesh,
    pub z: Complex64,
    pub values: Vec<Complex64>,
    /// Weighted flux `y^{1-2s} φ'` on each cell.
    pub fluxes: Vec<Complex64>,
    /// Weighted flux at `y = 0⁺` from the balance of the first half cell.
    pub flux0: Complex64,
}

fn check_symbol(lambda: f64, rho: f64) -> Result<Complex64> {
    if !(lambda.is_finite() && rho.is_finite() && lambda >= 0.0) {
        return Err(invalid(format!("mode symbol needs λ >= 0, got λ = {lambda}, ρ = {rho}")));
    }
    Ok(Complex64::new(lambda, rho))
}

/// Solves `z y^{1-2s} φ − (y^{1-2s} φ')' = 0`, `φ(0) = 1`, `φ(y_max) = 0`.
/// For `z = 0` the decaying-free solution `φ ≡ 1` is returned. Fails when
/// `|φ|` at three quarters of the depth exceeds `1e-6`.
pub fn solve_extension_mode(lambda: f64, rho: f64, mesh: &ExtensionMesh) -> Result<ExtensionProfile> {
    let z = check_symbol(lambda, rho)?;
    let m = mesh.cells();
    if z.norm() == 0.0 {
        return Ok(ExtensionProfile {
            mesh: mesh.clone(),
            z,
            values: vec![Complex64::new(1.0, 0.0); m + 1],
            fluxes: vec![ZERO; m],
            flux0: ZERO,
        });
    }
    let c = mesh.resistances();
    let mu = mesh.dual_measures();
    // Thomas sweep on the interior unknowns 1..m-1.
    let n = m - 1;
    let mut diag = vec![ZERO; n];
    let mut upper = vec![ZERO; n];
    let mut rhs = vec![ZERO; n];
    for r in 0..n {
        let j = r + 1;
        diag[r] = -(1.0 / c[j - 1] + 1.0 / c[j] + z * mu[j]);
        upper[r] = Complex64::new(1.0 / c[j], 0.0);
    }
    rhs[0] = Complex64::new(-1.0 / c[0], 0.0);
    for r in 1..n {
        let lower = 1.0 / c[r];
        let w = lower / diag[r - 1];
        diag[r] -= w * upper[r - 1];
        let prev = rhs[r - 1];
        rhs[r] -= w * prev;
    }
    let mut values = vec![ZERO; m + 1];
    values[0] = Complex64::new(1.0, 0.0);
    values[n] = rhs[n - 1] / diag[n - 1];
    for r in (0..n - 1).rev() {
        values[r + 1] = (rhs[r] - upper[r] * values[r + 2]) / diag[r];
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("extension profile".into()));
    }
    let probe = mesh.nodes.iter().position(|&y| y >= 0.75 * mesh.y_max()).unwrap_or(m);
    if values[probe].norm() > 1e-6 {
        return Err(Error::Mesh(format!(
            "|φ| = {:.3e} at y = {:.3e}; increase y_max beyond {:.3e}",
            values[probe].norm(),
            mesh.nodes[probe],
            mesh.y_max()
        )));
    }
    let fluxes: Vec<Complex64> = (0..m).map(|j| (values[j + 1] - values[j]) / c[j]).collect();
    let flux0 = fluxes[0] - z * mu[0] * values[0];
    Ok(ExtensionProfile {
        mesh: mesh.clone(),
        z,
        values,
        fluxes,
        flux0,
    })
}

impl ExtensionProfile {
    /// Largest interior row residual of the discrete equation, relative to
    /// the largest term in that row.
    pub fn ode_residual(&self) -> f64 {
        let mu = self.mesh.dual_measures();
        let mut worst: f64 = 0.0;
        for j in 1..self.mesh.cells() {
            let react = self.z * mu[j] * self.values[j];
            let r = self.fluxes[j] - self.fluxes[j - 1] - react;
            let scale = self.fluxes[j].norm().max(self.fluxes[j - 1].norm()).max(react.norm());
            if scale > 0.0 {
                worst = worst.max(r.norm() / scale);
            }
        }
        worst
    }

    /// `∫_0^{depth} y^{1-2s}((1 + λ)|φ|² + |φ'|²) dy`; `λ = Re z`.
    pub fn weighted_energy(&self, depth: f64) -> f64 {
        let lambda = self.z.re;
        let y = &self.mesh.nodes;
        let mut acc = 0.0;
        for j in 0..self.mesh.cells() {
            if y[j] >= depth {
                break;
            }
            let b = y[j + 1].min(depth);
            // φ' = F y^{2s-1} on the cell; φ linear in y^{2s} between nodes.
            let frac = self.mesh.inv_weight_integral(y[j], b) / self.mesh.inv_weight_integral(y[j], y[j + 1]);
            let f = self.fluxes[j];
            acc += f.norm_sqr() * self.mesh.inv_weight_integral(y[j], b);
            let va = self.values[j].norm_sqr();
            let vb = (self.values[j] + (self.values[j + 1] - self.values[j]) * frac).norm_sqr();
            acc += (1.0 + lambda) * 0.5 * (va + vb) * self.mesh.weight_integral(y[j], b);
        }
        acc
    }
}

/// `2^{2s-1} Γ(s) / Γ(1-s)`, the factor turning `−lim y^{1-2s} φ'` into `z^s`.
pub fn trace_constant(order: FractionalOrder) -> f64 {
    let s = order.s();
    2f64.powf(2.0 * s - 1.0) * gamma(s) / gamma(1.0 - s)
}

/// `−d_s lim_{y→0⁺} y^{1-2s} φ'(y)` on the profile's mesh.
pub fn neumann_trace(profile: &ExtensionProfile, order: FractionalOrder) -> Complex64 {
    -trace_constant(order) * profile.flux0
}

/// Mesh settings of the extension route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtensionConfig {
    /// Cells of the coarsest mesh.
    pub cells: usize,
    /// Mesh depth in decay lengths `1 / Re √z`.
    pub depth: f64,
    /// Upper limit `M` of the energy integral in `y`.
    pub energy_depth: f64,
}

impl Default for ExtensionConfig {
    fn default() -> Self {
        Self {
            cells: 400,
            depth: 30.0,
            energy_depth: 1.0,
        }
    }
}

/// Richardson-extrapolated trace from meshes with `M`, `2M` and `4M` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEstimate {
    pub value: Complex64,
    /// Trace on the finest mesh before extrapolation.
    pub finest: Complex64,
    /// Observed convergence order.
    pub observed_order: f64,
}

pub fn extrapolated_trace(lambda: f64, rho: f64, order: FractionalOrder, cfg: &ExtensionConfig) -> Result<TraceEstimate> {
    let z = check_symbol(lambda, rho)?;
    if z.norm() == 0.0 {
        return Ok(TraceEstimate {
            value: ZERO,
            finest: ZERO,
            observed_order: f64::INFINITY,
        });
    }
    let mut t = [ZERO; 3];
    for (l, v) in t.iter_mut().enumerate() {
        let mesh = ExtensionMesh::for_symbol(z, cfg.cells << l, cfg.depth, order)?;
        *v = neumann_trace(&solve_extension_mode(lambda, rho, &mesh)?, order);
    }
    let (d1, d2) = ((t[1] - t[0]).norm(), (t[2] - t[1]).norm());
    let scale = t[2].norm();
    if d2 <= 1e-14 * scale {
        return Ok(TraceEstimate {
            value: t[2],
            finest: t[2],
            observed_order: f64::INFINITY,
        });
    }
    let p = (d1 / d2).log2();
    if !(p >= 0.5) {
        return Err(Error::Mesh(format!(
            "trace extrapolation does not converge: differences {d1:.3e}, {d2:.3e}"
        )));
    }
    let value = t[2] + (t[2] - t[1]) / (2f64.powf(p) - 1.0);
    Ok(TraceEstimate {
        value,
        finest: t[2],
        observed_order: p,
    })
}

/// Comparison of the extension route with the spectral multiplier.
#[derive(Debug, Clone)]
pub struct ExtensionReport {
    pub hs: SpaceTimeField,
    /// `‖H^s_ext u − H^s_spec u‖ / ‖H^s_spec u‖`.
    pub relative_error: f64,
    /// Largest `|trace − z^s| / |z^s|` over the symbols used.
    pub max_trace_error: f64,
    /// Weighted `H¹` energy of the extension on `y ∈ (0, M)`.
    pub energy: f64,
    /// `√energy / ‖u‖_{ℍ^s}` (zero for `u = 0`).
    pub energy_ratio: f64,
}

/// `H^s u` through the mode-wise traces, against the spectral route on the
/// same padded window.
pub fn extension_consistency(
    decomp: &SpectralDecomposition,
    time: &TimeGrid,
    u: &SpaceTimeField,
    order: FractionalOrder,
    cfg: &ExtensionConfig,
) -> Result<ExtensionReport> {
    let spec = hs_apply_spectral(decomp, time, u, order, Power::Full, false, 0.0)?.field;
    let n = time.pad_len();
    let mut planner = FftPlanner::new();
    let (fft, ifft) = (planner.plan_fft_forward(n), planner.plan_fft_inverse(n));
    let c = decomp.to_modal(u);
    let mut out = crate::field::ModalField::zeros(c.n_t, c.n_modes);
    let mut worst: f64 = 0.0;
    let mut energy = 0.0;
    let mut buf = vec![ZERO; n];
    for k in 0..c.n_modes {
        let series = c.mode_series(k);
        if series.iter().all(|z| *z == ZERO) {
            continue;
        }
        buf.iter_mut().for_each(|z| *z = ZERO);
        for (i, v) in series.iter().enumerate() {
            buf[i + 1] = *v;
        }
        fft.process(&mut buf);
        let lambda = decomp.eigenvalues()[k];
        for (m, z) in buf.iter_mut().enumerate() {
            if *z == ZERO {
                continue;
            }
            let rho = time.frequency(m);
            let mut eval = |rho: f64| -> Result<(Complex64, f64)> {
                let t = extrapolated_trace(lambda, rho, order, cfg)?.value;
                let want = symbol(lambda, rho, order.s());
                if want.norm() > 0.0 {
                    worst = worst.max((t - want).norm() / want.norm());
                }
                let zs = Complex64::new(lambda, rho);
                let mesh = ExtensionMesh::for_symbol(zs, cfg.cells, cfg.depth, order)?;
                let e = solve_extension_mode(lambda, rho, &mesh)?.weighted_energy(cfg.energy_depth);
                Ok((t, e))
            };
            let (t, e) = if 2 * m == n {
                // Real symmetric value at the Nyquist index, as in the spectral route.
                let (a, ea) = eval(rho)?;
                let (b, eb) = eval(-rho)?;
                (Complex64::new(0.5 * (a + b).re, 0.0), 0.5 * (ea + eb))
            } else {
                eval(rho)?
            };
            energy += e * z.norm_sqr() * time.dt() / n as f64;
            *z *= t / n as f64;
        }
        ifft.process(&mut buf);
        let r: Vec<Complex64> = (0..c.n_t).map(|i| buf[i + 1]).collect();
        out.set_mode_series(k, &r);
    }
    let hs = decomp.from_modal(&out);
    let w = decomp.mass();
    let den = spec.norm(time.dt(), w);
    let num = hs.sub(&spec).norm(time.dt(), w);
    let unorm = fractional_norm(decomp, time, u, order.s())?;
    Ok(ExtensionReport {
        hs,
        relative_error: if den > 0.0 { num / den } else { num },
        max_trace_error: worst,
        energy,
        energy_ratio: if unorm > 0.0 { energy.sqrt() / unorm } else { 0.0 },
    })
}
