//! Fractional powers `H^s` of the discrete heat operator.
//!
//! Two routes are provided. The spectral route multiplies each modal time
//! series by `(λ + iρ)^p` on a zero-padded periodic window, optionally after
//! an exponential damping `e^{-η t}` that is undone afterwards. The causal
//! route evaluates the semigroup integral
//! `H^s u = -(s / Γ(1-s)) ∫_0^∞ (P^H_τ u − u) τ^{-1-s} dτ`
//! with the four-point interpolant in time, which makes `H^s` a
//! lower-triangular Toeplitz matrix per mode.

use crate::error::{invalid, Error, Result};
use crate::field::{ModalField, SpaceTimeField};
use crate::grid::{SpectralDecomposition, TimeGrid};
use crate::interp;
use crate::quad::GaussRule;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use statrs::function::gamma::{gamma, gamma_lr, gamma_ur};
use std::f64::consts::PI;
use std::sync::Arc;

/// Order `s ∈ (0, 1)` with cached constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionalOrder {
    s: f64,
    gamma_one_minus_s: f64,
}

impl FractionalOrder {
    pub fn new(s: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(invalid(format!("order s = {s} outside (0, 1)")));
        }
        Ok(Self {
            s,
            gamma_one_minus_s: gamma(1.0 - s),
        })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn gamma_one_minus_s(&self) -> f64 {
        self.gamma_one_minus_s
    }

    /// Sectorial constant `cos(sπ/2)`.
    pub fn coercivity_constant(&self) -> f64 {
        (self.s * PI / 2.0).cos()
    }
}

/// Exponent applied by the spectral route.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Power {
    /// `H^s`.
    Full,
    /// `H^{s/2}`.
    Half,
}

/// Principal-branch `(λ + iρ)^p`, with `0^p = 0`.
pub fn symbol(lambda: f64, rho: f64, p: f64) -> Complex64 {
    let z = Complex64::new(lambda, rho);
    if z.norm() == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::from_polar(z.norm().powf(p), p * rho.atan2(lambda))
}

/// Aliasing and resolution indicators from the spectral route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralDiagnostics {
    /// Fraction of input energy at `|ρ| > π / (2 dt)`.
    pub high_frequency_fraction: f64,
    /// Set when the fraction exceeds 1%.
    pub warning: bool,
}

/// Output of [`hs_apply_spectral`].
#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub field: SpaceTimeField,
    pub diagnostics: SpectralDiagnostics,
}

/// Spectral multiplier operator on the padded window.
pub struct SpectralHs<'a> {
    decomp: &'a SpectralDecomposition,
    time: TimeGrid,
    p: f64,
    adjoint: bool,
    damping: f64,
    inverse_eps: Option<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl<'a> SpectralHs<'a> {
    pub fn new(
        decomp: &'a SpectralDecomposition,
        time: &TimeGrid,
        order: FractionalOrder,
        power: Power,
        adjoint: bool,
        damping: f64,
    ) -> Result<Self> {
        if !(damping.is_finite() && damping >= 0.0) {
            return Err(invalid("damping must be nonnegative"));
        }
        let p = match power {
            Power::Full => order.s(),
            Power::Half => 0.5 * order.s(),
        };
        let mut planner = FftPlanner::new();
        let n = time.pad_len();
        Ok(Self {
            decomp,
            time: time.clone(),
            p,
            adjoint,
            damping,
            inverse_eps: None,
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
        })
    }

    /// Switches to the multiplier `(symbol + ε)^{-1}`.
    pub fn regularized_inverse(mut self, epsilon: f64) -> Self {
        self.inverse_eps = Some(epsilon);
        self
    }

    fn multiplier(&self, lambda: f64, m: usize) -> Complex64 {
        let z = self.symbol_at(lambda, m);
        match self.inverse_eps {
            Some(eps) => 1.0 / (z + eps),
            None => z,
        }
    }

    fn symbol_at(&self, lambda: f64, m: usize) -> Complex64 {
        let n = self.time.pad_len();
        let rho = self.time.frequency(m);
        let lam = lambda + self.damping;
        if 2 * m == n {
            let a = symbol(lam, rho, self.p);
            let b = symbol(lam, -rho, self.p);
            return Complex64::new(0.5 * (a + b).re, 0.0);
        }
        let rho = if self.adjoint { -rho } else { rho };
        symbol(lam, rho, self.p)
    }

    /// Applies the multiplier to a full periodic series of length `N_pad`
    /// (no zero-padding embedding; damping only shifts λ).
    pub fn apply_periodic(&self, lambda: f64, buf: &mut [Complex64]) {
        let n = self.time.pad_len();
        assert_eq!(buf.len(), n);
        self.fft.process(buf);
        for (m, z) in buf.iter_mut().enumerate() {
            *z *= self.multiplier(lambda, m) / n as f64;
        }
        self.ifft.process(buf);
    }

    /// Applies the multiplier to one modal series; returns the fraction of
    /// input energy above half the Nyquist frequency.
    pub fn apply_series(&self, lambda: f64, series: &[Complex64]) -> (Vec<Complex64>, f64) {
        let n = self.time.pad_len();
        let dt = self.time.dt();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (i, v) in series.iter().enumerate() {
            buf[i + 1] = *v * (-self.damping * (i + 1) as f64 * dt).exp();
        }
        self.fft.process(&mut buf);
        let cut = PI / (2.0 * dt);
        let mut hi = 0.0;
        let mut tot = 0.0;
        for (m, z) in buf.iter_mut().enumerate() {
            let e = z.norm_sqr();
            tot += e;
            if self.time.frequency(m).abs() > cut {
                hi += e;
            }
            *z *= self.multiplier(lambda, m);
        }
        self.ifft.process(&mut buf);
        let out = (0..series.len())
            .map(|i| buf[i + 1] * ((self.damping * (i + 1) as f64 * dt).exp() / n as f64))
            .collect();
        (out, if tot > 0.0 { hi / tot } else { 0.0 })
    }

    fn apply_modal_diag(&self, c: &ModalField) -> (ModalField, f64) {
        let mut out = ModalField::zeros(c.n_t, c.n_modes);
        let mut hi = 0.0;
        let mut tot = 0.0;
        for k in 0..c.n_modes {
            let series = c.mode_series(k);
            let e: f64 = series.iter().map(|z| z.norm_sqr()).sum();
            let (r, frac) = self.apply_series(self.decomp.eigenvalues()[k], &series);
            hi += frac * e;
            tot += e;
            out.set_mode_series(k, &r);
        }
        (out, if tot > 0.0 { hi / tot } else { 0.0 })
    }
}

/// Parameters of the causal semigroup quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalakrishnanQuadrature {
    /// Near-zero split `δ` as a fraction of the time step.
    pub split: f64,
    /// Gauss points per panel in the logarithmic variable.
    pub gauss_points: usize,
    /// Panels per time-step interval.
    pub panels_per_step: usize,
    /// Order of the small-τ expansion on `[0, δ]` (1 or 2).
    pub near_zero_order: usize,
    /// Include the closed-form `u(t) (t + T)^{-s} / Γ(1-s)` contribution of
    /// the vanishing past.
    pub analytic_tail: bool,
    /// If set, the operator is also built with doubled panels and the two
    /// results must agree to this relative tolerance.
    pub convergence_tol: Option<f64>,
}

impl Default for BalakrishnanQuadrature {
    fn default() -> Self {
        Self {
            split: 0.25,
            gauss_points: 8,
            panels_per_step: 1,
            near_zero_order: 2,
            analytic_tail: true,
            convergence_tol: None,
        }
    }
}

impl BalakrishnanQuadrature {
    /// Same rule with doubled panel density.
    pub fn refined(&self) -> Self {
        Self {
            panels_per_step: 2 * self.panels_per_step,
            ..*self
        }
    }

    /// Log-substituted composite nodes and weights for `∫ f(τ) τ^{-1-s} dτ`
    /// on `[δ, τ_cap]` (weights include the `τ^{-1-s}` factor and Jacobian).
    pub fn nodes(&self, dt: f64, tau_cap: f64, s: f64) -> Vec<(f64, f64)> {
        let rule = GaussRule::new(self.gauss_points);
        let delta = self.split * dt;
        let mut out = Vec::new();
        let mut a = delta;
        let mut m = 1usize;
        while a < tau_cap {
            let b = (m as f64 * dt).min(tau_cap);
            if b > a {
                push_log_panels(&rule, a, b, self.panels_per_step, s, &mut out);
            }
            a = b;
            m += 1;
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(invalid("near-zero split must lie in (0, 1) time steps"));
        }
        if self.gauss_points == 0 || self.panels_per_step == 0 {
            return Err(invalid("quadrature needs at least one point and panel"));
        }
        if !(1..=2).contains(&self.near_zero_order) {
            return Err(invalid("near-zero expansion order must be 1 or 2"));
        }
        Ok(())
    }
}

fn push_log_panels(rule: &GaussRule, a: f64, b: f64, panels: usize, s: f64, out: &mut Vec<(f64, f64)>) {
    let (la, lb) = (a.ln(), b.ln());
    let w = (lb - la) / panels as f64;
    for p in 0..panels {
        let (va, vb) = (la + p as f64 * w, la + (p + 1) as f64 * w);
        for (v, wt) in rule.on(va, vb) {
            let tau = v.exp();
            out.push((tau, wt * (-s * v).exp()));
        }
    }
}

/// What the causal route assumes before the first stored sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Past {
    /// `u = 0` for `t <= -T`.
    Vanishing,
    /// `u` equals its first stored sample for all earlier times.
    Constant,
}

/// Per-mode Toeplitz kernel of the causal route.
#[derive(Debug, Clone)]
struct ModeKernel {
    lags: Vec<f64>,
    /// `∫_{τ_c}^∞ e^{-λτ} τ^{-1-s} dτ` times the prefactor.
    tail: f64,
}

/// Causal quadrature operator, lower-triangular Toeplitz per mode.
#[derive(Debug, Clone)]
pub struct CausalHs<'a> {
    decomp: &'a SpectralDecomposition,
    time: TimeGrid,
    order: FractionalOrder,
    quad: BalakrishnanQuadrature,
    kernels: Vec<ModeKernel>,
    past: Past,
}

fn incomplete_tail(lambda: f64, s: f64, x0: f64) -> f64 {
    // ∫_{x0}^∞ e^{-λτ} τ^{-1-s} dτ
    if lambda == 0.0 {
        return x0.powf(-s) / s;
    }
    let x = lambda * x0;
    if x > 700.0 {
        return 0.0;
    }
    let upper = gamma(1.0 - s) * gamma_ur(1.0 - s, x);
    lambda.powf(s) * (x.powf(-s) * (-x).exp() - upper) / s
}

/// `∫_0^δ e^{-λτ} τ^{a-1} dτ` for `a > 0`.
fn exp_moment(lambda: f64, a: f64, delta: f64) -> f64 {
    let x = lambda * delta;
    if x < 1e-12 {
        return delta.powf(a) / a * (1.0 - x * a / (a + 1.0));
    }
    lambda.powf(-a) * gamma(a) * gamma_lr(a, x)
}

/// `∫_0^δ (e^{-λτ} − 1) τ^{-1-s} dτ`.
fn exp_minus_one_moment(lambda: f64, s: f64, delta: f64) -> f64 {
    let x = lambda * delta;
    if x == 0.0 {
        return 0.0;
    }
    if x < 1e-6 {
        // −x δ^{-s} / (1 − s) + x² δ^{-s} / (2 (2 − s))
        return delta.powf(-s) * (-x / (1.0 - s) + 0.5 * x * x / (2.0 - s));
    }
    let lower = gamma(1.0 - s) * gamma_lr(1.0 - s, x);
    lambda.powf(s) * ((1.0 - (-x).exp()) * x.powf(-s) - lower) / s
}

fn mode_kernel(lambda: f64, order: FractionalOrder, dt: f64, n_lags: usize, quad: &BalakrishnanQuadrature) -> ModeKernel {
    let s = order.s();
    let pref = s / order.gamma_one_minus_s();
    let rule = GaussRule::new(quad.gauss_points);
    let delta = quad.split * dt;
    let n_int = n_lags + 2;
    let mut lags = vec![0.0; n_lags + 4];
    lags[0] += pref * delta.powf(-s) / s;
    let mut pts = Vec::new();
    for m in 0..n_int {
        let a = if m == 0 { delta } else { m as f64 * dt };
        let b = (m + 1) as f64 * dt;
        if lambda * a > 745.0 {
            break;
        }
        pts.clear();
        push_log_panels(&rule, a, b, quad.panels_per_step, s, &mut pts);
        // Stencil positions relative to the evaluation sample.
        let (start, first_lag) = if m == 0 { (-3.0, 3usize) } else { (-(m as f64) - 2.0, m + 2) };
        let nodes = [start, start + 1.0, start + 2.0, start + 3.0];
        for &(tau, w) in &pts {
            let basis = interp::lagrange4(nodes, -tau / dt);
            let f = pref * w * (-lambda * tau).exp();
            for q in 0..4 {
                lags[first_lag - q] -= f * basis[q];
            }
        }
    }
    // Near-zero segment: e^{-λτ} p(τ) − p(0) = (e^{-λτ} − 1) p(0)
    // + e^{-λτ} (τ p'(0) + τ² p''(0) / 2 + ...), moments in closed form.
    let d = interp::lagrange4_derivs([-3.0, -2.0, -1.0, 0.0], 0.0);
    let m_const = exp_minus_one_moment(lambda, s, delta);
    let m1 = exp_moment(lambda, 1.0 - s, delta);
    let m2 = exp_moment(lambda, 2.0 - s, delta);
    for q in 0..4 {
        let lag = 3 - q;
        let val = d[q][0];
        let d1 = -d[q][1] / dt;
        let d2 = d[q][2] / (dt * dt);
        let mut nz = val * m_const + d1 * m1;
        if quad.near_zero_order >= 2 {
            nz += 0.5 * d2 * m2;
        }
        lags[lag] -= pref * nz;
    }
    let tail = -pref * incomplete_tail(lambda, s, (n_int as f64) * dt);
    ModeKernel { lags, tail }
}

impl<'a> CausalHs<'a> {
    pub fn new(
        decomp: &'a SpectralDecomposition,
        time: &TimeGrid,
        order: FractionalOrder,
        quad: BalakrishnanQuadrature,
    ) -> Result<Self> {
        Self::with_past(decomp, time, order, quad, Past::Vanishing)
    }

    pub fn with_past(
        decomp: &'a SpectralDecomposition,
        time: &TimeGrid,
        order: FractionalOrder,
        quad: BalakrishnanQuadrature,
        past: Past,
    ) -> Result<Self> {
        quad.validate()?;
        let n_lags = time.n_steps();
        let dt = time.dt();
        let mut cache: Vec<(f64, ModeKernel)> = Vec::new();
        let mut kernels = Vec::with_capacity(decomp.n_modes());
        for &l in decomp.eigenvalues() {
            // Degenerate eigenvalues share a kernel.
            let hit = cache.iter().rev().take(4).find(|(v, _)| *v == l).map(|(_, k)| k.clone());
            let k = match hit {
                Some(k) => k,
                None => {
                    let k = mode_kernel(l, order, dt, n_lags, &quad);
                    if !(k.lags.iter().all(|v| v.is_finite()) && k.tail.is_finite()) {
                        return Err(Error::NonFinite("quadrature kernel".into()));
                    }
                    cache.push((l, k.clone()));
                    k
                }
            };
            kernels.push(k);
        }
        Ok(Self {
            decomp,
            time: time.clone(),
            order,
            quad,
            kernels,
            past,
        })
    }

    pub fn past(&self) -> Past {
        self.past
    }

    pub fn order(&self) -> FractionalOrder {
        self.order
    }

    pub fn quadrature(&self) -> &BalakrishnanQuadrature {
        &self.quad
    }

    /// Toeplitz coefficients of mode `k`.
    pub fn kernel(&self, k: usize) -> &[f64] {
        &self.kernels[k].lags
    }

    /// Applies the mode-`k` kernel to a series.
    pub fn apply_series(&self, k: usize, series: &[Complex64]) -> Vec<Complex64> {
        let ker = &self.kernels[k];
        let n = series.len();
        let s = self.order.s();
        let pref = s / self.order.gamma_one_minus_s();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..=i {
                acc += series[i - j] * ker.lags[j];
            }
            match self.past {
                Past::Vanishing => {}
                Past::Constant => {
                    let c0 = series[0];
                    let extra: f64 = ker.lags[i + 1..].iter().sum();
                    acc += c0 * (extra + ker.tail);
                }
            }
            if !self.quad.analytic_tail && self.past == Past::Vanishing {
                let horizon = (i + 1) as f64 * self.time.dt();
                acc -= series[i] * (pref * horizon.powf(-s) / s);
            }
            out[i] = acc;
        }
        out
    }
}

/// Common interface of the two routes.
pub trait HsOperator {
    fn decomposition(&self) -> &SpectralDecomposition;

    fn apply_modal(&self, c: &ModalField) -> ModalField;

    fn apply(&self, u: &SpaceTimeField) -> SpaceTimeField {
        let d = self.decomposition();
        d.from_modal(&self.apply_modal(&d.to_modal(u)))
    }
}

impl HsOperator for CausalHs<'_> {
    fn decomposition(&self) -> &SpectralDecomposition {
        self.decomp
    }

    fn apply_modal(&self, c: &ModalField) -> ModalField {
        let mut out = ModalField::zeros(c.n_t, c.n_modes);
        for k in 0..c.n_modes {
            let r = self.apply_series(k, &c.mode_series(k));
            out.set_mode_series(k, &r);
        }
        out
    }
}

impl HsOperator for SpectralHs<'_> {
    fn decomposition(&self) -> &SpectralDecomposition {
        self.decomp
    }

    fn apply_modal(&self, c: &ModalField) -> ModalField {
        self.apply_modal_diag(c).0
    }
}

fn check_shape(decomp: &SpectralDecomposition, time: &TimeGrid, u: &SpaceTimeField) -> Result<()> {
    if u.n_t() != time.n_steps() || u.n_nodes() != decomp.n_modes() {
        return Err(Error::Shape(format!(
            "field {}x{} does not match grid {}x{}",
            u.n_t(),
            u.n_nodes(),
            time.n_steps(),
            decomp.n_modes()
        )));
    }
    Ok(())
}

/// Spectral route with aliasing diagnostics.
pub fn hs_apply_spectral(
    decomp: &SpectralDecomposition,
    time: &TimeGrid,
    u: &SpaceTimeField,
    order: FractionalOrder,
    power: Power,
    adjoint: bool,
    damping: f64,
) -> Result<SpectralResult> {
    check_shape(decomp, time, u)?;
    let op = SpectralHs::new(decomp, time, order, power, adjoint, damping)?;
    let (c, frac) = op.apply_modal_diag(&decomp.to_modal(u));
    Ok(SpectralResult {
        field: decomp.from_modal(&c),
        diagnostics: SpectralDiagnostics {
            high_frequency_fraction: frac,
            warning: frac > 0.01,
        },
    })
}

/// Causal quadrature route. With a convergence tolerance set, the result is
/// compared against the refined rule.
pub fn hs_apply_balakrishnan(
    decomp: &SpectralDecomposition,
    time: &TimeGrid,
    u: &SpaceTimeField,
    order: FractionalOrder,
    quad: &BalakrishnanQuadrature,
    past: Past,
) -> Result<SpaceTimeField> {
    check_shape(decomp, time, u)?;
    let op = CausalHs::with_past(decomp, time, order, *quad, past)?;
    let out = op.apply(u);
    if let Some(tol) = quad.convergence_tol {
        let fine = CausalHs::with_past(decomp, time, order, quad.refined(), past)?.apply(u);
        let scale = fine.max_abs().max(f64::MIN_POSITIVE);
        let (mut worst, mut at) = (0.0, 0);
        for (idx, (a, b)) in out.data().iter().zip(fine.data()).enumerate() {
            let d = (a - b).norm();
            if d > worst {
                worst = d;
                at = idx;
            }
        }
        if worst > tol * scale {
            return Err(Error::QuadratureNotConverged {
                coarse: out.data()[at].norm(),
                fine: fine.data()[at].norm(),
            });
        }
    }
    Ok(out)
}

/// `‖u‖_{ℍ^a}` with weight `(1 + (λ² + ρ²)^{1/2})^{a/2}` on the padded window.
pub fn fractional_norm(decomp: &SpectralDecomposition, time: &TimeGrid, u: &SpaceTimeField, a: f64) -> Result<f64> {
    check_shape(decomp, time, u)?;
    let n = time.pad_len();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let c = decomp.to_modal(u);
    let mut acc = 0.0;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..c.n_modes {
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for i in 0..c.n_t {
            buf[i + 1] = c.get(i, k);
        }
        fft.process(&mut buf);
        let l = decomp.eigenvalues()[k];
        for (m, z) in buf.iter().enumerate() {
            let rho = time.frequency(m);
            let w = if a == 0.0 { 1.0 } else { (1.0 + l.hypot(rho)).powf(0.5 * a) };
            acc += w * z.norm_sqr();
        }
    }
    Ok((acc * time.dt() / n as f64).sqrt())
}

/// Minimum of `Re (λ+iρ)^s − cos(sπ/2) |λ+iρ|^s` over the discrete symbol set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoercivityReport {
    pub min_margin: f64,
    pub lambda_at_min: f64,
    pub rho_at_min: f64,
}

pub fn coercivity_margin(lambda: f64, rho: f64, order: FractionalOrder) -> f64 {
    let r = lambda.hypot(rho);
    if r == 0.0 {
        return 0.0;
    }
    let s = order.s();
    r.powf(s) * ((s * rho.atan2(lambda)).cos() - (s * (PI / 2.0)).cos())
}

pub fn coercivity_check(decomp: &SpectralDecomposition, time: &TimeGrid, order: FractionalOrder) -> CoercivityReport {
    let mut best = CoercivityReport {
        min_margin: f64::INFINITY,
        lambda_at_min: 0.0,
        rho_at_min: 0.0,
    };
    let freqs = time.frequencies();
    for &l in decomp.eigenvalues() {
        for &rho in &freqs {
            let m = coercivity_margin(l, rho, order);
            if m < best.min_margin {
                best = CoercivityReport {
                    min_margin: m,
                    lambda_at_min: l,
                    rho_at_min: rho,
                };
            }
        }
    }
    best
}
