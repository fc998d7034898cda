//! Carleman weights, time cutoffs, polar-coordinate operators in the plane,
//! and sampling checks of the weighted inequalities for the lifted heat
//! operator `∂_t + ∂_τ − Δ`.
//!
//! Everything here is falsification by sampling: a scan that finds bounded
//! ratios for a test family supports the inequality for that family and
//! proves nothing about all admissible fields.

use crate::error::{invalid, Error, Result};
use crate::interp::fd_weights;
use crate::quad::GaussRule;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use std::f64::consts::{E, PI};

/// `ψ(y) = βy + (β/16) e^{−y/2}` and `φ_β = e^ψ`, `y = −ln|x|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanWeight {
    beta: f64,
}

impl CarlemanWeight {
    /// Accepts `β ∈ ℕ + 1/4` only.
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) || (beta - beta.floor() - 0.25).abs() > 1e-12 {
            return Err(invalid(format!("β = {beta} is not in ℕ + 1/4")));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn psi(&self, y: f64) -> f64 {
        self.beta * y + self.beta / 16.0 * (-0.5 * y).exp()
    }

    pub fn dpsi(&self, y: f64) -> f64 {
        self.beta - self.beta / 32.0 * (-0.5 * y).exp()
    }

    pub fn d2psi(&self, y: f64) -> f64 {
        self.beta / 64.0 * (-0.5 * y).exp()
    }

    pub fn d3psi(&self, y: f64) -> f64 {
        -self.beta / 128.0 * (-0.5 * y).exp()
    }

    /// `φ_β² = e^{2ψ}` at radius `r`.
    pub fn weight_sq_at_radius(&self, r: f64) -> f64 {
        (2.0 * self.psi(-r.ln())).exp()
    }
}

fn dist_to_integer(x: f64) -> f64 {
    (x - x.round()).abs()
}

/// Which weight property failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightCondition {
    LowerBound,
    UpperBound,
    Distance,
    Convexity,
}

/// Pointwise check of the weight conditions over a `y` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightReport {
    pub betas: Vec<f64>,
    /// `min (ψ' − β/2)` per β.
    pub lower_margin: Vec<f64>,
    /// `min (β − ψ')` per β.
    pub upper_margin: Vec<f64>,
    /// `min dist(2ψ', ℤ) + ψ''` per β.
    pub distance_margin: Vec<f64>,
    /// Largest `R₀` on the grid with `|x|β/16 ≤ 1 + ψ''(−ln|x|)` for `|x| ≤ R₀`.
    pub r0: Vec<f64>,
    pub violations: Vec<(f64, f64, WeightCondition)>,
}

impl WeightReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn verify_weight_properties(betas: &[f64], ys: &[f64]) -> Result<WeightReport> {
    let mut rep = WeightReport {
        betas: betas.to_vec(),
        lower_margin: Vec::new(),
        upper_margin: Vec::new(),
        distance_margin: Vec::new(),
        r0: Vec::new(),
        violations: Vec::new(),
    };
    let mut by_radius: Vec<f64> = ys.to_vec();
    // Small radii first: y descending.
    by_radius.sort_by(|a, b| b.partial_cmp(a).expect("finite grid"));
    for &b in betas {
        let w = CarlemanWeight::new(b)?;
        let (mut lo, mut hi, mut di) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        for &y in ys {
            let d1 = w.dpsi(y);
            let d2 = w.d2psi(y);
            let checks = [
                (d1 - 0.5 * b, WeightCondition::LowerBound),
                (b - d1, WeightCondition::UpperBound),
                (dist_to_integer(2.0 * d1) + d2 - 1.0 / 32.0, WeightCondition::Distance),
                (d2, WeightCondition::Convexity),
            ];
            lo = lo.min(checks[0].0);
            hi = hi.min(checks[1].0);
            di = di.min(checks[2].0 + 1.0 / 32.0);
            for (m, c) in checks {
                let bad = if c == WeightCondition::Convexity { m <= 0.0 } else { m < 0.0 };
                if bad {
                    rep.violations.push((b, y, c));
                }
            }
        }
        let mut r0 = 0.0;
        for &y in &by_radius {
            let r = (-y).exp();
            if r * b / 16.0 <= 1.0 + w.d2psi(y) {
                r0 = r;
            } else {
                break;
            }
        }
        rep.lower_margin.push(lo);
        rep.upper_margin.push(hi);
        rep.distance_margin.push(di);
        rep.r0.push(r0);
    }
    Ok(rep)
}

/// Even cutoff around `center`: 1 for `|s| ≤ inner`, 0 for `|s| ≥ outer`,
/// `exp(−(scale/(outer − |s|))³ ((|s| − inner)/(outer − inner))⁴)` between,
/// with `s` the offset from the center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    pub center: f64,
    pub inner: f64,
    pub outer: f64,
    pub scale: f64,
}

impl Cutoff {
    pub fn new(center: f64, inner: f64, outer: f64, scale: f64) -> Result<Self> {
        if !(0.0 <= inner && inner < outer && scale > 0.0) {
            return Err(invalid("cutoff needs 0 <= inner < outer and scale > 0"));
        }
        Ok(Self {
            center,
            inner,
            outer,
            scale,
        })
    }

    /// Time cutoff with `T₂ = T − t₀`, `T₁ = T − t₀/2`, scale `T`.
    pub fn time(horizon: f64, t0: f64) -> Result<Self> {
        Self::new(0.0, horizon - t0, horizon - 0.5 * t0, horizon)
    }

    /// `τ` cutoff centered at `τ̂/2` with `τ₂ = τ̂/2 − τ₀`, `τ₁ = τ̂/2 − τ₀/2`
    /// and scale `τ̂/8`.
    pub fn tau(tau_hat: f64, tau0: f64) -> Result<Self> {
        Self::new(0.5 * tau_hat, 0.5 * tau_hat - tau0, 0.5 * (tau_hat - tau0), tau_hat / 8.0)
    }

    /// `(value, first, second)` derivatives.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let d = t - self.center;
        let s = d.abs();
        if s <= self.inner {
            return (1.0, 0.0, 0.0);
        }
        if s >= self.outer {
            return (0.0, 0.0, 0.0);
        }
        let w = self.outer - self.inner;
        let a3 = self.scale.powi(3);
        let e = self.outer - s;
        let q = (s - self.inner) / w;
        // g = −a³ e^{−3} q⁴.
        let p = e.powi(-3) * q.powi(4);
        let dp = 3.0 * e.powi(-4) * q.powi(4) + 4.0 * e.powi(-3) * q.powi(3) / w;
        let d2p = 12.0 * e.powi(-5) * q.powi(4) + 24.0 * e.powi(-4) * q.powi(3) / w + 12.0 * e.powi(-3) * q * q / (w * w);
        let g = -a3 * p;
        if g < -700.0 {
            return (0.0, 0.0, 0.0);
        }
        let (g1, g2) = (-a3 * dp, -a3 * d2p);
        let v = g.exp();
        let sign = d.signum();
        (v, sign * g1 * v, (g2 + g1 * g1) * v)
    }

    /// Breakpoints of the piecewise definition inside the support.
    pub fn breakpoints(&self) -> [f64; 4] {
        [
            self.center - self.outer,
            self.center - self.inner,
            self.center + self.inner,
            self.center + self.outer,
        ]
    }
}

/// Real field `v(y, θ)` on a uniform `y` grid and equispaced angles.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarField {
    pub y0: f64,
    pub dy: f64,
    pub n_y: usize,
    pub n_theta: usize,
    /// `values[iy * n_theta + j]`.
    pub values: Vec<f64>,
}

impl PolarField {
    pub fn from_fn(y0: f64, dy: f64, n_y: usize, n_theta: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_y * n_theta);
        for i in 0..n_y {
            for j in 0..n_theta {
                values.push(f(y0 + i as f64 * dy, 2.0 * PI * j as f64 / n_theta as f64));
            }
        }
        Self {
            y0,
            dy,
            n_y,
            n_theta,
            values,
        }
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y0 + i as f64 * self.dy
    }

    pub fn theta(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n_theta as f64
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self { values, ..self.clone() }
    }

    /// Angular Fourier coefficients `v_k(y) = (1/N) Σ_j v(y, θ_j) e^{−ikθ_j}`,
    /// `[iy][k]` in FFT order.
    pub fn modes(&self) -> Vec<Vec<Complex64>> {
        let fft = FftPlanner::new().plan_fft_forward(self.n_theta);
        (0..self.n_y)
            .map(|i| {
                let mut row: Vec<Complex64> = self.values[i * self.n_theta..(i + 1) * self.n_theta]
                    .iter()
                    .map(|&v| Complex64::new(v / self.n_theta as f64, 0.0))
                    .collect();
                fft.process(&mut row);
                row
            })
            .collect()
    }

    pub fn from_modes(&self, modes: &[Vec<Complex64>]) -> Self {
        let ifft = FftPlanner::new().plan_fft_inverse(self.n_theta);
        let mut values = Vec::with_capacity(self.values.len());
        for row in modes {
            let mut r = row.clone();
            ifft.process(&mut r);
            values.extend(r.iter().map(|z| z.re));
        }
        self.with_values(values)
    }

    /// Signed angular frequency of FFT index `k`.
    pub fn frequency(&self, k: usize) -> i64 {
        let n = self.n_theta as i64;
        let k = k as i64;
        if 2 * k <= n {
            k
        } else {
            k - n
        }
    }

    /// `2π ∫ |v_k|² dy` for each `|k|`, summing `±k`.
    pub fn mode_energies(&self) -> Vec<f64> {
        let modes = self.modes();
        let mut out = vec![0.0; self.n_theta / 2 + 1];
        for row in &modes {
            for (k, z) in row.iter().enumerate() {
                out[self.frequency(k).unsigned_abs() as usize] += 2.0 * PI * z.norm_sqr() * self.dy;
            }
        }
        out
    }

    /// `∫∫ |v|² dy dθ` by the rectangle rule in both variables.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() * self.dy * 2.0 * PI / self.n_theta as f64
    }

    pub fn max_abs_diff(&self, other: &PolarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Discrete `L²` norm over `y` rows `skip..n_y − skip`.
    pub fn norm_interior(&self, skip: usize) -> f64 {
        let mut acc = 0.0;
        for i in skip..self.n_y.saturating_sub(skip) {
            for j in 0..self.n_theta {
                acc += self.values[i * self.n_theta + j].powi(2);
            }
        }
        (acc * self.dy * 2.0 * PI / self.n_theta as f64).sqrt()
    }

    pub fn scaled(&self, c: f64) -> PolarField {
        self.with_values(self.values.iter().map(|v| c * v).collect())
    }

    pub fn sub(&self, o: &PolarField) -> PolarField {
        self.with_values(self.values.iter().zip(&o.values).map(|(a, b)| a - b).collect())
    }
}

/// Polar operators in the plane: `Λ = |k|` on angular mode `k`,
/// `L^± = ∂_y ± Λ`, `L^±_β = ∂_y − ψ' ± Λ`, with a fourth-order difference
/// in `y` (five-point, one-sided near the ends).
pub struct PolarOps {
    weights: Vec<(usize, [f64; 5])>,
}

impl PolarOps {
    pub fn new(n_y: usize, dy: f64) -> Result<Self> {
        if n_y < 5 {
            return Err(invalid("polar grid needs at least 5 rows in y"));
        }
        let weights = (0..n_y)
            .map(|i| {
                let start = i.saturating_sub(2).min(n_y - 5);
                let nodes: Vec<f64> = (start..start + 5).map(|j| j as f64 * dy).collect();
                let w = fd_weights(i as f64 * dy, &nodes);
                (start, [w[0], w[1], w[2], w[3], w[4]])
            })
            .collect();
        Ok(Self { weights })
    }

    pub fn dy(&self, v: &PolarField) -> PolarField {
        let nt = v.n_theta;
        let mut out = vec![0.0; v.values.len()];
        for (i, (start, w)) in self.weights.iter().enumerate() {
            for j in 0..nt {
                out[i * nt + j] = (0..5).map(|a| w[a] * v.values[(start + a) * nt + j]).sum();
            }
        }
        v.with_values(out)
    }

    pub fn lambda(&self, v: &PolarField) -> PolarField {
        let mut m = v.modes();
        for row in m.iter_mut() {
            for (k, z) in row.iter_mut().enumerate() {
                *z *= v.frequency(k).unsigned_abs() as f64;
            }
        }
        v.from_modes(&m)
    }

    fn combine(a: &PolarField, b: &PolarField, sign: f64) -> PolarField {
        a.with_values(a.values.iter().zip(&b.values).map(|(x, y)| x + sign * y).collect())
    }

    pub fn l_plus(&self, v: &PolarField) -> PolarField {
        Self::combine(&self.dy(v), &self.lambda(v), 1.0)
    }

    pub fn l_minus(&self, v: &PolarField) -> PolarField {
        Self::combine(&self.dy(v), &self.lambda(v), -1.0)
    }

    /// `L^±_β v` with `sign = ±1`.
    pub fn l_beta(&self, v: &PolarField, w: &CarlemanWeight, sign: f64) -> PolarField {
        let base = Self::combine(&self.dy(v), &self.lambda(v), sign);
        let mut out = base.values;
        for i in 0..v.n_y {
            let d = w.dpsi(v.y(i));
            for j in 0..v.n_theta {
                out[i * v.n_theta + j] -= d * v.values[i * v.n_theta + j];
            }
        }
        v.with_values(out)
    }

    /// `L⁺L⁻ v`, the polar form of `e^{−2y}Δ`.
    pub fn laplacian(&self, v: &PolarField) -> PolarField {
        self.l_plus(&self.l_minus(v))
    }
}

/// Residual of `L⁺L⁻v = e^{−2y}Δv` against a Cartesian fourth-order
/// Laplacian of `f` with step `h`, sampled at the polar nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorizationReport {
    /// `‖L⁺L⁻v − e^{−2y}Δv‖ / ‖e^{−2y}Δv‖` over interior rows.
    pub residual: f64,
    /// `max |L⁺L⁻v − L⁻L⁺v|`.
    pub commutator: f64,
}

pub fn factorization_check(
    f: impl Fn(f64, f64) -> f64,
    y0: f64,
    dy: f64,
    n_y: usize,
    n_theta: usize,
    h: f64,
) -> Result<FactorizationReport> {
    let ops = PolarOps::new(n_y, dy)?;
    let v = PolarField::from_fn(y0, dy, n_y, n_theta, |y, th| {
        let r = (-y).exp();
        f(r * th.cos(), r * th.sin())
    });
    let lap = |x1: f64, x2: f64| {
        let c = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
        let mut acc = 0.0;
        for (a, w) in c.iter().enumerate() {
            let o = (a as f64 - 2.0) * h;
            acc += w * (f(x1 + o, x2) + f(x1, x2 + o));
        }
        acc / (h * h)
    };
    let cart = PolarField::from_fn(y0, dy, n_y, n_theta, |y, th| {
        let r = (-y).exp();
        (-2.0 * y).exp() * lap(r * th.cos(), r * th.sin())
    });
    let pm = ops.laplacian(&v);
    let mp = ops.l_minus(&ops.l_plus(&v));
    let residual = pm.sub(&cart).norm_interior(4) / cart.norm_interior(4);
    Ok(FactorizationReport {
        residual,
        commutator: pm.max_abs_diff(&mp),
    })
}

/// `((r − a)(b − r) / ((b − a)/2)²)^p` on `(a, b)`, zero outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialBump {
    pub a: f64,
    pub b: f64,
    pub power: i32,
}

impl RadialBump {
    /// `(R, R', R'')`.
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        if r <= self.a || r >= self.b {
            return (0.0, 0.0, 0.0);
        }
        let c = (0.5 * (self.b - self.a)).powi(2);
        let u = (r - self.a) * (self.b - r) / c;
        let du = (self.a + self.b - 2.0 * r) / c;
        let d2u = -2.0 / c;
        let p = self.power;
        let pf = p as f64;
        (
            u.powi(p),
            pf * u.powi(p - 1) * du,
            pf * (pf - 1.0) * u.powi(p - 2) * du * du + pf * u.powi(p - 1) * d2u,
        )
    }
}

/// One separable term `amp cos(ω_t t + α) cos(ω_τ τ + γ) R(r) cos(kθ + φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnularTerm {
    pub amp: f64,
    pub omega_t: f64,
    pub phase_t: f64,
    pub omega_tau: f64,
    pub phase_tau: f64,
    pub radial: RadialBump,
    pub k: u32,
    pub phase_theta: f64,
}

impl AnnularTerm {
    fn time_factor(omega: f64, phase: f64, t: f64, deriv: bool) -> f64 {
        if deriv {
            -omega * (omega * t + phase).sin()
        } else {
            (omega * t + phase).cos()
        }
    }
}

/// Sum of separable annulus-supported terms with closed-form derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TestField {
    pub terms: Vec<AnnularTerm>,
}

impl TestField {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    /// Radial support `[min a, max b]`.
    pub fn support(&self) -> Option<(f64, f64)> {
        self.terms.iter().fold(None, |acc, t| {
            let (a, b) = (t.radial.a, t.radial.b);
            Some(acc.map_or((a, b), |(x, y): (f64, f64)| (x.min(a), y.max(b))))
        })
    }
}

/// Random family of `n` fields, each the sum of three terms with angular
/// degree up to 4 and radial supports inside `[r_in, r_out]`.
pub fn random_family(n: usize, seed: u64, r_in: f64, r_out: f64) -> Vec<TestField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let terms = (0..3)
                .map(|_| {
                    let width = rng.random_range(0.3..1.0) * (r_out - r_in);
                    let a = r_in + rng.random_range(0.0..1.0) * (r_out - r_in - width);
                    AnnularTerm {
                        amp: rng.random_range(-1.0..1.0),
                        omega_t: rng.random_range(0.0..3.0),
                        phase_t: rng.random_range(0.0..2.0 * PI),
                        omega_tau: rng.random_range(0.0..3.0),
                        phase_tau: rng.random_range(0.0..2.0 * PI),
                        radial: RadialBump {
                            a,
                            b: a + width,
                            power: 4,
                        },
                        k: rng.random_range(0..=4),
                        phase_theta: rng.random_range(0.0..2.0 * PI),
                    }
                })
                .collect();
            TestField { terms }
        })
        .collect()
}

/// Tensor rules for the Carleman integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanQuadrature {
    /// Gauss points per panel in `t` and `τ`.
    pub time_points: usize,
    /// Panels per cutoff transition.
    pub transition_panels: usize,
    pub radial_panels: usize,
    pub radial_points: usize,
    pub angles: usize,
}

impl Default for CarlemanQuadrature {
    fn default() -> Self {
        Self {
            time_points: 12,
            transition_panels: 6,
            radial_panels: 24,
            radial_points: 10,
            angles: 24,
        }
    }
}

/// Cutoffs and annulus of the Carleman setting, `r ∈ [0.05e, e]` by default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanSetup {
    pub chi: Cutoff,
    pub zeta: Cutoff,
    pub r_in: f64,
    pub r_out: f64,
    pub quad: CarlemanQuadrature,
}

impl Default for CarlemanSetup {
    fn default() -> Self {
        Self {
            chi: Cutoff::time(1.0, 0.5).expect("default cutoff"),
            zeta: Cutoff::tau(2.0, 0.5).expect("default cutoff"),
            r_in: 0.05 * E,
            r_out: E,
            quad: CarlemanQuadrature::default(),
        }
    }
}

/// Composite Gauss nodes over the cutoff support, refined on the transitions.
fn cutoff_nodes(c: &Cutoff, q: &CarlemanQuadrature) -> Vec<(f64, f64)> {
    let g = GaussRule::new(q.time_points);
    let [a, b, cc, d] = c.breakpoints();
    let mut out = Vec::new();
    let mut panel = |lo: f64, hi: f64, parts: usize| {
        if hi <= lo {
            return;
        }
        for p in 0..parts {
            let x0 = lo + (hi - lo) * p as f64 / parts as f64;
            let x1 = lo + (hi - lo) * (p + 1) as f64 / parts as f64;
            out.extend(g.on(x0, x1));
        }
    };
    panel(a, b, q.transition_panels);
    panel(b, cc, 2);
    panel(cc, d, q.transition_panels);
    out
}

/// Sum over pairs of separable items: `Σ_ij (∫w_t c_i c_j)(∫w_τ d_i d_j)(∫w_x g_i g_j)`.
struct Item<'a> {
    t: &'a [f64],
    tau: &'a [f64],
    x: Vec<f64>,
}

fn gram_sum(items: &[Item<'_>], wt: &[f64], wtau: &[f64], wx: &[f64]) -> f64 {
    let dot = |a: &[f64], b: &[f64], w: &[f64]| a.iter().zip(b).zip(w).map(|((x, y), w)| x * y * w).sum::<f64>();
    let mut acc = 0.0;
    for a in items {
        for b in items {
            acc += dot(a.t, b.t, wt) * dot(a.tau, b.tau, wtau) * dot(&a.x, &b.x, wx);
        }
    }
    acc
}

/// Both sides of the weighted space-time inequality for one field.
///
/// All four integrals are divided by `exp(log_scale)`, the weight `φ_β²` at
/// the inner edge of the field support, which keeps large β finite.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CarlemanSides {
    pub log_scale: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// Gradient part of `lhs`.
    pub gradient: f64,
    /// `∫ φ²(1+ψ'')χ²ζ²|x|^{-2}|w|²`, so `lhs = gradient + β² mass`.
    pub mass: f64,
}

impl CarlemanSides {
    /// Unscaled `(lhs, rhs)`; may overflow for large β.
    pub fn absolute(&self) -> (f64, f64) {
        let s = self.log_scale.exp();
        (self.lhs * s, self.rhs * s)
    }

    /// `lhs / rhs`; infinite when only the right side vanishes, zero for `w = 0`.
    pub fn ratio(&self) -> f64 {
        if self.rhs > 0.0 {
            self.lhs / self.rhs
        } else if self.lhs > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

/// `LHS = ∫ φ²(1+ψ'')χ²ζ²(|∇w|² + β²|x|^{-2}|w|²)` and
/// `RHS = ∫ φ²|x|²[χ²ζ²(Δw − ∂_t w − ∂_τ w)² + (χ'ζw)² + (χζ'w)²]` in the plane.
pub fn carleman_lhs_rhs(w: &TestField, beta: &CarlemanWeight, setup: &CarlemanSetup) -> Result<CarlemanSides> {
    if let Some((a, b)) = w.support() {
        if a < setup.r_in - 1e-12 || b > setup.r_out + 1e-12 {
            return Err(Error::Support(format!(
                "radial support [{a}, {b}] leaves the annulus [{}, {}]",
                setup.r_in, setup.r_out
            )));
        }
    } else {
        return Ok(CarlemanSides::default());
    }
    let q = &setup.quad;
    let tn = cutoff_nodes(&setup.chi, q);
    let sn = cutoff_nodes(&setup.zeta, q);
    let chi: Vec<(f64, f64, f64)> = tn.iter().map(|&(t, _)| setup.chi.eval(t)).collect();
    let zeta: Vec<(f64, f64, f64)> = sn.iter().map(|&(s, _)| setup.zeta.eval(s)).collect();
    let wt_main: Vec<f64> = tn.iter().zip(&chi).map(|(&(_, w), c)| w * c.0 * c.0).collect();
    let wt_prime: Vec<f64> = tn.iter().zip(&chi).map(|(&(_, w), c)| w * c.1 * c.1).collect();
    let ws_main: Vec<f64> = sn.iter().zip(&zeta).map(|(&(_, w), z)| w * z.0 * z.0).collect();
    let ws_prime: Vec<f64> = sn.iter().zip(&zeta).map(|(&(_, w), z)| w * z.1 * z.1).collect();

    // Spatial nodes: Gauss in r over the field support, trapezoid in θ.
    let (ra, rb) = w.support().expect("nonempty");
    let g = GaussRule::new(q.radial_points);
    let mut rn = Vec::new();
    for p in 0..q.radial_panels {
        let x0 = ra + (rb - ra) * p as f64 / q.radial_panels as f64;
        let x1 = ra + (rb - ra) * (p + 1) as f64 / q.radial_panels as f64;
        rn.extend(g.on(x0, x1));
    }
    let na = q.angles;
    let log_scale = 2.0 * beta.psi(-ra.ln());
    let mut wx_l = Vec::with_capacity(rn.len() * na);
    let mut wx_r = Vec::with_capacity(rn.len() * na);
    for &(r, wr) in &rn {
        let y = -r.ln();
        let phi2 = (2.0 * beta.psi(y) - log_scale).exp();
        for _ in 0..na {
            let area = wr * r * 2.0 * PI / na as f64;
            wx_l.push(area * phi2 * (1.0 + beta.d2psi(y)));
            wx_r.push(area * phi2 * r * r);
        }
    }
    let b2 = beta.beta() * beta.beta();
    let tvals = |term: &AnnularTerm, d: bool| -> Vec<f64> {
        tn.iter().map(|&(t, _)| AnnularTerm::time_factor(term.omega_t, term.phase_t, t, d)).collect()
    };
    let svals = |term: &AnnularTerm, d: bool| -> Vec<f64> {
        sn.iter().map(|&(s, _)| AnnularTerm::time_factor(term.omega_tau, term.phase_tau, s, d)).collect()
    };
    let t0: Vec<Vec<f64>> = w.terms.iter().map(|t| tvals(t, false)).collect();
    let t1: Vec<Vec<f64>> = w.terms.iter().map(|t| tvals(t, true)).collect();
    let s0: Vec<Vec<f64>> = w.terms.iter().map(|t| svals(t, false)).collect();
    let s1: Vec<Vec<f64>> = w.terms.iter().map(|t| svals(t, true)).collect();
    // Spatial factors per term: (F, F_r, F_θ/r, ΔF, F/r).
    let spatial = |term: &AnnularTerm, kind: u8| -> Vec<f64> {
        let mut out = Vec::with_capacity(rn.len() * na);
        let k = term.k as f64;
        for &(r, _) in &rn {
            let (rv, r1, r2) = term.radial.eval(r);
            for j in 0..na {
                let th = 2.0 * PI * j as f64 / na as f64;
                let (s, c) = (k * th + term.phase_theta).sin_cos();
                out.push(
                    term.amp
                        * match kind {
                            0 => rv * c,
                            1 => r1 * c,
                            2 => -k * rv * s / r,
                            3 => (r2 + r1 / r - k * k * rv / (r * r)) * c,
                            _ => rv * c / r,
                        },
                );
            }
        }
        out
    };
    let items = |kinds: &[(usize, bool, bool, u8, f64)]| -> Vec<Item<'_>> {
        kinds
            .iter()
            .map(|&(m, dt, ds, kind, coef)| Item {
                t: if dt { &t1[m] } else { &t0[m] },
                tau: if ds { &s1[m] } else { &s0[m] },
                x: spatial(&w.terms[m], kind).into_iter().map(|v| v * coef).collect(),
            })
            .collect()
    };
    let terms = 0..w.terms.len();
    let grad_r: Vec<_> = terms.clone().map(|m| (m, false, false, 1u8, 1.0)).collect();
    let grad_t: Vec<_> = terms.clone().map(|m| (m, false, false, 2u8, 1.0)).collect();
    let mass: Vec<_> = terms.clone().map(|m| (m, false, false, 4u8, 1.0)).collect();
    let gradient =
        gram_sum(&items(&grad_r), &wt_main, &ws_main, &wx_l) + gram_sum(&items(&grad_t), &wt_main, &ws_main, &wx_l);
    let mass = gram_sum(&items(&mass), &wt_main, &ws_main, &wx_l);
    let mut heat = Vec::new();
    for m in terms.clone() {
        heat.push((m, false, false, 3u8, 1.0));
        heat.push((m, true, false, 0u8, -1.0));
        heat.push((m, false, true, 0u8, -1.0));
    }
    let plain: Vec<_> = terms.map(|m| (m, false, false, 0u8, 1.0)).collect();
    let rhs = gram_sum(&items(&heat), &wt_main, &ws_main, &wx_r)
        + gram_sum(&items(&plain), &wt_prime, &ws_main, &wx_r)
        + gram_sum(&items(&plain), &wt_main, &ws_prime, &wx_r);
    Ok(CarlemanSides {
        log_scale,
        lhs: gradient + b2 * mass,
        rhs,
        gradient,
        mass,
    })
}

/// One row of the scan table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRow {
    pub beta: f64,
    pub sample_id: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Ratios for every (field, β) pair and the per-β maxima.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanTable {
    pub rows: Vec<ScanRow>,
    /// `(β, max ratio)` in β order.
    pub envelope: Vec<(f64, f64)>,
}

impl ScanTable {
    /// Index of the largest envelope value.
    pub fn knee(&self) -> usize {
        self.envelope
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).expect("finite ratios"))
            .map_or(0, |(i, _)| i)
    }

    /// Envelope non-increasing from the knee on.
    pub fn nonincreasing_beyond_knee(&self) -> bool {
        self.envelope[self.knee()..].windows(2).all(|w| w[1].1 <= w[0].1)
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| r.ratio.is_finite())
    }
}

/// Scans the family over the β grid; β values run on separate threads.
pub fn carleman_scan(family: &[TestField], betas: &[f64], setup: &CarlemanSetup) -> Result<ScanTable> {
    let weights = betas.iter().map(|&b| CarlemanWeight::new(b)).collect::<Result<Vec<_>>>()?;
    let per_beta: Vec<Result<Vec<ScanRow>>> = std::thread::scope(|s| {
        let handles: Vec<_> = weights
            .iter()
            .map(|w| {
                s.spawn(move || {
                    family
                        .iter()
                        .enumerate()
                        .map(|(id, f)| {
                            let sides = carleman_lhs_rhs(f, w, setup)?;
                            let (lhs, rhs) = sides.absolute();
                            Ok(ScanRow {
                                beta: w.beta(),
                                sample_id: id,
                                lhs,
                                rhs,
                                ratio: sides.ratio(),
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("scan worker panicked")).collect()
    });
    let mut rows = Vec::new();
    let mut envelope = Vec::new();
    for (b, r) in betas.iter().zip(per_beta) {
        let r = r?;
        envelope.push((*b, r.iter().map(|x| x.ratio).fold(0.0, f64::max)));
        rows.extend(r);
    }
    Ok(ScanTable { rows, envelope })
}

/// Coefficients of the mode-wise conjugated operator in the plane:
/// `ã = (ψ' − k)(ψ' + k) − ψ''` and `b̃ = 2ψ'`.
pub fn modewise_coefficients(w: &CarlemanWeight, k: u32, y: f64) -> (f64, f64) {
    let (d1, d2) = (w.dpsi(y), w.d2psi(y));
    let k = k as f64;
    ((d1 - k) * (d1 + k) - d2, 2.0 * d1)
}

/// Separable mode profile `cos(ω_t t + α) cos(ω_τ τ + γ) Y(y)` with `Y` a
/// polynomial bump on `(a, b) ⊂ (0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeProfile {
    pub k: u32,
    pub omega_t: f64,
    pub phase_t: f64,
    pub omega_tau: f64,
    pub phase_tau: f64,
    pub bump: RadialBump,
}

/// Both sides of the mode-wise inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModewiseRow {
    pub k: u32,
    pub beta: f64,
    /// `Σ_{j≤1} β^{2−2j}∫(1+ψ'')|∂_y^j(χζv)|² + k²∫(1+ψ'')|χζv|²`.
    pub lower: f64,
    /// `∫|χζ(L⁺_βL⁻_βv − e^{−2y}(∂_t + ∂_τ)v)|² + ∫|χ'ζe^{−2y}v|² + ∫|χζ'e^{−2y}v|²`.
    pub upper: f64,
    pub ratio: f64,
}

pub fn modewise_inequality_check(
    profiles: &[ModeProfile],
    betas: &[f64],
    setup: &CarlemanSetup,
) -> Result<Vec<ModewiseRow>> {
    let q = &setup.quad;
    let tn = cutoff_nodes(&setup.chi, q);
    let sn = cutoff_nodes(&setup.zeta, q);
    let chi: Vec<(f64, f64, f64)> = tn.iter().map(|&(t, _)| setup.chi.eval(t)).collect();
    let zeta: Vec<(f64, f64, f64)> = sn.iter().map(|&(s, _)| setup.zeta.eval(s)).collect();
    let wt: Vec<f64> = tn.iter().zip(&chi).map(|(&(_, w), c)| w * c.0 * c.0).collect();
    let wtp: Vec<f64> = tn.iter().zip(&chi).map(|(&(_, w), c)| w * c.1 * c.1).collect();
    let ws: Vec<f64> = sn.iter().zip(&zeta).map(|(&(_, w), z)| w * z.0 * z.0).collect();
    let wsp: Vec<f64> = sn.iter().zip(&zeta).map(|(&(_, w), z)| w * z.1 * z.1).collect();
    let g = GaussRule::new(q.radial_points);
    let mut rows = Vec::new();
    for p in profiles {
        if p.bump.a <= 0.0 {
            return Err(Error::Support("mode profile must vanish for y <= 0".into()));
        }
        let mut yn = Vec::new();
        for panel in 0..q.radial_panels {
            let x0 = p.bump.a + (p.bump.b - p.bump.a) * panel as f64 / q.radial_panels as f64;
            let x1 = p.bump.a + (p.bump.b - p.bump.a) * (panel + 1) as f64 / q.radial_panels as f64;
            yn.extend(g.on(x0, x1));
        }
        let f = |om: f64, ph: f64, x: f64, d: bool| AnnularTerm::time_factor(om, ph, x, d);
        let t0: Vec<f64> = tn.iter().map(|&(t, _)| f(p.omega_t, p.phase_t, t, false)).collect();
        let t1: Vec<f64> = tn.iter().map(|&(t, _)| f(p.omega_t, p.phase_t, t, true)).collect();
        let s0: Vec<f64> = sn.iter().map(|&(s, _)| f(p.omega_tau, p.phase_tau, s, false)).collect();
        let s1: Vec<f64> = sn.iter().map(|&(s, _)| f(p.omega_tau, p.phase_tau, s, true)).collect();
        for &b in betas {
            let w = CarlemanWeight::new(b)?;
            let wy: Vec<f64> = yn.iter().map(|&(_, wq)| wq).collect();
            let wy1: Vec<f64> = yn.iter().map(|&(y, wq)| wq * (1.0 + w.d2psi(y))).collect();
            let mut op = Vec::new();
            let mut damp = Vec::new();
            let mut val = Vec::new();
            let mut der = Vec::new();
            for &(y, _) in &yn {
                let (v, v1, v2) = p.bump.eval(y);
                let (a, bt) = modewise_coefficients(&w, p.k, y);
                op.push(v2 - bt * v1 + a * v);
                damp.push((-2.0 * y).exp() * v);
                val.push(v);
                der.push(v1);
            }
            let neg_damp: Vec<f64> = damp.iter().map(|v| -v).collect();
            let upper = gram_sum(
                &[
                    Item { t: &t0, tau: &s0, x: op },
                    Item { t: &t1, tau: &s0, x: neg_damp.clone() },
                    Item { t: &t0, tau: &s1, x: neg_damp },
                ],
                &wt,
                &ws,
                &wy,
            ) + gram_sum(&[Item { t: &t0, tau: &s0, x: damp.clone() }], &wtp, &ws, &wy)
                + gram_sum(&[Item { t: &t0, tau: &s0, x: damp }], &wt, &wsp, &wy);
            let kk = (p.k as f64).powi(2);
            let lower = (b * b + kk) * gram_sum(&[Item { t: &t0, tau: &s0, x: val }], &wt, &ws, &wy1)
                + gram_sum(&[Item { t: &t0, tau: &s0, x: der }], &wt, &ws, &wy1);
            rows.push(ModewiseRow {
                k: p.k,
                beta: b,
                lower,
                upper,
                ratio: if upper > 0.0 { lower / upper } else { 0.0 },
            });
        }
    }
    Ok(rows)
}
