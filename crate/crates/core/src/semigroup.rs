//! Heat semigroup `P_τ = e^{-τ L}` and the parabolic evolution
//! `(P^H_τ u)(t) = P_τ [u(t - τ)]`, both applied through the modal basis.

use crate::error::{invalid, Result};
use crate::field::{ModalField, SpaceTimeField};
use crate::grid::{SpectralDecomposition, TimeGrid};
use crate::interp;
use num_complex::Complex64;

/// Borrowed decomposition used to evaluate the semigroup.
#[derive(Debug, Clone, Copy)]
pub struct SemigroupHandle<'a> {
    pub decomp: &'a SpectralDecomposition,
}

impl<'a> SemigroupHandle<'a> {
    pub fn new(decomp: &'a SpectralDecomposition) -> Self {
        Self { decomp }
    }

    pub fn apply(&self, g: &[f64], tau: f64) -> Result<Vec<f64>> {
        semigroup_apply(self.decomp, g, tau)
    }

    pub fn kernel(&self, x: usize, z: usize, tau: f64) -> Result<f64> {
        kernel_eval(self.decomp, x, z, tau)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(invalid(format!("semigroup time {tau} must be nonnegative")));
    }
    Ok(())
}

/// `P_τ g = Φ e^{-Λ τ} Φ^T M g`.
pub fn semigroup_apply(decomp: &SpectralDecomposition, g: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let mut c = decomp.forward(g);
    for (ck, l) in c.iter_mut().zip(decomp.eigenvalues()) {
        *ck *= (-l * tau).exp();
    }
    Ok(decomp.inverse(&c))
}

/// Discrete heat kernel `p(x, z, τ) = Σ_k e^{-λ_k τ} φ_k(x) φ_k(z)`, a
/// density with respect to the lumped weights.
pub fn kernel_eval(decomp: &SpectralDecomposition, x: usize, z: usize, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let m = decomp.modes();
    Ok(decomp
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(k, l)| (-l * tau).exp() * m[(x, k)] * m[(z, k)])
        .sum())
}

/// Kernel row `z ↦ p(x, z, τ)`.
pub fn kernel_row(decomp: &SpectralDecomposition, x: usize, tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let m = decomp.modes();
    let coef: Vec<f64> = decomp
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(k, l)| (-l * tau).exp() * m[(x, k)])
        .collect();
    Ok(decomp.inverse(&coef))
}

/// Shifted modal series `e^{-λ_k τ} c_k(t_i - τ)`, evaluated causally with
/// the four-point interpolant and the vanishing past.
pub fn evolve_modal(decomp: &SpectralDecomposition, time: &TimeGrid, c: &ModalField, tau: f64) -> ModalField {
    let mut out = ModalField::zeros(c.n_t, c.n_modes);
    let shift = tau / time.dt();
    for k in 0..c.n_modes {
        let decay = (-decomp.eigenvalues()[k] * tau).exp();
        if decay == 0.0 {
            continue;
        }
        let series = c.mode_series(k);
        for i in 0..c.n_t {
            let v = interp::eval(&series, i as f64 - shift, i);
            out.set(i, k, v * decay);
        }
    }
    out
}

/// `(P^H_τ u)(t_i, ·) = P_τ [u(t_i - τ, ·)]`.
pub fn evolution_apply(decomp: &SpectralDecomposition, time: &TimeGrid, u: &SpaceTimeField, tau: f64) -> Result<SpaceTimeField> {
    check_tau(tau)?;
    if u.n_t() != time.n_steps() || u.n_nodes() != decomp.n_modes() {
        return Err(crate::Error::Shape("field does not match grid".into()));
    }
    let c = decomp.to_modal(u);
    Ok(decomp.from_modal(&evolve_modal(decomp, time, &c, tau)))
}

/// `e^{-λ τ} e^{iρ(t - τ)}`, the evolution of a single space-time mode.
pub fn mode_evolution(lambda: f64, rho: f64, t: f64, tau: f64) -> Complex64 {
    Complex64::from_polar((-lambda * tau).exp(), rho * (t - tau))
}
