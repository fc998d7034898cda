//! Restarted GMRES for complex systems with right preconditioning.

use num_complex::Complex64;

/// Stopping and restart parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresConfig {
    /// Relative residual target `‖b − A x‖ / ‖b‖`.
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            restart: 50,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmresResult {
    pub x: Vec<Complex64>,
    pub iterations: usize,
    /// Final relative residual, recomputed from the iterate.
    pub residual: f64,
    pub converged: bool,
    /// Relative residual estimate after each inner iteration.
    pub history: Vec<f64>,
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn nrm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Solves `A x = b` with the right preconditioner `P`: iterates on
/// `A P y = b`, `x = P y`. Starts from zero.
pub fn gmres(
    mut apply: impl FnMut(&[Complex64]) -> Vec<Complex64>,
    mut precond: impl FnMut(&[Complex64]) -> Vec<Complex64>,
    b: &[Complex64],
    cfg: &GmresConfig,
) -> GmresResult {
    let n = b.len();
    let zero = Complex64::new(0.0, 0.0);
    let bnorm = nrm(b);
    let mut x = vec![zero; n];
    let mut history = Vec::new();
    if bnorm == 0.0 {
        return GmresResult {
            x,
            iterations: 0,
            residual: 0.0,
            converged: true,
            history,
        };
    }
    let m = cfg.restart.max(1);
    let mut iterations = 0;
    let mut r = b.to_vec();
    loop {
        let beta = nrm(&r);
        if beta / bnorm <= cfg.tol || iterations >= cfg.max_iter {
            break;
        }
        let mut v: Vec<Vec<Complex64>> = vec![r.iter().map(|z| z / beta).collect()];
        let mut hcol: Vec<Vec<Complex64>> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<Complex64> = Vec::new();
        let mut g = vec![Complex64::new(beta, 0.0)];
        let mut k_done = 0;
        for j in 0..m {
            if iterations >= cfg.max_iter {
                break;
            }
            iterations += 1;
            let z = precond(&v[j]);
            let mut w = apply(&z);
            let mut h = vec![zero; j + 2];
            for _pass in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let c = dot(vi, &w);
                    h[i] += c;
                    for (wk, vk) in w.iter_mut().zip(vi) {
                        *wk -= c * vk;
                    }
                }
            }
            let hn = nrm(&w);
            h[j + 1] = Complex64::new(hn, 0.0);
            for i in 0..j {
                let t = h[i] * cs[i] + sn[i] * h[i + 1];
                h[i + 1] = -sn[i].conj() * h[i] + h[i + 1] * cs[i];
                h[i] = t;
            }
            // Givens rotation zeroing h[j+1].
            let (a, bb) = (h[j], h[j + 1]);
            let den = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            let (c, s) = if den == 0.0 {
                (1.0, zero)
            } else if a.norm() == 0.0 {
                (0.0, bb.conj() / bb.norm())
            } else {
                let c = a.norm() / den;
                (c, (a / a.norm()) * bb.conj() / den)
            };
            h[j] = c * a + s * bb;
            h[j + 1] = zero;
            cs.push(c);
            sn.push(s);
            g.push(-s.conj() * g[j]);
            g[j] *= c;
            hcol.push(h);
            k_done = j + 1;
            let est = g[j + 1].norm() / bnorm;
            history.push(est);
            if est <= cfg.tol || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|z| z / hn).collect());
        }
        // Back substitution.
        let mut y = vec![zero; k_done];
        for i in (0..k_done).rev() {
            let mut acc = g[i];
            for (l, yl) in y.iter().enumerate().skip(i + 1) {
                acc -= hcol[l][i] * yl;
            }
            y[i] = acc / hcol[i][i];
        }
        let mut dx = vec![zero; n];
        for (i, yi) in y.iter().enumerate() {
            for (d, vk) in dx.iter_mut().zip(&v[i]) {
                *d += yi * vk;
            }
        }
        let pdx = precond(&dx);
        for (xi, d) in x.iter_mut().zip(&pdx) {
            *xi += d;
        }
        let ax = apply(&x);
        r = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
        if k_done == 0 {
            break;
        }
    }
    let residual = nrm(&r) / bnorm;
    GmresResult {
        x,
        iterations,
        residual,
        converged: residual <= cfg.tol,
        history,
    }
}
