//! Generalized eigendecomposition `K φ = λ M φ` with `M`-orthonormal modes.

use super::EllipticOperator;
use crate::error::{Error, Result};
use crate::field::{ModalField, SpaceTimeField};
use faer::{Mat, Side};
use num_complex::Complex64;

/// Above this size the reconstruction residual is bounded through the
/// eigen-residual instead of forming `M Φ Λ Φ^T M` densely.
const DENSE_CHECK_LIMIT: usize = 1200;

/// Eigenpairs of the discrete operator, ascending, with `Φ^T M Φ = I`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    /// Columns are the modes `φ_k`.
    modes: Mat<f64>,
    /// `M Φ`, the forward transform.
    weighted: Mat<f64>,
    mass: Vec<f64>,
    /// `‖K − M Φ Λ Φ^T M‖_F / ‖K‖_F` (or an upper bound for large grids).
    pub reconstruction_residual: f64,
}

/// Decomposes the operator; fails if the reconstruction residual exceeds `tol`.
pub fn spectral_decompose(op: &EllipticOperator, tol: f64) -> Result<SpectralDecomposition> {
    let n = op.n();
    let mass = op.mass().to_vec();
    let isq: Vec<f64> = mass.iter().map(|w| 1.0 / w.sqrt()).collect();
    let mut s = Mat::<f64>::zeros(n, n);
    for r in 0..n {
        for (c, v) in op.row(r) {
            s[(r, c)] = v * isq[r] * isq[c];
        }
    }
    let eig = s
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let svals = eig.S().column_vector();
    let u = eig.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svals[a].total_cmp(&svals[b]));
    let lam_max = svals[order[n - 1]].abs().max(1.0);
    let mut eigenvalues = Vec::with_capacity(n);
    for &k in &order {
        let l = svals[k];
        if !l.is_finite() {
            return Err(Error::NonFinite("eigenvalues".into()));
        }
        if l < -1e-9 * lam_max {
            return Err(Error::Eigen(format!("negative eigenvalue {l:.3e}")));
        }
        eigenvalues.push(if l < 1e-11 * lam_max { 0.0 } else { l });
    }
    let modes = Mat::<f64>::from_fn(n, n, |i, j| u[(i, order[j])] * isq[i]);
    let weighted = Mat::<f64>::from_fn(n, n, |i, j| modes[(i, j)] * mass[i]);

    let knorm = op.frobenius();
    let residual = if n <= DENSE_CHECK_LIMIT {
        let scaled = Mat::<f64>::from_fn(n, n, |i, j| weighted[(i, j)] * eigenvalues[j]);
        let recon = &scaled * weighted.transpose();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (op.entry(i, j) - recon[(i, j)]).powi(2);
            }
        }
        acc.sqrt() / knorm
    } else {
        // K - MΦΛΦ^TM = (KΦ - MΦΛ) Φ^T M and ‖Φ^T M‖_2 = max_i sqrt(w_i).
        let mut acc = 0.0;
        let mut col = vec![0.0; n];
        for j in 0..n {
            for i in 0..n {
                col[i] = modes[(i, j)];
            }
            let kc = op.apply_k(&col);
            for i in 0..n {
                acc += (kc[i] - mass[i] * eigenvalues[j] * col[i]).powi(2);
            }
        }
        let wmax = mass.iter().cloned().fold(0.0, f64::max);
        acc.sqrt() * wmax.sqrt() / knorm
    };
    if !(residual <= tol) {
        return Err(Error::Reconstruction { residual, tol });
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        modes,
        weighted,
        mass,
        reconstruction_residual: residual,
    })
}

impl SpectralDecomposition {
    /// Builds a decomposition from known modes (columns of `modes`), e.g. a
    /// closed-form subset. The modes must be `M`-orthonormal and satisfy
    /// `K φ = λ M φ`; `reconstruction_residual` then holds the worst
    /// eigen-residual `‖K φ − λ M φ‖ / ‖K‖_F`.
    pub fn from_modes(op: &EllipticOperator, eigenvalues: Vec<f64>, modes: Mat<f64>, tol: f64) -> Result<Self> {
        let n = op.n();
        if modes.nrows() != n || modes.ncols() != eigenvalues.len() {
            return Err(Error::Shape(format!(
                "modes {}x{} for {n} nodes and {} eigenvalues",
                modes.nrows(),
                modes.ncols(),
                eigenvalues.len()
            )));
        }
        let mass = op.mass().to_vec();
        let weighted = Mat::<f64>::from_fn(n, modes.ncols(), |i, j| modes[(i, j)] * mass[i]);
        let gram = weighted.transpose() * &modes;
        let mut worst: f64 = 0.0;
        for a in 0..modes.ncols() {
            for b in 0..modes.ncols() {
                let want = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((gram[(a, b)] - want).abs());
            }
        }
        if !(worst <= tol) {
            return Err(Error::Eigen(format!("modes not M-orthonormal: defect {worst:.3e}")));
        }
        let knorm = op.frobenius();
        let mut col = vec![0.0; n];
        let mut resid: f64 = 0.0;
        for (j, &l) in eigenvalues.iter().enumerate() {
            for i in 0..n {
                col[i] = modes[(i, j)];
            }
            let kc = op.apply_k(&col);
            let r: f64 = (0..n).map(|i| (kc[i] - mass[i] * l * col[i]).powi(2)).sum();
            resid = resid.max(r.sqrt() / knorm);
        }
        if !(resid <= tol) {
            return Err(Error::Reconstruction { residual: resid, tol });
        }
        Ok(Self {
            eigenvalues,
            modes,
            weighted,
            mass,
            reconstruction_residual: resid,
        })
    }

    /// `Φ c` for complex coefficients.
    pub fn inverse_complex(&self, c: &[Complex64]) -> Vec<Complex64> {
        let n = self.modes.nrows();
        (0..n)
            .map(|i| (0..self.n_modes()).map(|k| c[k] * self.modes[(i, k)]).sum())
            .collect()
    }

    /// `Φ^T M v` for complex nodal values.
    pub fn forward_complex(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.modes.nrows();
        (0..self.n_modes())
            .map(|k| (0..n).map(|i| v[i] * self.weighted[(i, k)]).sum())
            .collect()
    }
}

fn split(data: &[Complex64], rows: usize, cols: usize) -> (Mat<f64>, Mat<f64>, bool) {
    let re = Mat::<f64>::from_fn(rows, cols, |i, j| data[i * cols + j].re);
    let has_im = data.iter().any(|z| z.im != 0.0);
    let im = if has_im {
        Mat::<f64>::from_fn(rows, cols, |i, j| data[i * cols + j].im)
    } else {
        Mat::<f64>::zeros(0, 0)
    };
    (re, im, has_im)
}

fn join(re: &Mat<f64>, im: Option<&Mat<f64>>) -> Vec<Complex64> {
    let (r, c) = (re.nrows(), re.ncols());
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(Complex64::new(re[(i, j)], im.map_or(0.0, |m| m[(i, j)])));
        }
    }
    out
}

/// Rows of the mode matrices restricted to a node subset.
#[derive(Debug, Clone)]
pub struct SubsetBasis {
    pub nodes: Vec<usize>,
    modes: Mat<f64>,
    weighted: Mat<f64>,
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn modes(&self) -> &Mat<f64> {
        &self.modes
    }

    pub fn mode(&self, k: usize) -> Vec<f64> {
        (0..self.modes.nrows()).map(|i| self.modes[(i, k)]).collect()
    }

    /// `Φ^T M v`.
    pub fn forward(&self, v: &[f64]) -> Vec<f64> {
        let n = self.modes.nrows();
        (0..self.n_modes())
            .map(|k| (0..n).map(|i| self.weighted[(i, k)] * v[i]).sum())
            .collect()
    }

    /// `Φ c`.
    pub fn inverse(&self, c: &[f64]) -> Vec<f64> {
        let n = self.modes.nrows();
        (0..n)
            .map(|i| (0..self.n_modes()).map(|k| self.modes[(i, k)] * c[k]).sum())
            .collect()
    }

    pub fn to_modal(&self, u: &SpaceTimeField) -> ModalField {
        let (re, im, has_im) = split(u.data(), u.n_t(), u.n_nodes());
        let cr = &re * &self.weighted;
        let ci = has_im.then(|| &im * &self.weighted);
        ModalField {
            n_t: u.n_t(),
            n_modes: self.n_modes(),
            data: join(&cr, ci.as_ref()),
        }
    }

    pub fn from_modal(&self, c: &ModalField) -> SpaceTimeField {
        let (re, im, has_im) = split(&c.data, c.n_t, c.n_modes);
        let ur = &re * self.modes.transpose();
        let ui = has_im.then(|| &im * self.modes.transpose());
        SpaceTimeField::from_data(c.n_t, self.modes.nrows(), join(&ur, ui.as_ref())).expect("shape")
    }

    pub fn subset(&self, nodes: &[usize]) -> SubsetBasis {
        let m = self.n_modes();
        SubsetBasis {
            nodes: nodes.to_vec(),
            modes: Mat::<f64>::from_fn(nodes.len(), m, |i, k| self.modes[(nodes[i], k)]),
            weighted: Mat::<f64>::from_fn(nodes.len(), m, |i, k| self.weighted[(nodes[i], k)]),
        }
    }
}

impl SubsetBasis {
    /// `Φ` restricted to the subset rows.
    pub fn modes_matrix(&self) -> &Mat<f64> {
        &self.modes
    }

    /// `M Φ` restricted to the subset rows.
    pub fn weighted_matrix(&self) -> &Mat<f64> {
        &self.weighted
    }

    /// Modal coefficients of a field supported on the subset; `values` is
    /// time-major with one column per subset node.
    pub fn to_modal(&self, n_t: usize, values: &[Complex64]) -> ModalField {
        let (re, im, has_im) = split(values, n_t, self.nodes.len());
        let cr = &re * &self.weighted;
        let ci = has_im.then(|| &im * &self.weighted);
        ModalField {
            n_t,
            n_modes: self.modes.ncols(),
            data: join(&cr, ci.as_ref()),
        }
    }

    /// Values on the subset nodes, time-major.
    pub fn from_modal(&self, c: &ModalField) -> Vec<Complex64> {
        let (re, im, has_im) = split(&c.data, c.n_t, c.n_modes);
        let ur = &re * self.modes.transpose();
        let ui = has_im.then(|| &im * self.modes.transpose());
        join(&ur, ui.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{assemble_elliptic, build_conductivity, BoxGrid, ConductivityFamily, Region};

    #[test]
    fn one_dimensional_identity_spectrum() {
        let g = BoxGrid::new(1, 1.5, 33).unwrap();
        let om = Region::ball([0.0, 0.0], 0.5);
        let sig = build_conductivity(&g, &ConductivityFamily::Identity, &om).unwrap();
        let op = assemble_elliptic(&g, &sig).unwrap();
        let d = spectral_decompose(&op, 1e-10).unwrap();
        let h = g.spacing();
        for k in 0..33 {
            let exact = 4.0 / (h * h) * (k as f64 * std::f64::consts::PI / (2.0 * 32.0)).sin().powi(2);
            assert!((d.eigenvalues()[k] - exact).abs() < 1e-9 * exact.max(1.0));
        }
        assert_eq!(d.eigenvalues()[0], 0.0);
        // M-orthonormality and round trip.
        let v: Vec<f64> = (0..33).map(|i| (i as f64 * 0.37).sin()).collect();
        let back = d.inverse(&d.forward(&v));
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
