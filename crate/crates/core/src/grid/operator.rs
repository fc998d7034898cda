//! Divergence-form stiffness matrix with lumped mass.
//!
//! The discrete operator is `L = M^{-1} K` with `K` symmetric positive
//! semidefinite and `M` the diagonal trapezoid mass. Zero-flux conditions on
//! the box boundary are natural. Isotropic fields use the five-point flux
//! form with harmonic face averages; general tensors use a corner-gradient
//! cell energy that reduces to the same five-point stencil for `σ = I`.

use super::{BoxGrid, ConductivityField, Sym2};
use crate::error::{Error, Result};
use faer::Mat;
use num_complex::Complex64;

/// Sparse symmetric stiffness in CSR form plus the lumped mass.
#[derive(Debug, Clone)]
pub struct EllipticOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    mass: Vec<f64>,
}

impl EllipticOperator {
    fn from_triplets(n: usize, mut trip: Vec<(usize, usize, f64)>, mass: Vec<f64>) -> Self {
        trip.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(trip.len());
        let mut vals: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            if last == Some((r, c)) {
                *vals.last_mut().expect("nonempty") += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
            mass,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Nonzeros of row `r` as `(column, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn entry(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn apply_k(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|r| self.row(r).map(|(c, a)| a * v[c]).sum()).collect()
    }

    /// `L v = M^{-1} K v`.
    pub fn apply_l(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.apply_k(v);
        for (o, w) in out.iter_mut().zip(&self.mass) {
            *o /= w;
        }
        out
    }

    pub fn apply_l_complex(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|r| self.row(r).map(|(c, a)| v[c] * a).sum::<Complex64>() / self.mass[r])
            .collect()
    }

    /// `v^T K v`.
    pub fn energy(&self, v: &[f64]) -> f64 {
        self.apply_k(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    pub fn frobenius(&self) -> f64 {
        self.vals.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check(&self) -> Result<()> {
        let scale = self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for r in 0..self.n {
            let mut sum = 0.0;
            for (c, v) in self.row(r) {
                sum += v;
                if (v - self.entry(c, r)).abs() > 1e-12 * scale {
                    return Err(Error::Assembly(format!("stiffness not symmetric at ({r}, {c})")));
                }
                if !v.is_finite() {
                    return Err(Error::NonFinite("stiffness".into()));
                }
            }
            if sum.abs() > 1e-10 * scale {
                return Err(Error::Assembly(format!("row {r} does not annihilate constants")));
            }
            if self.entry(r, r) < 0.0 {
                return Err(Error::Assembly(format!("negative diagonal at row {r}")));
            }
        }
        Ok(())
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Assembles `K` and `M` for the given conductivity.
pub fn assemble_elliptic(grid: &BoxGrid, sigma: &ConductivityField) -> Result<EllipticOperator> {
    let n = grid.n_nodes();
    if sigma.values().len() != n {
        return Err(Error::Shape("conductivity does not match grid".into()));
    }
    let h = grid.spacing();
    let na = grid.n_per_axis();
    let mut trip = Vec::with_capacity(9 * n);
    let edge = |trip: &mut Vec<(usize, usize, f64)>, a: usize, b: usize, w: f64| {
        trip.push((a, a, w));
        trip.push((b, b, w));
        trip.push((a, b, -w));
        trip.push((b, a, -w));
    };
    if grid.dim() == 1 {
        for i in 0..na - 1 {
            let w = harmonic(sigma.at(i).xx, sigma.at(i + 1).xx) / h;
            edge(&mut trip, i, i + 1, w);
        }
        for node in 0..n {
            trip.push((node, node, 0.0));
        }
    } else if sigma.is_scalar() {
        for j in 0..na {
            let face = if j == 0 || j + 1 == na { 0.5 } else { 1.0 };
            for i in 0..na - 1 {
                // x-edge (i, j)-(i+1, j)
                let (a, b) = (grid.index(i, j), grid.index(i + 1, j));
                edge(&mut trip, a, b, face * harmonic(sigma.at(a).xx, sigma.at(b).xx));
                // y-edge (j, i)-(j, i+1)
                let (a, b) = (grid.index(j, i), grid.index(j, i + 1));
                edge(&mut trip, a, b, face * harmonic(sigma.at(a).xx, sigma.at(b).xx));
            }
        }
    } else {
        for j in 0..na - 1 {
            for i in 0..na - 1 {
                let ids = [grid.index(i, j), grid.index(i + 1, j), grid.index(i, j + 1), grid.index(i + 1, j + 1)];
                let mut s = Sym2 { xx: 0.0, xy: 0.0, yy: 0.0 };
                for &id in &ids {
                    let v = sigma.at(id);
                    s.xx += 0.25 * v.xx;
                    s.xy += 0.25 * v.xy;
                    s.yy += 0.25 * v.yy;
                }
                // Difference rows over local nodes [00, 10, 01, 11].
                let a = [-1.0, 1.0, 0.0, 0.0];
                let b = [0.0, 0.0, -1.0, 1.0];
                let c = [-1.0, 0.0, 1.0, 0.0];
                let d = [0.0, -1.0, 0.0, 1.0];
                let corners = [(a, c), (a, d), (b, c), (b, d)];
                let mut local = [[0.0f64; 4]; 4];
                for (gx, gy) in corners {
                    for p in 0..4 {
                        for q in 0..4 {
                            local[p][q] += 0.25
                                * (s.xx * gx[p] * gx[q] + s.xy * (gx[p] * gy[q] + gy[p] * gx[q]) + s.yy * gy[p] * gy[q]);
                        }
                    }
                }
                for p in 0..4 {
                    for q in 0..4 {
                        if local[p][q] != 0.0 {
                            trip.push((ids[p], ids[q], local[p][q]));
                        }
                    }
                }
            }
        }
        for node in 0..n {
            trip.push((node, node, 0.0));
        }
    }
    let op = EllipticOperator::from_triplets(n, trip, grid.weights());
    op.check()?;
    Ok(op)
}
