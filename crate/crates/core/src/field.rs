//! Space-time sample arrays.
//!
//! Samples are stored time-major: entry `(i, node)` is the value at
//! `t_i = -T + (i + 1) dt`. The sample at `t = -T` is zero for every field
//! built here and is not stored.

use crate::error::{Error, Result};
use crate::grid::{BoxGrid, TimeGrid};
use num_complex::Complex64;

/// Complex samples over `n_t` time levels and `n_nodes` spatial nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    n_t: usize,
    n_nodes: usize,
    data: Vec<Complex64>,
}

impl SpaceTimeField {
    pub fn zeros(n_t: usize, n_nodes: usize) -> Self {
        Self {
            n_t,
            n_nodes,
            data: vec![Complex64::new(0.0, 0.0); n_t * n_nodes],
        }
    }

    pub fn from_data(n_t: usize, n_nodes: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != n_t * n_nodes {
            return Err(Error::Shape(format!(
                "expected {} samples, got {}",
                n_t * n_nodes,
                data.len()
            )));
        }
        Ok(Self { n_t, n_nodes, data })
    }

    /// Samples `f(t, x)` at every time level and node.
    pub fn from_fn(
        time: &TimeGrid,
        grid: &BoxGrid,
        mut f: impl FnMut(f64, [f64; 2]) -> Complex64,
    ) -> Self {
        let n_t = time.n_steps();
        let n = grid.n_nodes();
        let mut data = Vec::with_capacity(n_t * n);
        for i in 0..n_t {
            let t = time.time(i);
            for node in 0..n {
                data.push(f(t, grid.coord(node)));
            }
        }
        Self { n_t, n_nodes: n, data }
    }

    pub fn from_real_fn(time: &TimeGrid, grid: &BoxGrid, mut f: impl FnMut(f64, [f64; 2]) -> f64) -> Self {
        Self::from_fn(time, grid, |t, x| Complex64::new(f(t, x), 0.0))
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, i: usize, node: usize) -> Complex64 {
        self.data[i * self.n_nodes + node]
    }

    pub fn set(&mut self, i: usize, node: usize, v: Complex64) {
        self.data[i * self.n_nodes + node] = v;
    }

    pub fn slice(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    pub fn slice_mut(&mut self, i: usize) -> &mut [Complex64] {
        &mut self.data[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    /// Largest imaginary part in magnitude.
    pub fn max_imag(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.im.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.n_t != other.n_t || self.n_nodes != other.n_nodes {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.n_t, self.n_nodes, other.n_t, other.n_nodes
            )));
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.data.len(), other.data.len());
        Self {
            n_t: self.n_t,
            n_nodes: self.n_nodes,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.data.len(), other.data.len());
        Self {
            n_t: self.n_t,
            n_nodes: self.n_nodes,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn scale(&mut self, a: f64) {
        for z in &mut self.data {
            *z *= a;
        }
    }

    /// Discrete `L^2` norm with lumped spatial weights, over time levels
    /// `i` with `keep_t(i)` and nodes with `keep_x(node)`.
    pub fn norm_where(
        &self,
        dt: f64,
        weights: &[f64],
        keep_t: impl Fn(usize) -> bool,
        keep_x: impl Fn(usize) -> bool,
    ) -> f64 {
        let mut acc = 0.0;
        for i in (0..self.n_t).filter(|&i| keep_t(i)) {
            let row = self.slice(i);
            for (node, z) in row.iter().enumerate() {
                if keep_x(node) {
                    acc += weights[node] * z.norm_sqr();
                }
            }
        }
        (acc * dt).sqrt()
    }

    pub fn norm(&self, dt: f64, weights: &[f64]) -> f64 {
        self.norm_where(dt, weights, |_| true, |_| true)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Keeps the first `n_t` time levels.
    pub fn truncate_time(&self, n_t: usize) -> Self {
        let n_t = n_t.min(self.n_t);
        Self {
            n_t,
            n_nodes: self.n_nodes,
            data: self.data[..n_t * self.n_nodes].to_vec(),
        }
    }

    /// Zeroes every node where `keep(node)` is false.
    pub fn masked(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut out = self.clone();
        for i in 0..self.n_t {
            for (node, z) in out.slice_mut(i).iter_mut().enumerate() {
                if !keep(node) {
                    *z = Complex64::new(0.0, 0.0);
                }
            }
        }
        out
    }
}

/// Modal coefficients `c_k(t_i)`, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalField {
    pub n_t: usize,
    pub n_modes: usize,
    pub data: Vec<Complex64>,
}

impl ModalField {
    pub fn zeros(n_t: usize, n_modes: usize) -> Self {
        Self {
            n_t,
            n_modes,
            data: vec![Complex64::new(0.0, 0.0); n_t * n_modes],
        }
    }

    pub fn get(&self, i: usize, k: usize) -> Complex64 {
        self.data[i * self.n_modes + k]
    }

    pub fn set(&mut self, i: usize, k: usize, v: Complex64) {
        self.data[i * self.n_modes + k] = v;
    }

    /// Time series of mode `k`.
    pub fn mode_series(&self, k: usize) -> Vec<Complex64> {
        (0..self.n_t).map(|i| self.get(i, k)).collect()
    }

    pub fn set_mode_series(&mut self, k: usize, series: &[Complex64]) {
        for (i, v) in series.iter().enumerate() {
            self.set(i, k, *v);
        }
    }
}
