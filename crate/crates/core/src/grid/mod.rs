//! Box grids, time grids, conductivities, region masks and the discrete
//! divergence-form operator with its generalized eigendecomposition.

mod conductivity;
mod operator;
mod region;
mod spectral;

pub use conductivity::{build_conductivity, ConductivityFamily, ConductivityField, Sym2};
pub use operator::{assemble_elliptic, EllipticOperator};
pub use region::{region_masks, Region, RegionMasks};
pub use spectral::{spectral_decompose, SpectralDecomposition, SubsetBasis};

use crate::error::{invalid, Error, Result};

/// Vertex-centered tensor grid on `[-X, X]^n`, `n` in {1, 2}.
///
/// Node `(i, j)` sits at `(-X + i h, -X + j h)` with `h = 2X / (N - 1)` and
/// has flat index `i + N j`. In one dimension the second coordinate is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxGrid {
    dim: usize,
    half_width: f64,
    n: usize,
    h: f64,
}

impl BoxGrid {
    pub fn new(dim: usize, half_width: f64, n: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(invalid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(invalid("box half-width must be positive"));
        }
        if n < 8 {
            return Err(invalid(format!("N_x = {n} is below the minimum of 8")));
        }
        Ok(Self {
            dim,
            half_width,
            n,
            h: 2.0 * half_width / (n - 1) as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n_per_axis(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn n_nodes(&self) -> usize {
        if self.dim == 1 {
            self.n
        } else {
            self.n * self.n
        }
    }

    pub fn axis(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.axis_coord(i)).collect()
    }

    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.h
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.n * j
    }

    pub fn ij(&self, node: usize) -> (usize, usize) {
        (node % self.n, node / self.n)
    }

    pub fn coord(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.ij(node);
        if self.dim == 1 {
            [self.axis_coord(i), 0.0]
        } else {
            [self.axis_coord(i), self.axis_coord(j)]
        }
    }

    /// Trapezoid weight of axis index `i`.
    pub fn axis_weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n {
            0.5 * self.h
        } else {
            self.h
        }
    }

    /// Lumped mass weights (tensor trapezoid rule).
    pub fn weights(&self) -> Vec<f64> {
        (0..self.n_nodes())
            .map(|node| {
                let (i, j) = self.ij(node);
                if self.dim == 1 {
                    self.axis_weight(i)
                } else {
                    self.axis_weight(i) * self.axis_weight(j)
                }
            })
            .collect()
    }

    /// Distance from node to the box boundary.
    pub fn boundary_distance(&self, node: usize) -> f64 {
        let x = self.coord(node);
        let m = if self.dim == 1 { x[0].abs() } else { x[0].abs().max(x[1].abs()) };
        self.half_width - m
    }

    /// Nodes sharing an edge or a cell corner with `node`.
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        let (i, j) = self.ij(node);
        let (i, j) = (i as isize, j as isize);
        let n = self.n as isize;
        let mut out = Vec::with_capacity(8);
        if self.dim == 1 {
            for di in [-1, 1] {
                let a = i + di;
                if (0..n).contains(&a) {
                    out.push(a as usize);
                }
            }
        } else {
            for dj in -1..=1 {
                for di in -1..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (a, b) = (i + di, j + dj);
                    if (0..n).contains(&a) && (0..n).contains(&b) {
                        out.push(self.index(a as usize, b as usize));
                    }
                }
            }
        }
        out
    }
}

/// Uniform time samples `t_i = -T + (i + 1) dt`, `i = 0..N_t`, ending at
/// `T_end`, together with a zero-padded periodic window of length `N_pad`
/// used by the Fourier route.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    end: f64,
    dt: f64,
    n_steps: usize,
    pad_len: usize,
}

/// Default ratio between the padded window and the sampled interval.
pub const DEFAULT_PAD_FACTOR: usize = 8;

impl TimeGrid {
    pub fn new(horizon: f64, end: f64, dt: f64) -> Result<Self> {
        Self::with_pad_factor(horizon, end, dt, DEFAULT_PAD_FACTOR)
    }

    pub fn with_pad_factor(horizon: f64, end: f64, dt: f64, pad_factor: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::TimeGrid("horizon T must be positive".into()));
        }
        if !(end.is_finite() && end >= horizon) {
            return Err(Error::TimeGrid(format!("T_end = {end} must be at least T = {horizon}")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::TimeGrid("time step must be positive".into()));
        }
        let steps = (end + horizon) / dt;
        let n_steps = steps.round() as usize;
        if n_steps < 4 || (steps - n_steps as f64).abs() > 1e-8 * steps.max(1.0) {
            return Err(Error::TimeGrid(format!(
                "(T_end + T) / dt = {steps} is not an integer of at least 4"
            )));
        }
        if pad_factor < 4 {
            return Err(Error::TimeGrid("pad factor below 4".into()));
        }
        // One extra slot holds the zero sample at t = -T.
        let pad_len = ((n_steps + 1) * pad_factor).next_power_of_two();
        Ok(Self {
            horizon,
            end,
            dt,
            n_steps,
            pad_len,
        })
    }

    /// Grid with `n_steps` samples on `(-T, T_end]`.
    pub fn from_steps(horizon: f64, end: f64, n_steps: usize) -> Result<Self> {
        Self::new(horizon, end, (end + horizon) / n_steps as f64)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn pad_len(&self) -> usize {
        self.pad_len
    }

    pub fn time(&self, i: usize) -> f64 {
        -self.horizon + (i + 1) as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_steps).map(|i| self.time(i)).collect()
    }

    /// Number of samples with `t_i <= T`.
    pub fn n_horizon(&self) -> usize {
        (0..self.n_steps)
            .filter(|&i| self.time(i) <= self.horizon + 1e-9 * self.dt)
            .count()
    }

    /// Angular frequency of padded DFT index `m`: `2 pi m' / (N_pad dt)`
    /// with `m'` the signed index.
    pub fn frequency(&self, m: usize) -> f64 {
        let n = self.pad_len as isize;
        let m = m as isize;
        let signed = if m <= n / 2 { m } else { m - n };
        2.0 * std::f64::consts::PI * signed as f64 / (n as f64 * self.dt)
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.pad_len).map(|m| self.frequency(m)).collect()
    }

    /// Same horizon and end with the step halved.
    pub fn refined(&self) -> Result<Self> {
        let factor = self.pad_len / (self.n_steps + 1);
        Self::with_pad_factor(self.horizon, self.end, 0.5 * self.dt, factor.max(4))
    }
}

/// Spatial and temporal discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub space: BoxGrid,
    pub time: TimeGrid,
}

/// Builds the box grid on `[-x_max, x_max]^dim` with `n_x` nodes per axis
/// and the time grid on `(-horizon, t_end]` with step `dt`.
pub fn build_grid(dim: usize, x_max: f64, n_x: usize, horizon: f64, t_end: f64, dt: f64) -> Result<Grid> {
    Ok(Grid {
        space: BoxGrid::new(dim, x_max, n_x)?,
        time: TimeGrid::new(horizon, t_end, dt)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_integrate_constants() {
        let g = BoxGrid::new(2, 1.5, 17).unwrap();
        let total: f64 = g.weights().iter().sum();
        assert!((total - 9.0).abs() < 1e-12);
        let g1 = BoxGrid::new(1, 2.0, 9).unwrap();
        assert!((g1.weights().iter().sum::<f64>() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(BoxGrid::new(3, 1.0, 16).is_err());
        assert!(BoxGrid::new(1, 1.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0.5, 0.1).is_err());
        assert!(TimeGrid::new(1.0, 1.0, 0.3).is_err());
    }

    #[test]
    fn time_samples_and_frequencies() {
        let t = TimeGrid::from_steps(1.0, 1.0, 16).unwrap();
        assert!((t.time(t.n_steps() - 1) - 1.0).abs() < 1e-14);
        assert_eq!(t.n_horizon(), 16);
        assert!(t.pad_len() >= 4 * 16);
        let f = t.frequencies();
        assert_eq!(f[0], 0.0);
        assert!((f[1] * t.pad_len() as f64 * t.dt() - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!(f[t.pad_len() - 1] < 0.0);
    }
}
