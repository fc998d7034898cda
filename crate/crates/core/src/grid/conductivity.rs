//! Symmetric uniformly elliptic conductivities sampled at grid nodes.

use super::{BoxGrid, Region};
use crate::error::{Error, Result};

/// Symmetric 2x2 matrix. One-dimensional fields use `xx` only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 { xx: 1.0, xy: 0.0, yy: 1.0 };

    pub fn scalar(g: f64) -> Self {
        Sym2 { xx: g, xy: 0.0, yy: g }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let m = 0.5 * (self.xx + self.yy);
        let d = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (m - d, m + d)
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    pub fn sub(&self, o: &Sym2) -> Sym2 {
        Sym2 {
            xx: self.xx - o.xx,
            xy: self.xy - o.xy,
            yy: self.yy - o.yy,
        }
    }

    pub fn frobenius(&self) -> f64 {
        (self.xx * self.xx + 2.0 * self.xy * self.xy + self.yy * self.yy).sqrt()
    }

    pub fn is_scalar(&self) -> bool {
        self.xy == 0.0 && self.xx == self.yy
    }
}

/// Named conductivity families.
#[derive(Debug, Clone, PartialEq)]
pub enum ConductivityFamily {
    Identity,
    /// `(1 + a exp(-|x - c|^2 / w) * taper(x)) I`, the taper falling
    /// smoothly to zero over a band of width `band` inside the boundary.
    ScalarBump {
        amplitude: f64,
        width: f64,
        center: [f64; 2],
        band: f64,
    },
    /// `diag(1 + b(x), 1)` with `b` the tapered bump above.
    Anisotropic {
        amplitude: f64,
        width: f64,
        center: [f64; 2],
        band: f64,
    },
}

impl ConductivityFamily {
    /// Bump of the given amplitude centered at the origin, width 0.1.
    pub fn scalar_bump(amplitude: f64) -> Self {
        ConductivityFamily::ScalarBump {
            amplitude,
            width: 0.1,
            center: [0.0, 0.0],
            band: 0.2,
        }
    }

    pub fn anisotropic(amplitude: f64) -> Self {
        ConductivityFamily::Anisotropic {
            amplitude,
            width: 0.1,
            center: [0.0, 0.0],
            band: 0.2,
        }
    }
}

fn smootherstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (x * (6.0 * x - 15.0) + 10.0)
}

fn tapered_bump(x: [f64; 2], dim: usize, omega: &Region, amplitude: f64, width: f64, center: [f64; 2], band: f64) -> f64 {
    let d = omega.signed_distance(x, dim);
    if d > 0.0 {
        return 0.0;
    }
    let r2 = if dim == 1 {
        (x[0] - center[0]).powi(2)
    } else {
        (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)
    };
    amplitude * (-r2 / width).exp() * smootherstep(-d / band)
}

/// Conductivity values at every node with ellipticity and Lipschitz bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityField {
    dim: usize,
    values: Vec<Sym2>,
    /// Ellipticity constant: every eigenvalue lies in `[c0, 1 / c0]`.
    pub c0: f64,
    /// Lipschitz estimate from nodal differences across edges.
    pub lipschitz: f64,
}

impl ConductivityField {
    /// Validates nodal values: symmetric by type, uniformly elliptic,
    /// finite, and the identity outside the closed interior region.
    pub fn from_values(grid: &BoxGrid, values: Vec<Sym2>, omega: &Region) -> Result<Self> {
        let dim = grid.dim();
        if values.len() != grid.n_nodes() {
            return Err(Error::Shape(format!(
                "{} conductivity values for {} nodes",
                values.len(),
                grid.n_nodes()
            )));
        }
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for (node, v) in values.iter().enumerate() {
            if !(v.xx.is_finite() && v.xy.is_finite() && v.yy.is_finite()) {
                return Err(Error::Conductivity(format!("non-finite value at node {node}")));
            }
            let (a, b) = if dim == 1 { (v.xx, v.xx) } else { v.eigenvalues() };
            if a <= 0.0 {
                return Err(Error::Conductivity(format!(
                    "not positive definite at node {node} (eigenvalue {a:.3e})"
                )));
            }
            lo = lo.min(a);
            hi = hi.max(b);
            if !omega.contains(grid.coord(node), dim) {
                let diff = if dim == 1 { (v.xx - 1.0).abs() } else { v.sub(&Sym2::IDENTITY).frobenius() };
                if diff > 1e-12 {
                    return Err(Error::Conductivity(format!(
                        "not the identity outside the interior region at node {node}"
                    )));
                }
            }
        }
        let c0 = 0.99 * lo.min(1.0 / hi).min(1.0);
        let h = grid.spacing();
        let mut lip = 0.0f64;
        for node in 0..values.len() {
            for m in grid.neighbors(node) {
                let dist = {
                    let (a, b) = (grid.coord(node), grid.coord(m));
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
                };
                lip = lip.max(values[node].sub(&values[m]).frobenius() / dist.max(h));
            }
        }
        Ok(Self {
            dim,
            values,
            c0,
            lipschitz: lip,
        })
    }

    /// Validates full 2x2 matrices, rejecting asymmetric input.
    pub fn from_matrices(grid: &BoxGrid, mats: &[[[f64; 2]; 2]], omega: &Region) -> Result<Self> {
        let mut vals = Vec::with_capacity(mats.len());
        for (node, m) in mats.iter().enumerate() {
            let scale = m[0][1].abs().max(m[1][0].abs()).max(1.0);
            if (m[0][1] - m[1][0]).abs() > 1e-12 * scale {
                return Err(Error::Conductivity(format!("asymmetric tensor at node {node}")));
            }
            vals.push(Sym2 {
                xx: m[0][0],
                xy: 0.5 * (m[0][1] + m[1][0]),
                yy: m[1][1],
            });
        }
        Self::from_values(grid, vals, omega)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[Sym2] {
        &self.values
    }

    pub fn at(&self, node: usize) -> Sym2 {
        self.values[node]
    }

    pub fn is_scalar(&self) -> bool {
        self.dim == 1 || self.values.iter().all(Sym2::is_scalar)
    }

    /// `(sum_x w_x |a(x) - b(x)|_F^2)^(1/2)` over nodes with `keep(node)`.
    pub fn l2_distance(&self, other: &ConductivityField, weights: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
        let mut acc = 0.0;
        for node in 0..self.values.len() {
            if keep(node) {
                let d = self.values[node].sub(&other.values[node]);
                let f2 = if self.dim == 1 { d.xx * d.xx } else { d.frobenius().powi(2) };
                acc += weights[node] * f2;
            }
        }
        acc.sqrt()
    }
}

/// Samples a named family on the grid.
impl ConductivityFamily {
    /// Value of the family at a point.
    pub fn eval(&self, x: [f64; 2], dim: usize, omega: &Region) -> Sym2 {
        match *self {
            ConductivityFamily::Identity => Sym2::IDENTITY,
            ConductivityFamily::ScalarBump {
                amplitude,
                width,
                center,
                band,
            } => Sym2::scalar(1.0 + tapered_bump(x, dim, omega, amplitude, width, center, band)),
            ConductivityFamily::Anisotropic {
                amplitude,
                width,
                center,
                band,
            } => Sym2 {
                xx: 1.0 + tapered_bump(x, dim, omega, amplitude, width, center, band),
                xy: 0.0,
                yy: 1.0,
            },
        }
    }
}

pub fn build_conductivity(grid: &BoxGrid, family: &ConductivityFamily, omega: &Region) -> Result<ConductivityField> {
    let dim = grid.dim();
    let values = (0..grid.n_nodes()).map(|node| family.eval(grid.coord(node), dim, omega)).collect();
    ConductivityField::from_values(grid, values, omega)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_eigenvalues_in_range() {
        let g = BoxGrid::new(2, 1.5, 33).unwrap();
        let om = Region::ball([0.0, 0.0], 0.6);
        let c = build_conductivity(&g, &ConductivityFamily::scalar_bump(0.5), &om).unwrap();
        for v in c.values() {
            let (a, b) = v.eigenvalues();
            assert!(a >= 1.0 - 1e-15 && b <= 1.5 + 1e-15);
        }
        assert!(c.c0 > 0.0 && c.c0 < 1.0);
        assert!(c.lipschitz.is_finite() && c.lipschitz > 0.0);
    }

    #[test]
    fn identity_has_unit_bounds() {
        let g = BoxGrid::new(1, 2.0, 16).unwrap();
        let c = build_conductivity(&g, &ConductivityFamily::Identity, &Region::ball([0.0, 0.0], 0.5)).unwrap();
        assert!(c.c0 > 0.9 && c.c0 < 1.0);
        assert_eq!(c.lipschitz, 0.0);
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let g = BoxGrid::new(2, 1.0, 9).unwrap();
        let om = Region::ball([0.0, 0.0], 0.4);
        let mut m = vec![[[1.0, 0.0], [0.0, 1.0]]; g.n_nodes()];
        m[40] = [[1.0, 0.3], [0.0, 1.0]];
        assert!(ConductivityField::from_matrices(&g, &m, &om).is_err());
        m[40] = [[1.0, 2.0], [2.0, 1.0]];
        assert!(ConductivityField::from_matrices(&g, &m, &om).is_err());
        m[40] = [[1.0, 0.0], [0.0, 1.0]];
        m[0] = [[2.0, 0.0], [0.0, 1.0]];
        assert!(ConductivityField::from_matrices(&g, &m, &om).is_err());
    }
}
