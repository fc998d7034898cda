//! Geometric regions and their node masks.

use super::BoxGrid;
use crate::error::{Error, Result};

const EPS: f64 = 1e-12;

/// Closed region of the plane (or of the line, using the first coordinate).
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Ball { center: [f64; 2], radius: f64 },
    Box { lo: [f64; 2], hi: [f64; 2] },
    /// `r_in <= |x - c| <= r_out` and polar angle in `[theta0, theta1]`.
    AnnularSector {
        center: [f64; 2],
        r_in: f64,
        r_out: f64,
        theta0: f64,
        theta1: f64,
    },
}

impl Region {
    pub fn ball(center: [f64; 2], radius: f64) -> Self {
        Region::Ball { center, radius }
    }

    /// Signed distance, negative inside. Exact for balls and boxes, a lower
    /// bound in magnitude for sectors.
    pub fn signed_distance(&self, x: [f64; 2], dim: usize) -> f64 {
        match *self {
            Region::Ball { center, radius } => {
                let d = if dim == 1 {
                    (x[0] - center[0]).abs()
                } else {
                    ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt()
                };
                d - radius
            }
            Region::Box { lo, hi } => {
                let axes = if dim == 1 { 1 } else { 2 };
                let mut outside = 0.0f64;
                let mut inside = f64::NEG_INFINITY;
                for a in 0..axes {
                    let c = 0.5 * (lo[a] + hi[a]);
                    let half = 0.5 * (hi[a] - lo[a]);
                    let q = (x[a] - c).abs() - half;
                    outside += q.max(0.0).powi(2);
                    inside = inside.max(q);
                }
                if outside > 0.0 {
                    outside.sqrt()
                } else {
                    inside
                }
            }
            Region::AnnularSector {
                center,
                r_in,
                r_out,
                theta0,
                theta1,
            } => {
                let dx = x[0] - center[0];
                let dy = if dim == 1 { 0.0 } else { x[1] - center[1] };
                let r = (dx * dx + dy * dy).sqrt();
                let radial = (r_in - r).max(r - r_out);
                let theta = dy.atan2(dx);
                let ang = (theta0 - theta).max(theta - theta1) * r.max(EPS);
                radial.max(ang)
            }
        }
    }

    pub fn contains(&self, x: [f64; 2], dim: usize) -> bool {
        self.signed_distance(x, dim) <= EPS
    }

    /// Outward unit normal associated with a point near the boundary.
    pub fn outward_normal(&self, x: [f64; 2], dim: usize) -> [f64; 2] {
        if dim == 1 {
            let c = match *self {
                Region::Ball { center, .. } | Region::AnnularSector { center, .. } => center[0],
                Region::Box { lo, hi } => 0.5 * (lo[0] + hi[0]),
            };
            return [if x[0] >= c { 1.0 } else { -1.0 }, 0.0];
        }
        match *self {
            Region::Ball { center, .. } => unit([x[0] - center[0], x[1] - center[1]]),
            Region::Box { lo, hi } => {
                let gaps = [x[0] - lo[0], hi[0] - x[0], x[1] - lo[1], hi[1] - x[1]];
                let m = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
                let mut n = [0.0, 0.0];
                let tie = 1e-9;
                if gaps[0] <= m + tie {
                    n[0] -= 1.0;
                }
                if gaps[1] <= m + tie {
                    n[0] += 1.0;
                }
                if gaps[2] <= m + tie {
                    n[1] -= 1.0;
                }
                if gaps[3] <= m + tie {
                    n[1] += 1.0;
                }
                unit(n)
            }
            Region::AnnularSector { center, r_in, r_out, .. } => {
                let v = [x[0] - center[0], x[1] - center[1]];
                let r = (v[0] * v[0] + v[1] * v[1]).sqrt();
                let radial = unit(v);
                if (r - r_out).abs() <= (r - r_in).abs() {
                    radial
                } else {
                    [-radial[0], -radial[1]]
                }
            }
        }
    }
}

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n < EPS {
        [1.0, 0.0]
    } else {
        [v[0] / n, v[1] / n]
    }
}

/// Node masks for the interior region, the exterior source and probe sets,
/// and the discrete boundary band with outward normals.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    /// Nodes of the closed interior region.
    pub omega: Vec<bool>,
    /// Nodes of the exterior region carrying the data.
    pub source: Vec<bool>,
    /// Nodes of the exterior measurement set, disjoint from the source.
    pub probe: Vec<bool>,
    /// Interior nodes with a neighbor outside the interior region.
    pub sigma: Vec<usize>,
    /// Outward unit normal at each band node.
    pub normals: Vec<[f64; 2]>,
}

impl RegionMasks {
    pub fn exterior(&self, node: usize) -> bool {
        !self.omega[node]
    }

    /// Source or probe node.
    pub fn measured(&self, node: usize) -> bool {
        self.source[node] || self.probe[node]
    }

    pub fn omega_nodes(&self) -> Vec<usize> {
        (0..self.omega.len()).filter(|&i| self.omega[i]).collect()
    }

    pub fn count_omega(&self) -> usize {
        self.omega.iter().filter(|&&b| b).count()
    }
}

/// Builds node masks. The interior region must keep a margin of `4h` from
/// the box boundary, exterior sets must not touch it, and no node may lie in
/// two of the sets.
pub fn region_masks(grid: &BoxGrid, omega: &Region, source: &Region, probe: Option<&Region>) -> Result<RegionMasks> {
    let dim = grid.dim();
    let n = grid.n_nodes();
    let h = grid.spacing();
    let mut om = vec![false; n];
    let mut src = vec![false; n];
    let mut prb = vec![false; n];
    for node in 0..n {
        let x = grid.coord(node);
        om[node] = omega.contains(x, dim);
        src[node] = source.contains(x, dim);
        prb[node] = probe.is_some_and(|p| p.contains(x, dim));
        if om[node] && grid.boundary_distance(node) < 4.0 * h - 1e-9 * h {
            return Err(Error::Geometry(format!(
                "interior region reaches within 4h of the box boundary at {x:?}"
            )));
        }
        if (src[node] || prb[node]) && grid.boundary_distance(node) < h - 1e-9 * h {
            return Err(Error::Geometry(format!("exterior set touches the box boundary at {x:?}")));
        }
        if om[node] && (src[node] || prb[node]) {
            return Err(Error::Geometry(format!("exterior set meets the interior region at {x:?}")));
        }
        if src[node] && prb[node] {
            return Err(Error::Geometry(format!("source and probe sets overlap at {x:?}")));
        }
    }
    if !om.iter().any(|&b| b) {
        return Err(Error::Geometry("interior region contains no nodes".into()));
    }
    if !src.iter().any(|&b| b) {
        return Err(Error::Geometry("source region contains no nodes".into()));
    }
    let mut sigma = Vec::new();
    let mut normals = Vec::new();
    for node in 0..n {
        if om[node] && grid.neighbors(node).iter().any(|&m| !om[m]) {
            sigma.push(node);
            normals.push(omega.outward_normal(grid.coord(node), dim));
        }
    }
    Ok(RegionMasks {
        omega: om,
        source: src,
        probe: prb,
        sigma,
        normals,
    })
}
