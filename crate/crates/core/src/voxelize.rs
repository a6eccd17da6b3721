//! Differentiable occupancy voxelization of posed point sets.
//!
//! A point `p` maps to voxel coordinates `u = (p - l) / s`; cell `(i, j, k)`
//! has its center at `(i + 0.5, j + 0.5, k + 0.5)`. The occupancy of a cell
//! is `1 - min(delta_t, min_q |u_q - v_k|) / delta_t`, so only cells within
//! `delta_t` voxel units of some point are nonzero.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placement and resolution of a cubic `dim`³ grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Corner of cell `(0, 0, 0)` in meters.
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dim: usize,
    /// Distance threshold in voxel units.
    pub delta_t: f64,
}

pub const DEFAULT_DIM: usize = 32;
pub const DEFAULT_DELTA_T: f64 = 1.0;

impl GridSpec {
    pub fn new(origin: Point3<f64>, voxel_size: f64, dim: usize, delta_t: f64) -> Result<GridSpec> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("voxel size {voxel_size} must be positive")));
        }
        if dim < 2 {
            return Err(Error::InvalidArgument(format!("grid dim {dim} must be at least 2")));
        }
        if !(delta_t > 0.0 && delta_t.is_finite()) {
            return Err(Error::InvalidArgument(format!("delta_t {delta_t} must be positive")));
        }
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument("grid origin must be finite".into()));
        }
        Ok(GridSpec {
            origin: [origin.x, origin.y, origin.z],
            voxel_size,
            dim,
            delta_t,
        })
    }

    /// Grid of `dim` cells of size `voxel_size` centered on `center`.
    pub fn centered(center: Point3<f64>, voxel_size: f64, dim: usize, delta_t: f64) -> Result<GridSpec> {
        let half = voxel_size * dim as f64 / 2.0;
        GridSpec::new(center - Vector3::repeat(half), voxel_size, dim, delta_t)
    }

    pub fn origin_point(&self) -> Point3<f64> {
        Point3::from(self.origin)
    }

    pub fn len(&self) -> usize {
        self.dim * self.dim * self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index, x fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dim * (j + self.dim * k)
    }

    #[inline]
    pub fn unindex(&self, idx: usize) -> [usize; 3] {
        let d = self.dim;
        [idx % d, (idx / d) % d, idx / (d * d)]
    }

    #[inline]
    pub fn to_voxel(&self, p: &Point3<f64>) -> [f64; 3] {
        let s = self.voxel_size;
        [
            (p.x - self.origin[0]) / s,
            (p.y - self.origin[1]) / s,
            (p.z - self.origin[2]) / s,
        ]
    }

    /// Center of cell `idx` in meters.
    pub fn cell_center(&self, idx: usize) -> Point3<f64> {
        let [i, j, k] = self.unindex(idx);
        let s = self.voxel_size;
        Point3::new(
            self.origin[0] + (i as f64 + 0.5) * s,
            self.origin[1] + (j as f64 + 0.5) * s,
            self.origin[2] + (k as f64 + 0.5) * s,
        )
    }

    /// Cell containing a point in meters, if inside the grid.
    pub fn cell_of(&self, p: &Point3<f64>) -> Option<usize> {
        let u = self.to_voxel(p);
        let mut c = [0usize; 3];
        for a in 0..3 {
            let f = u[a].floor();
            if f < 0.0 || f >= self.dim as f64 {
                return None;
            }
            c[a] = f as usize;
        }
        Some(self.index(c[0], c[1], c[2]))
    }
}

/// Dense `dim`³ grid of occupancy values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl OccupancyGrid {
    pub fn zeros(spec: GridSpec) -> OccupancyGrid {
        OccupancyGrid {
            spec,
            values: vec![0.0; spec.len()],
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Little-endian f32 values, x fastest.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect()
    }

    pub fn from_bytes(spec: GridSpec, bytes: &[u8]) -> Result<OccupancyGrid> {
        if bytes.len() != spec.len() * 4 {
            return Err(Error::Format(format!(
                "occupancy grid payload has {} bytes, expected {}",
                bytes.len(),
                spec.len() * 4
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(OccupancyGrid { spec, values })
    }

    pub fn sidecar_json(&self) -> serde_json::Value {
        serde_json::to_value(self.spec).expect("grid spec serializes")
    }
}

/// Forward result with the per-cell nearest point kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Voxelization {
    pub grid: OccupancyGrid,
    /// Index of the unique nearest point for cells with `o > 0`, else `NONE`.
    pub argmin: Vec<u32>,
    /// `delta_k` in voxel units.
    pub distance: Vec<f64>,
}

impl Voxelization {
    pub const NONE: u32 = u32::MAX;

    /// Gradient of `sum_k upstream_k * o_k` with respect to each point, in
    /// units per meter. Cells at the threshold contribute nothing; every
    /// other cell sends its whole gradient to its argmin point.
    pub fn backward(&self, points: &[Point3<f64>], upstream: &[f64]) -> Result<Vec<Vector3<f64>>> {
        let spec = &self.grid.spec;
        if upstream.len() != spec.len() {
            return Err(Error::InvalidArgument(format!(
                "upstream has {} cells, grid has {}",
                upstream.len(),
                spec.len()
            )));
        }
        let mut grads = vec![Vector3::zeros(); points.len()];
        let scale = -1.0 / (spec.delta_t * spec.voxel_size);
        for (idx, (&g, &q)) in upstream.iter().zip(&self.argmin).enumerate() {
            if g == 0.0 || q == Self::NONE {
                continue;
            }
            let d = self.distance[idx];
            if d <= 0.0 {
                continue;
            }
            let u = spec.to_voxel(&points[q as usize]);
            let [i, j, k] = spec.unindex(idx);
            let diff = Vector3::new(
                u[0] - (i as f64 + 0.5),
                u[1] - (j as f64 + 0.5),
                u[2] - (k as f64 + 0.5),
            );
            grads[q as usize] += diff * (g * scale / d);
        }
        Ok(grads)
    }
}

#[inline]
fn cell_distance(u: &[f64; 3], i: usize, j: usize, k: usize) -> f64 {
    let dx = u[0] - (i as f64 + 0.5);
    let dy = u[1] - (j as f64 + 0.5);
    let dz = u[2] - (k as f64 + 0.5);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Candidate cells for a point along one axis: every cell whose center can
/// be closer than `delta_t`, widened by a rounding margin.
#[inline]
fn cell_range(u: f64, delta_t: f64, dim: usize) -> Option<(usize, usize)> {
    const MARGIN: f64 = 1e-9;
    let lo = (u - delta_t - 0.5 - MARGIN).ceil();
    let hi = (u + delta_t - 0.5 + MARGIN).floor();
    let lo = lo.max(0.0);
    let hi = hi.min(dim as f64 - 1.0);
    if !(lo <= hi) {
        return None;
    }
    Some((lo as usize, hi as usize))
}

/// Voxelizes `points` and records, per cell, the nearest point.
pub fn voxelize(points: &[Point3<f64>], spec: &GridSpec) -> Result<Voxelization> {
    if points.is_empty() {
        return Err(Error::Empty("point set"));
    }
    if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::InvalidArgument("non-finite point".into()));
    }
    let n = spec.len();
    let dt = spec.delta_t;
    let mut distance = vec![dt; n];
    let mut argmin = vec![Voxelization::NONE; n];
    for (q, p) in points.iter().enumerate() {
        let u = spec.to_voxel(p);
        let Some((i0, i1)) = cell_range(u[0], dt, spec.dim) else { continue };
        let Some((j0, j1)) = cell_range(u[1], dt, spec.dim) else { continue };
        let Some((k0, k1)) = cell_range(u[2], dt, spec.dim) else { continue };
        for k in k0..=k1 {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let d = cell_distance(&u, i, j, k);
                    let idx = spec.index(i, j, k);
                    // Strict comparison keeps the lowest index on ties.
                    if d < distance[idx] {
                        distance[idx] = d;
                        argmin[idx] = q as u32;
                    }
                }
            }
        }
    }
    let values = distance.iter().map(|&d| 1.0 - d / dt).collect();
    Ok(Voxelization {
        grid: OccupancyGrid { spec: *spec, values },
        argmin,
        distance,
    })
}

pub fn voxelize_occupancy(points: &[Point3<f64>], spec: &GridSpec) -> Result<OccupancyGrid> {
    voxelize(points, spec).map(|v| v.grid)
}

pub fn voxelize_occupancy_backward(
    points: &[Point3<f64>],
    spec: &GridSpec,
    upstream: &[f64],
) -> Result<Vec<Vector3<f64>>> {
    voxelize(points, spec)?.backward(points, upstream)
}

/// Distance, in voxel units, from `points` to the nearest kink of the
/// voxelization: a point-cell distance equal to `delta_t`, or two points
/// tied for the nearest of a cell that is within `delta_t`. Values are
/// capped at one voxel. Gradients are exact only when this is well above
/// the displacement of any finite-difference step.
pub fn degeneracy_margin(points: &[Point3<f64>], spec: &GridSpec) -> f64 {
    const CAP: f64 = 1.0;
    let dt = spec.delta_t;
    let mut margin = CAP;
    let mut nearest = vec![[f64::INFINITY; 2]; spec.len()];
    for p in points {
        let u = spec.to_voxel(p);
        let Some((i0, i1)) = cell_range(u[0], dt + CAP, spec.dim) else { continue };
        let Some((j0, j1)) = cell_range(u[1], dt + CAP, spec.dim) else { continue };
        let Some((k0, k1)) = cell_range(u[2], dt + CAP, spec.dim) else { continue };
        for k in k0..=k1 {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let d = cell_distance(&u, i, j, k);
                    margin = margin.min((d - dt).abs());
                    let best = &mut nearest[spec.index(i, j, k)];
                    if d < best[0] {
                        best[1] = best[0];
                        best[0] = d;
                    } else if d < best[1] {
                        best[1] = d;
                    }
                }
            }
        }
    }
    for [d1, d2] in nearest {
        if d1 < dt {
            margin = margin.min(d2 - d1);
        }
    }
    margin
}

/// Smallest distance, in voxel units, from a point to the center of a grid
/// cell. The cell distance is not differentiable at the center, and finite
/// differences lose accuracy within a few steps of it.
pub fn center_margin(points: &[Point3<f64>], spec: &GridSpec) -> f64 {
    let top = spec.dim as f64 - 1.0;
    points
        .iter()
        .map(|p| {
            let u = spec.to_voxel(p);
            let c: Vec<f64> = u.iter().map(|x| (x - 0.5).round().clamp(0.0, top) + 0.5).collect();
            ((u[0] - c[0]).powi(2) + (u[1] - c[1]).powi(2) + (u[2] - c[2]).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}
