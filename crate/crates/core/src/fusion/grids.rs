//! Four-state surrounding grid of a target object.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::map::{Occupancy, SceneMap};
use crate::error::{Error, Result};
use crate::geometry::ObjectModel;
use crate::voxelize::{GridSpec, DEFAULT_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum CellState {
    /// Occupied by the target's own reconstruction.
    SelfOccupied = 0,
    /// Occupied by another instance or the background.
    Other = 1,
    Free = 2,
    Unknown = 3,
}

/// Cell-wise classification around one target. Storing one state per cell
/// makes the four binary grids disjoint and covering by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SurroundGrids {
    pub target_id: u32,
    pub origin: Point3<f64>,
    pub voxel_size: f64,
    pub dim: usize,
    pub states: Vec<CellState>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SurroundSidecar {
    pub target_id: u32,
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dim: usize,
}

impl SurroundGrids {
    pub fn new(target_id: u32, origin: Point3<f64>, voxel_size: f64, dim: usize, states: Vec<CellState>) -> Result<Self> {
        if states.len() != dim * dim * dim {
            return Err(Error::InvalidArgument(format!(
                "{} states for a {dim}^3 grid",
                states.len()
            )));
        }
        // Validates the geometry.
        GridSpec::new(origin, voxel_size, dim, 1.0)?;
        Ok(Self {
            target_id,
            origin,
            voxel_size,
            dim,
            states,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn grid_spec(&self, delta_t: f64) -> GridSpec {
        GridSpec::new(self.origin, self.voxel_size, self.dim, delta_t).expect("validated at construction")
    }

    pub fn mask(&self, state: CellState) -> Vec<bool> {
        self.states.iter().map(|s| *s == state).collect()
    }

    pub fn count(&self, state: CellState) -> usize {
        self.states.iter().filter(|s| **s == state).count()
    }

    /// `g_other ∪ g_free` as 0/1 values.
    pub fn impenetrable(&self) -> Vec<f64> {
        self.states
            .iter()
            .map(|s| matches!(s, CellState::Other | CellState::Free) as u8 as f64)
            .collect()
    }

    pub fn self_values(&self) -> Vec<f64> {
        self.states
            .iter()
            .map(|s| (*s == CellState::SelfOccupied) as u8 as f64)
            .collect()
    }

    /// Four LSB-first bitmasks (self, other, free, unknown), x fastest.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.states.len();
        let stride = n.div_ceil(8);
        let mut out = vec![0u8; 4 * stride];
        for (i, s) in self.states.iter().enumerate() {
            out[*s as usize * stride + i / 8] |= 1 << (i % 8);
        }
        out
    }

    pub fn sidecar(&self) -> SurroundSidecar {
        SurroundSidecar {
            target_id: self.target_id,
            origin: [self.origin.x, self.origin.y, self.origin.z],
            voxel_size: self.voxel_size,
            dim: self.dim,
        }
    }

    pub fn from_bytes(meta: &SurroundSidecar, bytes: &[u8]) -> Result<Self> {
        let n = meta.dim * meta.dim * meta.dim;
        let stride = n.div_ceil(8);
        if bytes.len() != 4 * stride {
            return Err(Error::Format(format!(
                "surround grid payload has {} bytes, expected {}",
                bytes.len(),
                4 * stride
            )));
        }
        let all = [CellState::SelfOccupied, CellState::Other, CellState::Free, CellState::Unknown];
        let mut states = Vec::with_capacity(n);
        for i in 0..n {
            let set: Vec<CellState> = all
                .iter()
                .filter(|s| bytes[**s as usize * stride + i / 8] & (1 << (i % 8)) != 0)
                .copied()
                .collect();
            if set.len() != 1 {
                return Err(Error::Format(format!("cell {i} is in {} grids", set.len())));
            }
            states.push(set[0]);
        }
        SurroundGrids::new(meta.target_id, Point3::from(meta.origin), meta.voxel_size, meta.dim, states)
    }
}

/// Extracts the 32³ surrounding grid of `target_id`, centered on the
/// centroid of its occupied leaves with voxel size `diagonal / 32`.
pub fn extract_grids(map: &SceneMap, target_id: u32, model: &ObjectModel) -> Result<SurroundGrids> {
    extract_grids_with_dim(map, target_id, model.diagonal, DEFAULT_DIM)
}

/// Cell classification, priority self > other > free > unknown. A cell is
/// occupied if an occupied leaf has its center inside the cell or if the
/// leaf under the cell center is occupied; free if the leaf under the cell
/// center is free.
pub fn extract_grids_with_dim(map: &SceneMap, target_id: u32, diagonal: f64, dim: usize) -> Result<SurroundGrids> {
    let own = map.occupied_leaves(target_id);
    if own.is_empty() {
        return Err(Error::EmptyTarget(target_id));
    }
    let mut sum = Vector3::zeros();
    for k in &own {
        sum += map.leaf_center(k).coords;
    }
    let centroid = Point3::from(sum / own.len() as f64);
    let voxel_size = diagonal / dim as f64;
    let spec = GridSpec::centered(centroid, voxel_size, dim, 1.0)?;

    let mut self_mark = vec![false; spec.len()];
    let mut other_mark = vec![false; spec.len()];
    for (key, owner) in map.owned_leaves() {
        if let Some(cell) = spec.cell_of(&map.leaf_center(&key)) {
            if owner == target_id {
                self_mark[cell] = true;
            } else {
                other_mark[cell] = true;
            }
        }
    }
    let states = (0..spec.len())
        .map(|idx| {
            let center = map.query_occupancy(&spec.cell_center(idx));
            if self_mark[idx] || center == Occupancy::Occupied(target_id) {
                CellState::SelfOccupied
            } else if other_mark[idx] || matches!(center, Occupancy::Occupied(_)) {
                CellState::Other
            } else if center == Occupancy::Free {
                CellState::Free
            } else {
                CellState::Unknown
            }
        })
        .collect();
    SurroundGrids::new(target_id, spec.origin_point(), voxel_size, dim, states)
}
