//! Object-level volumetric fusion and surrounding-grid extraction.

pub mod grids;
pub mod io;
pub mod map;
pub mod octree;

pub use io::{read_grids, write_grids};
pub use grids::{extract_grids, extract_grids_with_dim, CellState, SurroundGrids, SurroundSidecar};
pub use map::{FrameObservation, Intrinsics, LogOdds, MapConfig, Occupancy, SceneMap};
pub use octree::{LeafKey, Octree};
