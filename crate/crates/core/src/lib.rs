//! Object-level occupancy fusion, differentiable collision checking, and
//! joint multi-object pose refinement.

pub mod agreement;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod refine;
pub mod scenegen;
pub mod voxelize;

pub use error::{Error, Result};
pub use geometry::{Mesh, ObjectModel, Pose, Twist};
