pub mod intersect;
pub mod kdtree;
pub mod mesh;
pub mod model;
pub mod pose;

pub use intersect::PlacedSolid;
pub use kdtree::KdTree;
pub use mesh::{Aabb, Mesh, Solid};
pub use model::{sample_model_points, ModelConfig, ObjectModel, SampleMode};
pub use pose::{Pose, Twist};
