//! Point-pair voting for 9D object pose estimation from depth point clouds.
//!
//! The pipeline samples small point tuples from an observed cloud, predicts
//! each tuple's coordinates in the object's canonical frame (as per-axis
//! distributions over bins), converts those predictions into rotation-
//! invariant voting targets, accumulates center and orientation votes over
//! the targets' ambiguity rings, filters pairs whose votes disagree with the
//! consensus, and refines the winning pose by gradient descent on the
//! canonical-coordinate loss.

pub mod cloud;
pub mod config;
pub mod error;
pub mod geom;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod ply;
pub mod predictor;
pub mod refine;
pub mod scene;
pub mod targets;
pub mod tuples;
pub mod vote;

pub use cloud::{estimate_normals, NeighborGrid, NormalsEstimate, PointCloud};
pub use error::{Error, Result};
pub use geom::{so3_exp, so3_log, OrientedBox, Pose9D, Rotation, UnitVec3, Vec3};
pub use mesh::{CanonicalMesh, TriangleMesh};
pub use scene::{corrupt, sample_view, Camera, NoiseConfig, SceneSample};
