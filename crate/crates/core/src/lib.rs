//! LiDAR-inertial odometry and TSDF surface reconstruction.
//!
//! Scans are deskewed with IMU integration, registered against a local map of
//! edge and planar features, stitched into a keyframe pose graph on SE(3)
//! with a Schur-complement sliding window, and fused into a sparse TSDF grid
//! from which a triangle mesh is extracted. The [`sim`] module ray-casts
//! synthetic scenes with exact ground truth for every stage.

pub mod error;
pub mod exec;
pub mod features;
pub mod geometry;
pub mod imu;
pub mod kdtree;
pub mod pipeline;
pub mod posegraph;
pub mod registration;
pub mod sim;
pub mod tsdf;

pub use error::{Error, Result};
pub use exec::Exec;
pub use geometry::{Pose, Rotation, Twist};
