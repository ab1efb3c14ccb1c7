//! Coordinate frames, multi-LiDAR integration, court filtering, BEV
//! rasterization, voxelization and pinhole projection.
//!
//! World frame convention: the court plane is `z = 0`, `x` runs along the
//! 28 m side and `y` along the 15 m side, with the court corner at the origin.

mod bev;
mod camera;
mod cloud;
mod rect;
mod transform;

pub use bev::{rasterize_bev, voxelize, voxelize_world, BevGrid, BevImage, Voxel3D};
pub use camera::{project, CameraModel, ProjectedBox};
pub use cloud::{filter_region, merge_clouds, CourtRegion, PointCloud, DEFAULT_MAX_SKEW_S, WORLD_FRAME};
pub use rect::Rect;
pub use transform::{apply_transform, RigidTransform};

use thiserror::Error;

/// Tolerance used when validating rotation matrices.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("frame mismatch: {0}")]
    FrameMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("point behind camera (depth {depth:.4} m)")]
    BehindCamera { depth: f64 },
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),
}
