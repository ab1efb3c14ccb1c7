//! Multi-LiDAR bird's-eye-view player tracking with camera-assisted
//! occlusion re-identification, a synthetic court simulator and a
//! point-based MOT evaluation suite.

pub mod assignment;
pub mod geometry;
pub mod matching;
pub mod metrics;
pub mod occlusion;
pub mod detection;
pub mod records;
pub mod reid;
pub mod rng;
pub mod simulator;
pub mod tracker;
