//! Deterministic synthetic basketball scenes: player motion, LiDAR returns,
//! camera ground truth and appearance embeddings.

mod camera;
mod lidar;
mod motion;

pub use camera::{camera_detections, embedding_table, render_camera_gt, synth_embedding, CameraGtBox, EmbeddingConfig};
pub use lidar::{sample_lidar, LidarSpec};
pub use motion::{generate_scenario, PlayerPose, Scenario, ScenarioFrame};

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::geometry::{CameraModel, GeometryError, RigidTransform};
use crate::records::ObjectId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulatorError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Vertical cylinder standing in for a player.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyModel {
    pub radius: f64,
    pub height: f64,
}

impl Default for BodyModel {
    fn default() -> Self {
        Self {
            radius: 0.30,
            height: 1.90,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    /// m/s
    pub max_speed: f64,
    /// m/s^2
    pub max_accel: f64,
    /// Per-player cruise speed is drawn from this fraction range of `max_speed`.
    pub cruise_fraction: (f64, f64),
    /// Rate (1/s) of spontaneous waypoint changes.
    pub waypoint_churn: f64,
    /// Players closer than this push each other apart.
    pub repulsion_radius: f64,
    /// Repulsion speed at zero distance (m/s).
    pub repulsion_gain: f64,
    /// Players may leave the court by at most this much.
    pub margin: f64,
}

impl Default for MotionModel {
    fn default() -> Self {
        Self {
            max_speed: 6.0,
            max_accel: 4.0,
            cruise_fraction: (0.3, 0.7),
            waypoint_churn: 0.2,
            repulsion_radius: 1.8,
            repulsion_gain: 3.0,
            margin: 1.0,
        }
    }
}

/// Two players steered to meet side by side, linger, then split apart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedCrossing {
    pub a: ObjectId,
    pub b: ObjectId,
    /// Middle of the meeting, in seconds.
    pub time_s: f64,
    /// Seconds spent side by side.
    pub dwell_s: f64,
    /// Center distance while side by side.
    pub separation: f64,
}

impl ScriptedCrossing {
    pub fn new(a: ObjectId, b: ObjectId, time_s: f64) -> Self {
        Self {
            a,
            b,
            time_s,
            dwell_s: 0.8,
            separation: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraSpec {
    pub width: u32,
    pub height: u32,
    pub fov_h_deg: f64,
    pub fov_v_deg: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            width: 3840,
            height: 2160,
            fov_h_deg: 95.0,
            fov_v_deg: 78.0,
        }
    }
}

/// Mounting point of one LiDAR + camera unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigPose {
    pub position: [f64; 3],
    /// Heading of the LiDAR forward axis, radians from world +x.
    pub yaw: f64,
    /// Downward tilt of the LiDAR, radians.
    pub pitch: f64,
}

impl RigPose {
    /// Unit at `position` facing the court point `(tx, ty)`.
    pub fn facing(position: [f64; 3], tx: f64, ty: f64, pitch_deg: f64) -> Self {
        Self {
            position,
            yaw: (ty - position[1]).atan2(tx - position[0]),
            pitch: pitch_deg.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub player_count: usize,
    pub duration_s: f64,
    pub frame_rate: f64,
    pub court_length: f64,
    pub court_width: f64,
    pub motion: MotionModel,
    pub body: BodyModel,
    pub rigs: Vec<RigPose>,
    pub lidar: LidarSpec,
    pub camera: CameraSpec,
    pub crossings: Vec<ScriptedCrossing>,
    /// Camera aim height above the court center.
    pub camera_target_z: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let (l, w) = (28.0, 15.0);
        Self {
            player_count: 10,
            duration_s: 30.0,
            frame_rate: 10.0,
            court_length: l,
            court_width: w,
            motion: MotionModel::default(),
            body: BodyModel::default(),
            rigs: vec![
                RigPose::facing([l / 2.0, -1.0, 2.0], l / 2.0, w / 2.0, 8.0),
                RigPose::facing([l / 2.0, w + 1.0, 2.0], l / 2.0, w / 2.0, 8.0),
                RigPose::facing([-1.0, -1.0, 2.0], l / 2.0, w / 2.0, 6.0),
            ],
            lidar: LidarSpec::default(),
            camera: CameraSpec::default(),
            crossings: Vec::new(),
            camera_target_z: 0.5,
        }
    }
}

impl ScenarioConfig {
    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.frame_rate).round() as usize
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    /// Minimum center spacing at placement time.
    pub fn min_spacing(&self) -> f64 {
        2.0 * self.body.radius + 0.4
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        let bad = |m: &str| Err(SimulatorError::Config(m.into()));
        let positive = [
            self.duration_s,
            self.frame_rate,
            self.court_length,
            self.court_width,
            self.motion.max_speed,
            self.motion.max_accel,
            self.body.radius,
            self.body.height,
            self.camera.fov_h_deg,
            self.camera.fov_v_deg,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("physical parameters must be positive and finite");
        }
        let (lo, hi) = self.motion.cruise_fraction;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return bad("cruise_fraction must satisfy 0 < lo <= hi <= 1");
        }
        if self.motion.margin < 0.0 || self.motion.waypoint_churn < 0.0 || self.motion.repulsion_radius < 0.0 {
            return bad("margin, churn and repulsion radius must be non-negative");
        }
        if self.frame_count() < 1 {
            return bad("scenario must span at least one frame");
        }
        let s = self.min_spacing();
        let capacity = ((self.court_length / s).floor() * (self.court_width / s).floor()) as usize;
        if self.player_count > capacity {
            return Err(SimulatorError::Config(format!(
                "{} players exceed court capacity {capacity} at {s:.2} m spacing",
                self.player_count
            )));
        }
        for c in &self.crossings {
            let n = self.player_count as ObjectId;
            if c.a == c.b || c.a == 0 || c.b == 0 || c.a > n || c.b > n {
                return bad("crossing players must be two distinct ids in 1..=player_count");
            }
            if !(c.dwell_s >= 0.0 && c.separation >= 0.0 && c.time_s >= 0.0) {
                return bad("crossing times and separation must be non-negative");
            }
        }
        self.lidar.validate()?;
        if self.camera.width == 0 || self.camera.height == 0 {
            return bad("camera image size must be positive");
        }
        for r in &self.rigs {
            let dir = (self.court_length / 2.0 - r.position[0], self.court_width / 2.0 - r.position[1]);
            if dir.0 * r.yaw.cos() + dir.1 * r.yaw.sin() <= 0.0 {
                return bad("rig must face the court interior");
            }
        }
        Ok(())
    }

    /// Floor extent hit by LiDAR rays: the court plus the motion margin
    /// plus one meter of apron.
    pub fn floor_extent(&self) -> (f64, f64, f64, f64) {
        let m = self.motion.margin + 1.0;
        (-m, -m, self.court_length + m, self.court_width + m)
    }
}

/// One sensor unit: LiDAR pose (sensor to world) and the co-located camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub lidar_to_world: RigidTransform,
    pub camera: CameraModel,
}

pub fn build_rigs(cfg: &ScenarioConfig) -> Result<Vec<Rig>, SimulatorError> {
    cfg.rigs
        .iter()
        .map(|r| {
            let [x, y, z] = r.position;
            let lidar_to_world = RigidTransform::from_euler(0.0, r.pitch, r.yaw, Vector3::new(x, y, z));
            let target = Point3::new(cfg.court_length / 2.0, cfg.court_width / 2.0, cfg.camera_target_z);
            let camera = CameraModel::look_at(
                Point3::new(x, y, z),
                target,
                cfg.camera.fov_h_deg,
                cfg.camera.fov_v_deg,
                (cfg.camera.width, cfg.camera.height),
            )?;
            Ok(Rig { lidar_to_world, camera })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.frame_count(), 300);
        let rigs = build_rigs(&cfg).unwrap();
        assert_eq!(rigs.len(), 3);
        // court center in front of every camera
        let c = Point3::new(14.0, 7.5, 0.5);
        for r in &rigs {
            let [u, v] = r.camera.project_point(&c).unwrap();
            assert!((u - 1920.0).abs() < 1.0 && (v - 1080.0).abs() < 1.0);
        }
    }

    #[test]
    fn rejects_overfull_court() {
        let cfg = ScenarioConfig {
            player_count: 1000,
            ..ScenarioConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(SimulatorError::Config(_))));
    }

    #[test]
    fn rejects_rig_facing_away() {
        let mut cfg = ScenarioConfig::default();
        cfg.rigs[0].yaw += std::f64::consts::PI;
        assert!(cfg.validate().is_err());
    }
}
