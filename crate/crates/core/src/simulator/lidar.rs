use nalgebra::{Point3, Vector3};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{Rig, Scenario, SimulatorError};
use crate::geometry::PointCloud;
use crate::rng;

/// Scanning LiDAR geometry. Angles in degrees, distances in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarSpec {
    pub h_fov: f64,
    pub v_fov: f64,
    pub h_res: f64,
    pub v_res: f64,
    pub range_noise: f64,
    pub max_range: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            h_fov: 125.0,
            v_fov: 25.0,
            h_res: 0.18,
            v_res: 0.23,
            range_noise: 0.02,
            max_range: 60.0,
        }
    }
}

impl LidarSpec {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        let ok = [self.h_fov, self.v_fov, self.h_res, self.v_res, self.max_range]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !ok || self.h_fov >= 360.0 || self.v_fov >= 180.0 {
            return Err(SimulatorError::Config("LiDAR FOV, resolution and range must be positive".into()));
        }
        if !(self.range_noise >= 0.0 && self.range_noise.is_finite()) {
            return Err(SimulatorError::Config("LiDAR range noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn columns(&self) -> usize {
        (self.h_fov / self.h_res).floor() as usize + 1
    }

    pub fn rows(&self) -> usize {
        (self.v_fov / self.v_res).floor() as usize + 1
    }

    /// Unit ray directions in the sensor frame for one row, left to right.
    fn row_directions(&self, row: usize) -> Vec<Vector3<f64>> {
        let el = (-self.v_fov / 2.0 + row as f64 * self.v_res).to_radians();
        let (se, ce) = el.sin_cos();
        (0..self.columns())
            .map(|c| {
                let az = (-self.h_fov / 2.0 + c as f64 * self.h_res).to_radians();
                let (sa, ca) = az.sin_cos();
                Vector3::new(ce * ca, ce * sa, se)
            })
            .collect()
    }
}

/// Nearest hit distance of a ray against a capped vertical cylinder standing
/// on the floor.
fn hit_cylinder(o: &Point3<f64>, d: &Vector3<f64>, cx: f64, cy: f64, r: f64, h: f64) -> Option<f64> {
    let (ox, oy) = (o.x - cx, o.y - cy);
    let mut best: Option<f64> = None;
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-15 {
        let b = ox * d.x + oy * d.y;
        let c = ox * ox + oy * oy - r * r;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let t = (-b - disc.sqrt()) / a;
            if t > 0.0 {
                let z = o.z + t * d.z;
                if (0.0..=h).contains(&z) {
                    best = Some(t);
                }
            }
        }
    }
    if d.z.abs() > 1e-15 {
        let t = (h - o.z) / d.z;
        if t > 0.0 && best.is_none_or(|b| t < b) {
            let (x, y) = (ox + t * d.x, oy + t * d.y);
            if x * x + y * y <= r * r {
                best = Some(t);
            }
        }
    }
    best
}

/// One LiDAR sweep of frame `frame` from `rig`, in the sensor frame
/// `lidar{rig_index}`. Each ray returns its nearest body or floor hit;
/// rays that hit nothing within range return no point.
pub fn sample_lidar(scenario: &Scenario, rig: &Rig, rig_index: usize, frame: usize) -> PointCloud {
    let cfg = &scenario.cfg;
    let spec = &cfg.lidar;
    let snap = &scenario.frames[frame];
    let pose = &rig.lidar_to_world;
    let origin = Point3::from(pose.translation);
    let (fx0, fy0, fx1, fy1) = cfg.floor_extent();
    let (r, h) = (cfg.body.radius, cfg.body.height);
    let noise = Normal::new(0.0, spec.range_noise.max(f64::MIN_POSITIVE)).expect("finite sigma");

    let points: Vec<Point3<f64>> = (0..spec.rows())
        .into_par_iter()
        .flat_map_iter(|row| {
            let mut rng = rng::stream(scenario.seed, &[0x11DA, frame as u64, rig_index as u64, row as u64]);
            let mut out = Vec::new();
            for d_local in spec.row_directions(row) {
                let d = pose.rotation * d_local;
                let mut t_hit = f64::INFINITY;
                if d.z < 0.0 {
                    let t = -origin.z / d.z;
                    let (x, y) = (origin.x + t * d.x, origin.y + t * d.y);
                    if x >= fx0 && x <= fx1 && y >= fy0 && y <= fy1 {
                        t_hit = t;
                    }
                }
                for p in &snap.poses {
                    if let Some(t) = hit_cylinder(&origin, &d, p.x, p.y, r, h) {
                        t_hit = t_hit.min(t);
                    }
                }
                if t_hit <= spec.max_range {
                    let n = if spec.range_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    out.push(Point3::from(d_local * (t_hit + n)));
                }
            }
            out
        })
        .collect();
    PointCloud {
        frame_id: format!("lidar{rig_index}"),
        timestamp: snap.timestamp,
        points,
    }
}
