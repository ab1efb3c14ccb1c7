use nalgebra::Point3;

use super::{apply_transform, GeometryError, RigidTransform};

/// Name of the shared coordinate frame all LiDARs are integrated into.
pub const WORLD_FRAME: &str = "world";

/// Timestamp tolerance for clouds merged into one frame: one frame period at 10 Hz.
pub const DEFAULT_MAX_SKEW_S: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub frame_id: String,
    pub timestamp: f64,
    pub points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(
        frame_id: impl Into<String>,
        timestamp: f64,
        points: Vec<Point3<f64>>,
    ) -> Result<Self, GeometryError> {
        let cloud = Self {
            frame_id: frame_id.into(),
            timestamp,
            points,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn empty(frame_id: impl Into<String>, timestamp: f64) -> Self {
        Self {
            frame_id: frame_id.into(),
            timestamp,
            points: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.frame_id.is_empty() {
            return Err(GeometryError::InvalidCloud("empty frame id".into()));
        }
        if !self.timestamp.is_finite() {
            return Err(GeometryError::InvalidCloud("non-finite timestamp".into()));
        }
        if let Some(i) = self.points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(GeometryError::InvalidCloud(format!("point {i} is not finite")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Integrate per-sensor clouds into [`WORLD_FRAME`] using their extrinsics.
///
/// Clouds must share a timestamp within `max_skew` seconds. The merged cloud
/// carries the earliest input timestamp.
pub fn merge_clouds(
    clouds: &[PointCloud],
    poses: &[RigidTransform],
    max_skew: f64,
) -> Result<PointCloud, GeometryError> {
    if clouds.is_empty() {
        return Err(GeometryError::EmptyInput("no clouds to merge"));
    }
    if clouds.len() != poses.len() {
        return Err(GeometryError::FrameMismatch(format!(
            "{} clouds but {} poses",
            clouds.len(),
            poses.len()
        )));
    }
    let t_min = clouds.iter().map(|c| c.timestamp).fold(f64::INFINITY, f64::min);
    let t_max = clouds.iter().map(|c| c.timestamp).fold(f64::NEG_INFINITY, f64::max);
    if t_max - t_min > max_skew {
        return Err(GeometryError::FrameMismatch(format!(
            "cloud timestamps span {:.4} s (> {max_skew} s)",
            t_max - t_min
        )));
    }
    let mut points = Vec::with_capacity(clouds.iter().map(PointCloud::len).sum());
    for (cloud, pose) in clouds.iter().zip(poses) {
        points.extend(apply_transform(cloud, pose, WORLD_FRAME)?.points);
    }
    Ok(PointCloud {
        frame_id: WORLD_FRAME.to_string(),
        timestamp: t_min,
        points,
    })
}

/// Polygonal court area in the XY plane with a height band.
#[derive(Debug, Clone, PartialEq)]
pub struct CourtRegion {
    polygon: Vec<[f64; 2]>,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for CourtRegion {
    /// 28 x 15 m court, keeping heights in `[0.2, 2.3]` m.
    fn default() -> Self {
        Self::rectangle(0.0, 0.0, 28.0, 15.0, 0.2, 2.3).expect("default court is valid")
    }
}

impl CourtRegion {
    pub fn new(polygon: Vec<[f64; 2]>, z_min: f64, z_max: f64) -> Result<Self, GeometryError> {
        if polygon.len() < 3 {
            return Err(GeometryError::Config("court polygon needs >= 3 vertices".into()));
        }
        if polygon.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::Config("court polygon has non-finite vertex".into()));
        }
        let region = Self {
            polygon,
            z_min,
            z_max,
        };
        if region.area() <= 0.0 {
            return Err(GeometryError::Config("court polygon has zero area".into()));
        }
        if !(z_min < z_max) {
            return Err(GeometryError::Config(format!(
                "z range [{z_min}, {z_max}] is empty"
            )));
        }
        Ok(region)
    }

    pub fn rectangle(
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        z_min: f64,
        z_max: f64,
    ) -> Result<Self, GeometryError> {
        Self::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]], z_min, z_max)
    }

    pub fn polygon(&self) -> &[[f64; 2]] {
        &self.polygon
    }

    /// Unsigned shoelace area.
    pub fn area(&self) -> f64 {
        let n = self.polygon.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let a = self.polygon[i];
                let b = self.polygon[(i + 1) % n];
                a[0] * b[1] - b[0] * a[1]
            })
            .sum();
        twice.abs() / 2.0
    }

    /// Boundary-inclusive point-in-polygon test on XY.
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        let n = self.polygon.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.polygon[i];
            let b = self.polygon[(i + 1) % n];
            if on_segment(a, b, [x, y]) {
                return true;
            }
            if (a[1] > y) != (b[1] > y) {
                let x_cross = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        p.z >= self.z_min && p.z <= self.z_max && self.contains_xy(p.x, p.y)
    }
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let scale = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).max(1.0);
    if cross.abs() > 1e-12 * scale {
        return false;
    }
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Keep points inside the court polygon and height band, preserving order.
pub fn filter_region(cloud: &PointCloud, region: &CourtRegion) -> PointCloud {
    PointCloud {
        frame_id: cloud.frame_id.clone(),
        timestamp: cloud.timestamp,
        points: cloud.points.iter().copied().filter(|p| region.contains(p)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pc(frame: &str, t: f64, pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(frame, t, pts.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect()).unwrap()
    }

    #[test]
    fn cloud_validation() {
        assert!(PointCloud::new("", 0.0, vec![]).is_err());
        assert!(PointCloud::new("a", 0.0, vec![Point3::new(f64::NAN, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn merge_single_identity() {
        let c = pc("lidar0", 1.0, &[[1.0, 2.0, 3.0]]);
        let m = merge_clouds(&[c.clone()], &[RigidTransform::identity()], DEFAULT_MAX_SKEW_S).unwrap();
        assert_eq!(m.points, c.points);
        assert_eq!(m.frame_id, WORLD_FRAME);
    }

    #[test]
    fn merge_counts_add_up() {
        let make = |n: usize| pc("l", 0.0, &vec![[0.5, 0.5, 0.5]; n]);
        let clouds = [make(10), make(20), make(30)];
        let poses = [RigidTransform::identity(); 3];
        assert_eq!(merge_clouds(&clouds, &poses, 0.1).unwrap().len(), 60);
    }

    #[test]
    fn merge_applies_each_pose() {
        let clouds = [pc("a", 0.0, &[[0.0; 3]]), pc("b", 0.0, &[[0.0; 3]])];
        let poses = [
            RigidTransform::from_translation(1.0, 0.0, 0.0),
            RigidTransform::from_translation(0.0, 1.0, 0.0),
        ];
        let m = merge_clouds(&clouds, &poses, 0.1).unwrap();
        assert_eq!(m.points, vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)]);
    }

    #[test]
    fn merge_errors() {
        assert!(matches!(merge_clouds(&[], &[], 0.1), Err(GeometryError::EmptyInput(_))));
        let a = pc("a", 0.0, &[]);
        let b = pc("b", 0.5, &[]);
        let poses = [RigidTransform::identity(); 2];
        assert!(matches!(
            merge_clouds(&[a.clone(), b], &poses, 0.1),
            Err(GeometryError::FrameMismatch(_))
        ));
        assert!(matches!(
            merge_clouds(&[a], &poses, 0.1),
            Err(GeometryError::FrameMismatch(_))
        ));
    }

    #[test]
    fn filter_examples() {
        let region = CourtRegion::rectangle(0.0, 0.0, 28.0, 15.0, 0.2, 2.3).unwrap();
        let c = pc("world", 0.0, &[[1.0, 1.0, 1.0], [29.0, 1.0, 1.0], [1.0, 1.0, 0.1]]);
        assert_eq!(filter_region(&c, &region).points, vec![Point3::new(1.0, 1.0, 1.0)]);

        let below = pc("world", 0.0, &[[5.0, 5.0, 0.2 - 0.01]]);
        assert!(filter_region(&below, &region).is_empty());

        let inside = pc("world", 0.0, &[[5.0, 5.0, 1.0], [27.0, 14.0, 2.0]]);
        assert_eq!(filter_region(&inside, &region), inside);
    }

    #[test]
    fn boundary_points_are_kept() {
        let region = CourtRegion::default();
        let c = pc(
            "world",
            0.0,
            &[[0.0, 0.0, 0.2], [28.0, 7.0, 2.3], [14.0, 15.0, 1.0], [28.0, 15.0, 1.0]],
        );
        assert_eq!(filter_region(&c, &region).len(), 4);
    }

    #[test]
    fn non_convex_polygon() {
        // L shape: the notch at (3, 3) is outside
        let region = CourtRegion::new(
            vec![[0.0, 0.0], [4.0, 0.0], [4.0, 2.0], [2.0, 2.0], [2.0, 4.0], [0.0, 4.0]],
            0.0,
            1.0,
        )
        .unwrap();
        assert!(region.contains_xy(1.0, 3.0));
        assert!(region.contains_xy(3.0, 1.0));
        assert!(!region.contains_xy(3.0, 3.0));
        assert!(region.contains_xy(2.0, 3.0));
        assert_eq!(region.area(), 12.0);
    }

    #[test]
    fn invalid_regions() {
        assert!(CourtRegion::new(vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], 0.0, 1.0).is_err());
        assert!(CourtRegion::rectangle(0.0, 0.0, 1.0, 1.0, 1.0, 1.0).is_err());
    }
}
