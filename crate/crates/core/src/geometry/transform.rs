use nalgebra::{Matrix3, Point3, Rotation3, Vector3};

use super::{GeometryError, PointCloud, ORTHONORMAL_TOL};

/// Rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Build and validate a transform.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let t = Self {
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Rotation from roll/pitch/yaw (radians, applied as `Rz(yaw) Ry(pitch) Rx(roll)`).
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(),
            translation,
        }
    }

    /// Checks `R^T R = I` and `det R = +1` within [`ORTHONORMAL_TOL`] and
    /// that every entry is finite.
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.rotation.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidTransform("non-finite entry".into()));
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL {
            return Err(GeometryError::InvalidTransform(format!(
                "rotation not orthonormal (max |R^T R - I| = {err:.3e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::InvalidTransform(format!(
                "rotation determinant {det:.12} != +1"
            )));
        }
        Ok(())
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }
}

/// Transform every point of `cloud` into `target_frame`.
pub fn apply_transform(
    cloud: &PointCloud,
    transform: &RigidTransform,
    target_frame: &str,
) -> Result<PointCloud, GeometryError> {
    transform.validate()?;
    let points = cloud.points.iter().map(|p| transform.apply(p)).collect();
    PointCloud::new(target_frame, cloud.timestamp, points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn cloud(points: Vec<[f64; 3]>) -> PointCloud {
        PointCloud::new(
            "lidar0",
            0.0,
            points.into_iter().map(|p| Point3::new(p[0], p[1], p[2])).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_keeps_points() {
        let c = cloud(vec![[1.0, -2.0, 0.5], [3.0, 4.0, 5.0]]);
        let out = apply_transform(&c, &RigidTransform::identity(), "world").unwrap();
        assert_eq!(out.points, c.points);
        assert_eq!(out.frame_id, "world");
    }

    #[test]
    fn pure_translation() {
        let c = cloud(vec![[0.0, 0.0, 0.0]]);
        let out = apply_transform(&c, &RigidTransform::from_translation(1.0, 2.0, 3.0), "world").unwrap();
        assert_eq!(out.points[0], Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let c = cloud(vec![[1.0, 0.0, 0.0]]);
        let t = RigidTransform::from_euler(0.0, 0.0, FRAC_PI_2, Vector3::zeros());
        let p = apply_transform(&c, &t, "world").unwrap().points[0];
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_orthonormal() {
        let mut t = RigidTransform::identity();
        t.rotation[(0, 0)] = 1.1;
        let c = cloud(vec![[0.0, 0.0, 0.0]]);
        assert!(matches!(
            apply_transform(&c, &t, "world"),
            Err(GeometryError::InvalidTransform(_))
        ));
        // a reflection is orthonormal but has det -1
        let mut r = RigidTransform::identity();
        r.rotation[(2, 2)] = -1.0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn compose_then_inverse_is_identity() {
        let a = RigidTransform::from_euler(0.1, -0.4, 1.3, Vector3::new(1.0, 2.0, 3.0));
        let b = RigidTransform::from_euler(-0.7, 0.2, 0.05, Vector3::new(-4.0, 0.5, 9.0));
        let ab = a.compose(&b);
        let p = Point3::new(0.3, -0.2, 7.0);
        assert!((ab.apply(&p) - a.apply(&b.apply(&p))).norm() < 1e-12);
        let round = ab.inverse().compose(&ab);
        assert!((round.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(round.translation.norm() < 1e-12);
    }
}
