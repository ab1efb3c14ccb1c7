use nalgebra::{Matrix3, Point3, Vector3};

use super::{GeometryError, Rect, RigidTransform, Voxel3D};

/// Pinhole camera. `extrinsics` maps world points into the camera frame
/// (x right, y down, z along the optical axis).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Matrix3<f64>,
    pub extrinsics: RigidTransform,
    pub image_size: (u32, u32),
}

impl CameraModel {
    pub fn new(
        intrinsics: Matrix3<f64>,
        extrinsics: RigidTransform,
        image_size: (u32, u32),
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            intrinsics,
            extrinsics,
            image_size,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `position` looking at `target` with the given full fields of
    /// view (degrees). The image x axis stays parallel to the floor.
    pub fn look_at(
        position: Point3<f64>,
        target: Point3<f64>,
        fov_h_deg: f64,
        fov_v_deg: f64,
        image_size: (u32, u32),
    ) -> Result<Self, GeometryError> {
        let forward = (target - position)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::Config("camera target equals position".into()))?;
        let right = forward
            .cross(&Vector3::z())
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::Config("camera looks straight up or down".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let extrinsics = RigidTransform {
            rotation,
            translation: -(rotation * position.coords),
        };
        let (w, h) = (image_size.0 as f64, image_size.1 as f64);
        let fx = (w / 2.0) / (fov_h_deg.to_radians() / 2.0).tan();
        let fy = (h / 2.0) / (fov_v_deg.to_radians() / 2.0).tan();
        let intrinsics = Matrix3::new(fx, 0.0, w / 2.0, 0.0, fy, h / 2.0, 0.0, 0.0, 1.0);
        Self::new(intrinsics, extrinsics, image_size)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        self.extrinsics.validate()?;
        let k = &self.intrinsics;
        let (w, h) = (self.image_size.0 as f64, self.image_size.1 as f64);
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(GeometryError::Config("focal lengths must be positive".into()));
        }
        if !(k[(0, 2)] >= 0.0 && k[(0, 2)] <= w && k[(1, 2)] >= 0.0 && k[(1, 2)] <= h) {
            return Err(GeometryError::Config("principal point outside the image".into()));
        }
        if k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(GeometryError::Config("intrinsics last row must be (0, 0, 1)".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.image_size.0 as f64
    }

    pub fn height(&self) -> f64 {
        self.image_size.1 as f64
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Point3<f64> {
        Point3::from(self.extrinsics.inverse().translation)
    }

    /// Depth along the optical axis.
    #[inline]
    pub fn depth(&self, p: &Point3<f64>) -> f64 {
        self.extrinsics.apply(p).z
    }

    /// Pixel coordinates of a world point with positive depth.
    #[inline]
    pub fn project_point(&self, p: &Point3<f64>) -> Result<[f64; 2], GeometryError> {
        let pc = self.extrinsics.apply(p);
        if pc.z <= 0.0 {
            return Err(GeometryError::BehindCamera { depth: pc.z });
        }
        let uvw = self.intrinsics * pc.coords;
        Ok([uvw.x / uvw.z, uvw.y / uvw.z])
    }
}

/// Image-plane footprint of a voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedBox {
    /// Projected voxel corners, same order as [`Voxel3D::corners`].
    pub corners: [[f64; 2]; 8],
    /// Bounding box of the corners before clipping to the image.
    pub unclamped: Rect,
    /// `unclamped` clipped to the image bounds.
    pub bbox: Rect,
}

impl ProjectedBox {
    pub fn unclamped_area(&self) -> f64 {
        self.unclamped.area()
    }
}

/// Perspective projection of all eight voxel corners.
pub fn project(voxel: &Voxel3D, cam: &CameraModel) -> Result<ProjectedBox, GeometryError> {
    let mut corners = [[0.0; 2]; 8];
    for (dst, c) in corners.iter_mut().zip(&voxel.corners) {
        *dst = cam.project_point(c)?;
    }
    let unclamped = Rect::bounding(corners).expect("eight corners");
    Ok(ProjectedBox {
        corners,
        unclamped,
        bbox: unclamped.clamp_to(cam.width(), cam.height()),
    })
}
