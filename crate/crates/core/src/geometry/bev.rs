use nalgebra::Point3;

use super::{GeometryError, PointCloud, Rect};

/// Regular top-down grid. Cell `(col, row)` covers
/// `[origin.x + col*res, origin.x + (col+1)*res) x [origin.y + row*res, ...)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevGrid {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for BevGrid {
    /// 30 x 17 m at 5 cm: the 28 x 15 m court plus a 1 m margin.
    fn default() -> Self {
        Self {
            origin: [-1.0, -1.0],
            resolution: 0.05,
            width: 600,
            height: 340,
        }
    }
}

impl BevGrid {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(GeometryError::Config(format!(
                "BEV resolution must be positive, got {}",
                self.resolution
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::Config("BEV grid has zero cells".into()));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::Config("BEV origin is not finite".into()));
        }
        Ok(())
    }

    /// Cell containing the world point, or `None` outside the grid.
    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = ((x - self.origin[0]) / self.resolution).floor();
        let row = ((y - self.origin[1]) / self.resolution).floor();
        if col >= 0.0 && row >= 0.0 && col < self.width as f64 && row < self.height as f64 {
            Some((col as usize, row as usize))
        } else {
            None
        }
    }

    /// World extent of a cell-unit rectangle.
    pub fn cells_to_world(&self, cells: &Rect) -> Rect {
        Rect::new(
            self.origin[0] + cells.x * self.resolution,
            self.origin[1] + cells.y * self.resolution,
            cells.w * self.resolution,
            cells.h * self.resolution,
        )
    }

    /// Smallest whole-cell rectangle covering a world rectangle, clipped to
    /// the grid. Zero-area when the footprint is outside.
    pub fn world_to_cells(&self, world: &Rect) -> Rect {
        let c0 = ((world.x - self.origin[0]) / self.resolution).floor();
        let r0 = ((world.y - self.origin[1]) / self.resolution).floor();
        let c1 = ((world.right() - self.origin[0]) / self.resolution).ceil();
        let r1 = ((world.bottom() - self.origin[1]) / self.resolution).ceil();
        Rect::new(c0, r0, c1 - c0, r1 - r0).clamp_to(self.width as f64, self.height as f64)
    }

    pub fn extent_world(&self) -> Rect {
        Rect::new(
            self.origin[0],
            self.origin[1],
            self.width as f64 * self.resolution,
            self.height as f64 * self.resolution,
        )
    }
}

/// Per-cell point counts, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BevImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u32>,
}

impl BevImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> u32 {
        self.data[row * self.width + col]
    }

    pub fn total(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }

    /// Sum of counts over the cells covered by a cell-unit rectangle.
    pub fn sum_in(&self, cells: &Rect) -> u64 {
        let c0 = cells.x.max(0.0).floor() as usize;
        let r0 = cells.y.max(0.0).floor() as usize;
        let c1 = (cells.right().ceil().max(0.0) as usize).min(self.width);
        let r1 = (cells.bottom().ceil().max(0.0) as usize).min(self.height);
        let mut sum = 0u64;
        for row in r0..r1 {
            sum += self.data[row * self.width + c0.min(c1)..row * self.width + c1]
                .iter()
                .map(|&v| v as u64)
                .sum::<u64>();
        }
        sum
    }
}

/// Orthographic top-down point count image; `z` is discarded and points
/// falling outside the grid are ignored.
pub fn rasterize_bev(cloud: &PointCloud, grid: &BevGrid) -> Result<BevImage, GeometryError> {
    grid.validate()?;
    let mut image = BevImage::zeros(grid.width, grid.height);
    for p in &cloud.points {
        if let Some((col, row)) = grid.cell_of(p.x, p.y) {
            image.data[row * grid.width + col] += 1;
        }
    }
    Ok(image)
}

/// Axis-aligned box extruded from a BEV footprint.
///
/// Corner order: the four bottom corners `(x0,y0) (x1,y0) (x0,y1) (x1,y1)` at
/// `z_min`, then the same four at `z_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voxel3D {
    pub corners: [Point3<f64>; 8],
}

impl Voxel3D {
    pub fn min(&self) -> Point3<f64> {
        self.corners[0]
    }

    pub fn max(&self) -> Point3<f64> {
        self.corners[7]
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let (lo, hi) = (self.min(), self.max());
        (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i])
    }

    /// Point at fractional coordinates `(u, v, w) ∈ [0,1]^3` of the box.
    pub fn lerp(&self, u: f64, v: f64, w: f64) -> Point3<f64> {
        let (lo, hi) = (self.min(), self.max());
        Point3::new(
            lo.x + u * (hi.x - lo.x),
            lo.y + v * (hi.y - lo.y),
            lo.z + w * (hi.z - lo.z),
        )
    }
}

/// Extrude a cell-unit BEV box through `[z_min, z_max]` in world meters.
pub fn voxelize(
    cells: &Rect,
    grid: &BevGrid,
    z_min: f64,
    z_max: f64,
) -> Result<Voxel3D, GeometryError> {
    grid.validate()?;
    voxelize_world(&grid.cells_to_world(cells), z_min, z_max)
}

/// Extrude a world-meter footprint through `[z_min, z_max]`.
pub fn voxelize_world(footprint: &Rect, z_min: f64, z_max: f64) -> Result<Voxel3D, GeometryError> {
    if footprint.is_degenerate() {
        return Err(GeometryError::Degenerate(format!(
            "footprint {}x{} has no area",
            footprint.w, footprint.h
        )));
    }
    if !(z_min < z_max) {
        return Err(GeometryError::Degenerate(format!(
            "height range [{z_min}, {z_max}] is empty"
        )));
    }
    let (x0, y0, x1, y1) = (footprint.x, footprint.y, footprint.right(), footprint.bottom());
    let mut corners = [Point3::origin(); 8];
    for (k, z) in [z_min, z_max].into_iter().enumerate() {
        corners[4 * k] = Point3::new(x0, y0, z);
        corners[4 * k + 1] = Point3::new(x1, y0, z);
        corners[4 * k + 2] = Point3::new(x0, y1, z);
        corners[4 * k + 3] = Point3::new(x1, y1, z);
    }
    Ok(Voxel3D { corners })
}
