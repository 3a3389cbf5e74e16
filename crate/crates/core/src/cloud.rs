//! The point cloud value shared by every stage of the pipeline.

use nalgebra::{Point3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance on the Euclidean norm of stored normals.
pub const NORMAL_NORM_TOLERANCE: f64 = 1e-6;

/// 8-bit RGB triple as stored on disk.
pub type Rgb = [u8; 3];

/// An immutable set of points with optional per-point colors and normals.
///
/// Every attribute sequence that is present has exactly one entry per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Point3<f64>>,
    colors: Option<Vec<Rgb>>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    /// Geometry-only cloud. Fails on the first non-finite coordinate.
    pub fn new(positions: Vec<Point3<f64>>) -> Result<Self> {
        if let Some(index) = positions
            .iter()
            .position(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(Error::Validation {
                index,
                message: "non-finite coordinate".into(),
            });
        }
        Ok(Self {
            positions,
            colors: None,
            normals: None,
        })
    }

    pub fn with_colors(mut self, colors: Vec<Rgb>) -> Result<Self> {
        if colors.len() != self.positions.len() {
            return Err(Error::domain(format!(
                "color count {} does not match point count {}",
                colors.len(),
                self.positions.len()
            )));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn with_normals(mut self, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if normals.len() != self.positions.len() {
            return Err(Error::domain(format!(
                "normal count {} does not match point count {}",
                normals.len(),
                self.positions.len()
            )));
        }
        if let Some(index) = normals
            .iter()
            .position(|n| !((n.norm() - 1.0).abs() <= NORMAL_NORM_TOLERANCE))
        {
            return Err(Error::Validation {
                index,
                message: "normal is not unit length".into(),
            });
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3<f64>] {
        &self.positions
    }

    pub fn colors(&self) -> Option<&[Rgb]> {
        self.colors.as_deref()
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn has_colors(&self) -> bool {
        self.colors.is_some()
    }

    /// New cloud holding the given points, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
        }
    }

    /// Same cloud with every position passed through `f`. Normals are kept.
    pub fn map_positions(&self, f: impl FnMut(&Point3<f64>) -> Point3<f64>) -> Result<Self> {
        let mut out = PointCloud::new(self.positions.iter().map(f).collect())?;
        out.colors = self.colors.clone();
        out.normals = self.normals.clone();
        Ok(out)
    }

    pub fn bounding_box(&self) -> Result<BoundingBox> {
        BoundingBox::of(&self.positions)
    }
}

/// Axis-aligned bounds of a nonempty point set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoundingBox {
    pub fn of(points: &[Point3<f64>]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::domain("bounding box of an empty cloud"))?;
        let mut min = [first.x, first.y, first.z];
        let mut max = min;
        for p in &points[1..] {
            for axis in 0..3 {
                min[axis] = min[axis].min(p[axis]);
                max[axis] = max[axis].max(p[axis]);
            }
        }
        Ok(Self { min, max })
    }

    pub fn extents(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    /// Smallest side length, the scale that sets the clustering radius.
    pub fn min_extent(&self) -> f64 {
        let e = self.extents();
        e[0].min(e[1]).min(e[2])
    }

    /// Largest side length, the peak used by geometry PSNR.
    pub fn max_extent(&self) -> f64 {
        let e = self.extents();
        e[0].max(e[1]).max(e[2])
    }

    pub fn diagonal(&self) -> f64 {
        let e = self.extents();
        (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64, z: f64) -> Point3<f64> {
        Point3::new(x, y, z)
    }

    #[test]
    fn table_axis_ranges() {
        let cloud = PointCloud::new(vec![p(182.0, 10.0, 121.0), p(575.0, 987.0, 353.0)]).unwrap();
        let bb = cloud.bounding_box().unwrap();
        assert_eq!(bb.extents(), [393.0, 977.0, 232.0]);
        assert_eq!(bb.min_extent(), 232.0);
        assert_eq!(bb.max_extent(), 977.0);
    }

    #[test]
    fn single_point_box_is_degenerate() {
        let bb = PointCloud::new(vec![p(1.0, 2.0, 3.0)])
            .unwrap()
            .bounding_box()
            .unwrap();
        assert_eq!(bb.extents(), [0.0; 3]);
        assert_eq!(bb.min_extent(), 0.0);
        assert_eq!(bb.max_extent(), 0.0);
    }

    #[test]
    fn unit_cube() {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push(p((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64));
        }
        let bb = BoundingBox::of(&pts).unwrap();
        assert_eq!(bb.extents(), [1.0; 3]);
        assert_eq!(bb.min_extent(), 1.0);
        assert_eq!(bb.max_extent(), 1.0);
    }

    #[test]
    fn empty_box_is_domain_error() {
        let cloud = PointCloud::new(vec![]).unwrap();
        assert!(matches!(cloud.bounding_box(), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_non_finite_and_bad_normals() {
        let err = PointCloud::new(vec![p(0.0, 0.0, 0.0), p(f64::NAN, 0.0, 0.0)]).unwrap_err();
        assert!(matches!(err, Error::Validation { index: 1, .. }));

        let cloud = PointCloud::new(vec![p(0.0, 0.0, 0.0)]).unwrap();
        assert!(cloud
            .clone()
            .with_normals(vec![Vector3::new(0.0, 0.0, 2.0)])
            .is_err());
        assert!(cloud.with_colors(vec![]).is_err());
    }
}
