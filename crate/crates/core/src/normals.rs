//! PCA normal estimation over k-nearest-neighbor patches.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::spatial::SpatialIndex;

pub const DEFAULT_NORMAL_K: usize = 12;

// Second-largest eigenvalue below this fraction of the largest counts as rank < 2.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalEstimate {
    pub normals: Vec<Vector3<f64>>,
    /// Points whose patch was colinear or coincident and got `+z`.
    pub degenerate: Vec<usize>,
}

/// Unit normal per point: eigenvector of the smallest eigenvalue of the
/// covariance of the point's `k` nearest neighbors (itself included),
/// oriented so the first nonzero of (z, y, x) is positive.
pub fn estimate_normals(cloud: &PointCloud, index: &SpatialIndex, k: usize) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(Error::domain(format!("normal estimation needs k >= 3, got {k}")));
    }
    if cloud.len() < k {
        return Err(Error::domain(format!(
            "normal estimation with k = {k} needs at least {k} points, cloud has {}",
            cloud.len()
        )));
    }
    let positions = cloud.positions();
    let rows: Vec<(Vector3<f64>, bool)> = positions
        .par_iter()
        .map(|p| {
            let hits = index.knn_squared(p, k);
            let pts: Vec<Vector3<f64>> = hits.iter().map(|h| positions[h.index].coords).collect();
            patch_normal(&pts)
        })
        .collect();
    let degenerate = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.1.then_some(i))
        .collect();
    Ok(NormalEstimate {
        normals: rows.into_iter().map(|r| r.0).collect(),
        degenerate,
    })
}

/// Normal of a point patch and whether it fell back to `+z`.
pub fn patch_normal(pts: &[Vector3<f64>]) -> (Vector3<f64>, bool) {
    let n = pts.len() as f64;
    let mean = pts.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, top) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(top > 0.0) || mid <= RANK_TOLERANCE * top {
        return (Vector3::z(), true);
    }
    let v = eig.eigenvectors.column(order[0]).normalize();
    (orient(v), false)
}

fn orient(v: Vector3<f64>) -> Vector3<f64> {
    const EPS: f64 = 1e-12;
    for c in [2, 1, 0] {
        if v[c].abs() > EPS {
            return if v[c] < 0.0 { -v } else { v };
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn estimate(points: Vec<Point3<f64>>) -> NormalEstimate {
        let cloud = PointCloud::new(points).unwrap();
        let index = SpatialIndex::build(&cloud).unwrap();
        estimate_normals(&cloud, &index, DEFAULT_NORMAL_K).unwrap()
    }

    #[test]
    fn plane_normals_point_up() {
        let pts = (0..400)
            .map(|i| Point3::new((i % 20) as f64, (i / 20) as f64, 0.0))
            .collect();
        let est = estimate(pts);
        assert!(est.degenerate.is_empty());
        for n in &est.normals {
            assert!((n - Vector3::z()).norm() < 1e-12);
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point3<f64>> = (0..4000)
            .map(|_| {
                let v = Vector3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                );
                Point3::from(v.normalize())
            })
            .collect();
        let est = estimate(pts.clone());
        for (p, n) in pts.iter().zip(&est.normals) {
            assert!(n.dot(&p.coords).abs() >= 0.99);
            assert!((n.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn colinear_points_fall_back() {
        let pts = (0..20).map(|i| Point3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        let est = estimate(pts);
        assert_eq!(est.degenerate.len(), 20);
        assert!(est.normals.iter().all(|n| *n == Vector3::z()));
    }

    #[test]
    fn orientation_prefers_z_then_y_then_x() {
        assert_eq!(orient(Vector3::new(0.0, 0.0, -1.0)), Vector3::z());
        assert_eq!(orient(Vector3::new(1.0, -1.0, 0.0)), Vector3::new(-1.0, 1.0, 0.0));
        assert_eq!(orient(Vector3::new(-1.0, 0.0, 0.0)), Vector3::x());
    }

    #[test]
    fn too_few_points() {
        let cloud = PointCloud::new(vec![Point3::origin(); 5]).unwrap();
        let index = SpatialIndex::build(&cloud).unwrap();
        assert!(estimate_normals(&cloud, &index, 12).is_err());
    }
}
