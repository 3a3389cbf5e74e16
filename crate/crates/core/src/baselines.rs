//! Point-wise comparison metrics: point-to-point and point-to-plane
//! geometry PSNR under MSE or Hausdorff aggregation, and YUV color PSNR.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::color::{rescale, to_yuv};
use crate::error::{Error, Result};
use crate::normals::{estimate_normals, DEFAULT_NORMAL_K};
use crate::report::serde_f64_inf;
use crate::spatial::SpatialIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMetric {
    #[serde(rename = "m-p2po")]
    MseP2Point,
    #[serde(rename = "m-p2pl")]
    MseP2Plane,
    #[serde(rename = "h-p2po")]
    HausdorffP2Point,
    #[serde(rename = "h-p2pl")]
    HausdorffP2Plane,
    #[serde(rename = "psnr-yuv")]
    PsnrYuv,
}

impl BaselineMetric {
    pub const ALL: [BaselineMetric; 5] = [
        Self::MseP2Point,
        Self::MseP2Plane,
        Self::HausdorffP2Point,
        Self::HausdorffP2Plane,
        Self::PsnrYuv,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Self::MseP2Point => "m-p2po",
            Self::MseP2Plane => "m-p2pl",
            Self::HausdorffP2Point => "h-p2po",
            Self::HausdorffP2Plane => "h-p2pl",
            Self::PsnrYuv => "psnr-yuv",
        }
    }

    fn geometry(self) -> Option<(ErrorMode, Aggregation)> {
        match self {
            Self::MseP2Point => Some((ErrorMode::Point, Aggregation::Mse)),
            Self::MseP2Plane => Some((ErrorMode::Plane, Aggregation::Mse)),
            Self::HausdorffP2Point => Some((ErrorMode::Point, Aggregation::Hausdorff)),
            Self::HausdorffP2Plane => Some((ErrorMode::Plane, Aggregation::Hausdorff)),
            Self::PsnrYuv => None,
        }
    }
}

impl std::str::FromStr for BaselineMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::domain(format!("unknown baseline metric '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMode {
    Point,
    Plane,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mse,
    Hausdorff,
}

/// Errors in both directions; `symmetric` is the worse one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymmetricError {
    /// Distorted points against the reference.
    pub forward: f64,
    /// Reference points against the distorted cloud.
    pub backward: f64,
    pub symmetric: f64,
}

impl SymmetricError {
    fn new(forward: f64, backward: f64) -> Self {
        Self {
            forward,
            backward,
            symmetric: forward.max(backward),
        }
    }
}

/// Per-point squared errors of `source` against its nearest `target` point.
/// Plane mode projects the error vector on the target point's normal.
fn directed_errors(
    source: &PointCloud,
    target: &PointCloud,
    target_index: &SpatialIndex,
    target_normals: Option<&[Vector3<f64>]>,
) -> Vec<f64> {
    let tp = target.positions();
    source
        .positions()
        .par_iter()
        .map(|p| {
            let hit = target_index.nearest(p);
            let e = p - tp[hit.index];
            match target_normals {
                Some(n) => e.dot(&n[hit.index]).powi(2),
                None => e.norm_squared(),
            }
        })
        .collect()
}

fn aggregate(errors: &[f64], agg: Aggregation) -> f64 {
    match agg {
        Aggregation::Mse => errors.iter().sum::<f64>() / errors.len() as f64,
        Aggregation::Hausdorff => errors.iter().cloned().fold(0.0, f64::max),
    }
}

/// Normals from the file if present, else PCA with the default `k`.
fn normals_for(cloud: &PointCloud, index: &SpatialIndex) -> Result<Vec<Vector3<f64>>> {
    match cloud.normals() {
        Some(n) => Ok(n.to_vec()),
        None => Ok(estimate_normals(cloud, index, DEFAULT_NORMAL_K)?.normals),
    }
}

/// Geometry error of `distorted` against `reference` in both directions.
/// Each direction uses the normals of the cloud being matched into.
pub fn p2_errors(
    reference: &PointCloud,
    distorted: &PointCloud,
    mode: ErrorMode,
    agg: Aggregation,
) -> Result<SymmetricError> {
    let ctx = PairContext::new(reference, distorted)?;
    ctx.errors(mode, agg)
}

/// Reference and distorted normals.
type NormalPair = (Vec<Vector3<f64>>, Vec<Vector3<f64>>);

/// Indexes and lazily derived normals shared by several metrics.
struct PairContext<'a> {
    reference: &'a PointCloud,
    distorted: &'a PointCloud,
    ref_index: SpatialIndex,
    dist_index: SpatialIndex,
    normals: std::sync::OnceLock<Result<NormalPair, String>>,
}

impl<'a> PairContext<'a> {
    fn new(reference: &'a PointCloud, distorted: &'a PointCloud) -> Result<Self> {
        if reference.is_empty() || distorted.is_empty() {
            return Err(Error::domain("baseline metrics need two nonempty clouds"));
        }
        Ok(Self {
            reference,
            distorted,
            ref_index: SpatialIndex::build(reference)?,
            dist_index: SpatialIndex::build(distorted)?,
            normals: std::sync::OnceLock::new(),
        })
    }

    fn normals(&self) -> Result<&NormalPair> {
        self.normals
            .get_or_init(|| {
                let r = normals_for(self.reference, &self.ref_index).map_err(|e| e.to_string())?;
                let d = normals_for(self.distorted, &self.dist_index).map_err(|e| e.to_string())?;
                Ok((r, d))
            })
            .as_ref()
            .map_err(|e| Error::domain(e.clone()))
    }

    fn errors(&self, mode: ErrorMode, agg: Aggregation) -> Result<SymmetricError> {
        let (rn, dn) = match mode {
            ErrorMode::Point => (None, None),
            ErrorMode::Plane => {
                let (r, d) = self.normals()?;
                (Some(r.as_slice()), Some(d.as_slice()))
            }
        };
        let fwd = directed_errors(self.distorted, self.reference, &self.ref_index, rn);
        let bwd = directed_errors(self.reference, self.distorted, &self.dist_index, dn);
        Ok(SymmetricError::new(aggregate(&fwd, agg), aggregate(&bwd, agg)))
    }

    fn yuv(&self) -> Result<YuvPsnr> {
        let (rc, dc) = match (self.reference.colors(), self.distorted.colors()) {
            (Some(r), Some(d)) => (r, d),
            _ => return Err(Error::domain("color PSNR needs colors in both clouds")),
        };
        let to_scaled = |c: &[crate::cloud::Rgb]| -> Vec<[f64; 3]> {
            c.iter().map(|&v| to_yuv(rescale(v)).map(|x| 255.0 * x)).collect()
        };
        let (ry, dy) = (to_scaled(rc), to_scaled(dc));
        let directed = |src: &PointCloud, src_yuv: &[[f64; 3]], idx: &SpatialIndex, tgt_yuv: &[[f64; 3]]| {
            let sq: Vec<[f64; 3]> = src
                .positions()
                .par_iter()
                .zip(src_yuv)
                .map(|(p, a)| {
                    let b = tgt_yuv[idx.nearest(p).index];
                    [0, 1, 2].map(|k| (a[k] - b[k]).powi(2))
                })
                .collect();
            let n = sq.len() as f64;
            [0, 1, 2].map(|k| sq.iter().map(|e| e[k]).sum::<f64>() / n)
        };
        let fwd = directed(self.distorted, &dy, &self.ref_index, &ry);
        let bwd = directed(self.reference, &ry, &self.dist_index, &dy);
        let mse = [0, 1, 2].map(|k| fwd[k].max(bwd[k]));
        let channel_psnr = mse.map(|e| psnr(255.0 * 255.0, e));
        Ok(YuvPsnr {
            mse,
            channel_psnr,
            psnr: combine_yuv_psnr(channel_psnr),
        })
    }
}

fn psnr(peak2: f64, err: f64) -> f64 {
    if err == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak2 / err).log10()
    }
}

/// `10 log10(3p² / error)`, infinite for zero error.
pub fn geometry_psnr(error: f64, p: f64) -> f64 {
    psnr(3.0 * p * p, error)
}

/// `(6 PSNR_Y + PSNR_U + PSNR_V) / 8`.
pub fn combine_yuv_psnr(channel: [f64; 3]) -> f64 {
    (6.0 * channel[0] + channel[1] + channel[2]) / 8.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct YuvPsnr {
    /// Worse-direction MSE per channel on the 0–255 scale.
    pub mse: [f64; 3],
    #[serde(with = "serde_f64_inf::array3")]
    pub channel_psnr: [f64; 3],
    #[serde(with = "serde_f64_inf")]
    pub psnr: f64,
}

/// Color PSNR of nearest-neighbor matched pairs in BT.709 YUV.
pub fn psnr_yuv(reference: &PointCloud, distorted: &PointCloud) -> Result<YuvPsnr> {
    PairContext::new(reference, distorted)?.yuv()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineResult {
    pub metric: BaselineMetric,
    /// PSNR in dB.
    #[serde(with = "serde_f64_inf")]
    pub value: f64,
    pub symmetric: bool,
    /// Geometry metrics: error in raw coordinate units (squared distance).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<SymmetricError>,
    /// Geometry metrics: the symmetric error divided by `p²`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized_error: Option<f64>,
    /// Geometry metrics: largest reference bounding-box extent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_range: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub color: Option<YuvPsnr>,
}

/// Evaluates the requested metrics, sharing indexes and normals.
pub fn evaluate_baselines(
    reference: &PointCloud,
    distorted: &PointCloud,
    metrics: &[BaselineMetric],
) -> Result<Vec<BaselineResult>> {
    let ctx = PairContext::new(reference, distorted)?;
    let p = reference.bounding_box()?.max_extent();
    metrics
        .iter()
        .map(|&metric| match metric.geometry() {
            Some((mode, agg)) => {
                let err = ctx.errors(mode, agg)?;
                Ok(BaselineResult {
                    metric,
                    value: geometry_psnr(err.symmetric, p),
                    symmetric: true,
                    error: Some(err),
                    normalized_error: Some(if p > 0.0 { err.symmetric / (p * p) } else { f64::NAN }),
                    peak_range: Some(p),
                    color: None,
                })
            }
            None => {
                let yuv = ctx.yuv()?;
                Ok(BaselineResult {
                    metric,
                    value: yuv.psnr,
                    symmetric: true,
                    error: None,
                    normalized_error: None,
                    peak_range: None,
                    color: Some(yuv),
                })
            }
        })
        .collect()
}
