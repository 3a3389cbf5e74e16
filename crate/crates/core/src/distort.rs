//! Seeded impairment generators for test fixtures.
//!
//! `Ot` is a voxel quantization standing in for octree compression. It is
//! not a codec.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use rand::seq::index;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::{PointCloud, Rgb};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistortionKind {
    /// Color noise; level is σ as a fraction of 255.
    Cn,
    /// Geometry Gaussian noise; level is σ as a fraction of the smallest bounding-box extent.
    Ggn,
    /// Downsampling; level is the keep ratio.
    Ds,
    /// Voxel quantization; level is the octree depth.
    Ot,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 4] = [Self::Cn, Self::Ggn, Self::Ds, Self::Ot];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cn => "cn",
            Self::Ggn => "ggn",
            Self::Ds => "ds",
            Self::Ot => "ot",
        }
    }

    /// Six levels ordered from mildest to most severe.
    pub fn presets(self) -> [f64; 6] {
        match self {
            Self::Cn => [0.02, 0.04, 0.07, 0.11, 0.16, 0.22],
            Self::Ggn => [0.002, 0.005, 0.01, 0.02, 0.035, 0.05],
            Self::Ds => [0.85, 0.7, 0.5, 0.35, 0.2, 0.1],
            Self::Ot => [8.0, 7.0, 6.0, 5.0, 4.0, 3.0],
        }
    }

    fn check_level(self, level: f64) -> Result<()> {
        let ok = match self {
            Self::Cn | Self::Ggn => level >= 0.0 && level.is_finite(),
            Self::Ds => level > 0.0 && level <= 1.0,
            Self::Ot => level.fract() == 0.0 && (1.0..=40.0).contains(&level),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("level {level} is out of range for {}", self.name())))
        }
    }
}

impl std::str::FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cn" => Ok(Self::Cn),
            "ggn" => Ok(Self::Ggn),
            "ds" => Ok(Self::Ds),
            "ot" => Ok(Self::Ot),
            other => Err(Error::domain(format!("unknown distortion kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionStep {
    pub kind: DistortionKind,
    pub level: f64,
}

/// One or more steps applied in order under a single seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub steps: Vec<DistortionStep>,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn single(kind: DistortionKind, level: f64, seed: u64) -> Self {
        Self {
            steps: vec![DistortionStep { kind, level }],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::domain("distortion spec has no steps"));
        }
        self.steps.iter().try_for_each(|s| s.kind.check_level(s.level))
    }
}

/// Applies every step in order. Each step draws from its own stream derived
/// from the spec seed, so inserting a step does not perturb earlier ones.
pub fn apply(cloud: &PointCloud, spec: &DistortionSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut current = cloud.clone();
    for step in &spec.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        current = match step.kind {
            DistortionKind::Cn => color_noise(&current, step.level, &mut rng)?,
            DistortionKind::Ggn => geometry_noise(&current, step.level, &mut rng)?,
            DistortionKind::Ds => downsample(&current, step.level, &mut rng)?,
            DistortionKind::Ot => voxelize(&current, step.level as u32)?,
        };
    }
    Ok(current)
}

fn color_noise(cloud: &PointCloud, level: f64, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    let colors = cloud
        .colors()
        .ok_or_else(|| Error::domain("color noise needs a colored cloud"))?;
    if level == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, level * 255.0).map_err(|e| Error::domain(e.to_string()))?;
    let noisy: Vec<Rgb> = colors
        .iter()
        .map(|c| c.map(|v| (v as f64 + normal.sample(rng)).round().clamp(0.0, 255.0) as u8))
        .collect();
    cloud.clone().with_colors(noisy)
}

fn geometry_noise(cloud: &PointCloud, level: f64, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    if level == 0.0 || cloud.is_empty() {
        return Ok(cloud.clone());
    }
    let sigma = level * cloud.bounding_box()?.min_extent();
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::domain(e.to_string()))?;
    let moved: Vec<Point3<f64>> = cloud
        .positions()
        .iter()
        .map(|p| p + Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)))
        .collect();
    let out = PointCloud::new(moved)?;
    match cloud.colors() {
        Some(c) => out.with_colors(c.to_vec()),
        None => Ok(out),
    }
}

fn downsample(cloud: &PointCloud, keep: f64, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    let n = cloud.len();
    let count = (keep * n as f64).round() as usize;
    if count == 0 {
        return Err(Error::domain(format!(
            "keep ratio {keep} leaves no points out of {n}"
        )));
    }
    let mut picked = index::sample(rng, n, count.min(n)).into_vec();
    picked.sort_unstable();
    Ok(cloud.select(&picked))
}

/// Cell edge of the depth-`depth` lattice: the cube `[-2^m, 2^m]³` around
/// the origin with `2^m ≥ max |coordinate|` is split `depth` times.
pub fn voxel_size(cloud: &PointCloud, depth: u32) -> Option<f64> {
    let extent = cloud
        .positions()
        .iter()
        .flat_map(|p| [p.x.abs(), p.y.abs(), p.z.abs()])
        .fold(0.0, f64::max);
    if extent == 0.0 {
        return None;
    }
    let m = extent.log2().ceil() as i32;
    Some(2f64.powi(m - depth as i32))
}

/// Floors coordinates onto the lattice and merges points that share a cell,
/// averaging their colors. Normals are dropped. Applying the same depth to
/// the output is an exact identity: its coordinates stay within `2^m`, so the
/// second lattice is the same or finer and every point already lies on it.
fn voxelize(cloud: &PointCloud, depth: u32) -> Result<PointCloud> {
    let Some(cell) = voxel_size(cloud, depth) else {
        return Ok(cloud.clone().without_normals());
    };
    let mut cells: BTreeMap<[i64; 3], ([u64; 3], u64)> = BTreeMap::new();
    let colors = cloud.colors();
    for (i, p) in cloud.positions().iter().enumerate() {
        let key = [p.x, p.y, p.z].map(|v| (v / cell).floor() as i64);
        let entry = cells.entry(key).or_insert(([0; 3], 0));
        if let Some(c) = colors {
            for k in 0..3 {
                entry.0[k] += c[i][k] as u64;
            }
        }
        entry.1 += 1;
    }
    let positions = cells
        .keys()
        .map(|k| Point3::new(k[0] as f64 * cell, k[1] as f64 * cell, k[2] as f64 * cell))
        .collect();
    let out = PointCloud::new(positions)?;
    if colors.is_some() {
        let merged = cells
            .values()
            .map(|(sum, n)| sum.map(|s| ((s as f64) / (*n as f64)).round() as u8))
            .collect();
        out.with_colors(merged)
    } else {
        Ok(out)
    }
}
