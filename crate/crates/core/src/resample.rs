//! Keypoint selection on the reference cloud.
//!
//! Each point gets a spatial-frequency score: the norm of its position after
//! a Haar-like high-pass graph filter `(I − A)^(L−1)`, where `A = D⁻¹W` is
//! the row-normalized Gaussian kNN adjacency. Keypoints are then drawn
//! without replacement with probability proportional to that score, so
//! contour and edge points dominate the selection.

use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::spatial::SpatialIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleMethod {
    HighPass,
    Random,
}

/// How many keypoints to draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeypointCount {
    /// `floor(ratio · N)`, at least 1.
    Ratio(f64),
    Exact(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleConfig {
    pub count: KeypointCount,
    pub filter_length: usize,
    pub knn_k: usize,
    pub method: ResampleMethod,
    pub seed: u64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            count: KeypointCount::Ratio(1e-3),
            filter_length: 4,
            knn_k: 10,
            method: ResampleMethod::HighPass,
            seed: 0,
        }
    }
}

impl ResampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filter_length < 2 {
            return Err(Error::domain("filter length must be at least 2"));
        }
        if self.knn_k == 0 {
            return Err(Error::domain("shift-operator graph needs knn_k >= 1"));
        }
        match self.count {
            KeypointCount::Ratio(r) if !(r > 0.0 && r <= 1.0) => {
                Err(Error::domain(format!("keypoint ratio must lie in (0, 1], got {r}")))
            }
            KeypointCount::Exact(0) => Err(Error::domain("keypoint count must be positive")),
            _ => Ok(()),
        }
    }

    /// Number of keypoints for a cloud of `n` points.
    pub fn beta_for(&self, n: usize) -> usize {
        match self.count {
            KeypointCount::Ratio(r) => ((n as f64 * r).floor() as usize).max(1),
            KeypointCount::Exact(b) => b,
        }
    }
}

/// Selected reference-cloud indices, ascending.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeypointSet {
    pub indices: Vec<usize>,
    /// Frequency scores of the selected points (high-pass method only).
    pub scores: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyScores {
    pub scores: Vec<f64>,
    /// Every score is zero (e.g. all points coincide).
    pub degenerate: bool,
}

/// Row-normalized kNN shift operator in flat storage.
struct ShiftOperator {
    k: usize,
    neighbors: Vec<u32>,
    weights: Vec<f64>,
}

impl ShiftOperator {
    fn build(cloud: &PointCloud, index: &SpatialIndex, k: usize) -> Self {
        let rows: Vec<(Vec<u32>, Vec<f64>)> = cloud
            .positions()
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut hits = index.knn_squared(p, k + 1);
                match hits.iter().position(|h| h.index == i) {
                    Some(slot) => {
                        hits.remove(slot);
                    }
                    None => {
                        hits.pop();
                    }
                }
                let sigma2 = hits.iter().map(|h| h.dist2).sum::<f64>() / hits.len() as f64;
                let raw: Vec<f64> = hits
                    .iter()
                    .map(|h| {
                        if sigma2 > 0.0 {
                            (-h.dist2 / sigma2).exp()
                        } else {
                            1.0
                        }
                    })
                    .collect();
                let degree: f64 = raw.iter().sum();
                (
                    hits.iter().map(|h| h.index as u32).collect(),
                    raw.iter().map(|w| w / degree).collect(),
                )
            })
            .collect();
        let mut neighbors = Vec::with_capacity(rows.len() * k);
        let mut weights = Vec::with_capacity(rows.len() * k);
        for (n, w) in rows {
            neighbors.extend(n);
            weights.extend(w);
        }
        Self {
            k,
            neighbors,
            weights,
        }
    }

    /// `x − A x` for a 3-channel signal.
    fn high_pass(&self, x: &[[f64; 3]]) -> Vec<[f64; 3]> {
        x.par_iter()
            .enumerate()
            .map(|(i, xi)| {
                let row = i * self.k..(i + 1) * self.k;
                // Rows of A sum to one, so (x − Ax)_i = Σ_j a_ij (x_i − x_j).
                let mut acc = [0.0; 3];
                for (&j, &a) in self.neighbors[row.clone()].iter().zip(&self.weights[row]) {
                    let xj = &x[j as usize];
                    for c in 0..3 {
                        acc[c] += a * (xi[c] - xj[c]);
                    }
                }
                acc
            })
            .collect()
    }
}

/// Per-point magnitude of the high-pass filtered position signal.
pub fn frequency_scores(
    cloud: &PointCloud,
    index: &SpatialIndex,
    config: &ResampleConfig,
) -> Result<FrequencyScores> {
    config.validate()?;
    if cloud.len() < config.knn_k + 1 {
        return Err(Error::domain(format!(
            "high-pass resampling needs at least {} points, cloud has {}",
            config.knn_k + 1,
            cloud.len()
        )));
    }
    let op = ShiftOperator::build(cloud, index, config.knn_k);
    let mut signal: Vec<[f64; 3]> = cloud.positions().iter().map(|p| [p.x, p.y, p.z]).collect();
    for _ in 1..config.filter_length {
        signal = op.high_pass(&signal);
    }
    let scores: Vec<f64> = signal
        .iter()
        .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
        .collect();
    let degenerate = scores.iter().all(|&s| s == 0.0);
    Ok(FrequencyScores { scores, degenerate })
}

/// Draws the keypoint set. Deterministic for a given config and cloud.
pub fn resample(cloud: &PointCloud, index: &SpatialIndex, config: &ResampleConfig) -> Result<KeypointSet> {
    config.validate()?;
    let n = cloud.len();
    let beta = config.beta_for(n);
    if beta > n {
        return Err(Error::domain(format!(
            "cannot draw {beta} keypoints from {n} points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut warnings = Vec::new();

    let (mut indices, all_scores) = match config.method {
        ResampleMethod::Random => (index::sample(&mut rng, n, beta).into_vec(), None),
        ResampleMethod::HighPass => {
            let freq = frequency_scores(cloud, index, config)?;
            let picked = if freq.degenerate {
                warnings.push("all frequency scores are zero; fell back to uniform sampling".into());
                index::sample(&mut rng, n, beta).into_vec()
            } else {
                weighted_sample(&freq.scores, beta, &mut rng)
            };
            (picked, Some(freq.scores))
        }
    };
    indices.sort_unstable();
    let scores = all_scores.map(|s| indices.iter().map(|&i| s[i]).collect());
    Ok(KeypointSet {
        indices,
        scores,
        warnings,
    })
}

/// Weighted sampling without replacement by exponential keys: each item gets
/// `ln(u) / w` and the `beta` largest keys win, which matches sequential
/// proportional draws. Zero-weight items only fill a remainder, uniformly.
fn weighted_sample(weights: &[f64], beta: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(weights.len());
    let mut zeros = Vec::new();
    for (i, &w) in weights.iter().enumerate() {
        let u: f64 = 1.0 - rng.random::<f64>();
        if w > 0.0 {
            keyed.push((u.ln() / w, i));
        } else {
            zeros.push(i);
        }
    }
    let take = beta.min(keyed.len());
    if take < keyed.len() && take > 0 {
        keyed.select_nth_unstable_by(take - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    }
    let mut out: Vec<usize> = keyed[..take].iter().map(|&(_, i)| i).collect();
    let rest = beta - take;
    if rest > 0 {
        out.extend(index::sample(rng, zeros.len(), rest).into_iter().map(|j| zeros[j]));
    }
    out
}

/// Writes `index,score,x,y,z` rows for inspection of the keypoint skeleton.
pub fn write_keypoints_csv<W: Write>(out: W, cloud: &PointCloud, keypoints: &KeypointSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::Schema(format!("csv write failed: {e}"));
    w.write_record(["index", "score", "x", "y", "z"]).map_err(wrap)?;
    for (slot, &i) in keypoints.indices.iter().enumerate() {
        let p = cloud.positions()[i];
        let score = keypoints
            .scores
            .as_ref()
            .map_or(String::new(), |s| s[slot].to_string());
        w.write_record([
            i.to_string(),
            score,
            p.x.to_string(),
            p.y.to_string(),
            p.z.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::Schema(format!("csv flush failed: {e}")))
}
