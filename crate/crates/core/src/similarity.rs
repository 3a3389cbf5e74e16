//! Local-graph similarity score between a reference and a distorted cloud.
//!
//! Pipeline: draw keypoints on the reference, gather a θ-radius cluster
//! around each keypoint in both clouds, weight edges to the cluster center
//! with a Gaussian cut at τ, then compare gradient mass, gradient mean and
//! gradient covariance channel by channel. Channel similarities are pooled
//! per graph and graph scores are averaged into `Q`.

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::color::{decompose, rescale, ColorSpaceConfig};
use crate::error::{Error, Result};
use crate::graph::{mixed_edge_weight, GraphParams, SignalAttribute, SignalKind, WeightedNeighborhood};
use crate::normals::{estimate_normals, DEFAULT_NORMAL_K};
use crate::resample::{resample, KeypointSet, ResampleConfig};
use crate::spatial::SpatialIndex;

/// How the three feature similarities of one channel are fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeaturePooling {
    Multiply,
    Average,
}

/// How channel scores are fused into one graph score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelPooling {
    /// `Σ γ_C |S_C| / Σ γ_C`.
    WeightedAverage,
    /// `Π |S_C|^(γ_C / Σ γ_C)`.
    Multiply,
}

/// Named (feature, channel) pooling combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingPreset {
    C1,
    C2,
    C3,
    C4,
}

impl PoolingPreset {
    pub fn parts(self) -> (FeaturePooling, ChannelPooling) {
        match self {
            PoolingPreset::C1 => (FeaturePooling::Average, ChannelPooling::WeightedAverage),
            PoolingPreset::C2 => (FeaturePooling::Multiply, ChannelPooling::WeightedAverage),
            PoolingPreset::C3 => (FeaturePooling::Average, ChannelPooling::Multiply),
            PoolingPreset::C4 => (FeaturePooling::Multiply, ChannelPooling::Multiply),
        }
    }
}

/// Which points define τ, the k-th nearest distance to the keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauScope {
    /// Both θ-clusters pooled together.
    Union,
    /// The reference θ-cluster only.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphSimConfig {
    pub theta_fraction: f64,
    pub matching_k: usize,
    pub t0: f64,
    pub t1: f64,
    pub t2: f64,
    pub color: ColorSpaceConfig,
    pub feature_pooling: FeaturePooling,
    pub channel_pooling: ChannelPooling,
    pub signals: Vec<SignalKind>,
    pub tau_scope: TauScope,
    /// Blend normalized color distance into edge weights. Experimental.
    pub mixed_graph: bool,
    pub resample: ResampleConfig,
}

impl Default for GraphSimConfig {
    fn default() -> Self {
        let (feature_pooling, channel_pooling) = PoolingPreset::C2.parts();
        Self {
            theta_fraction: 0.1,
            matching_k: 50,
            t0: 1e-3,
            t1: 1e-3,
            t2: 1e-3,
            color: ColorSpaceConfig::default(),
            feature_pooling,
            channel_pooling,
            signals: vec![SignalKind::Color],
            tau_scope: TauScope::Union,
            mixed_graph: false,
            resample: ResampleConfig::default(),
        }
    }
}

impl GraphSimConfig {
    pub fn with_pooling(mut self, preset: PoolingPreset) -> Self {
        (self.feature_pooling, self.channel_pooling) = preset.parts();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_fraction > 0.0 && self.theta_fraction.is_finite()) {
            return Err(Error::domain(format!(
                "theta fraction must be positive, got {}",
                self.theta_fraction
            )));
        }
        if self.matching_k == 0 {
            return Err(Error::domain("matching k must be at least 1"));
        }
        for (name, t) in [("T0", self.t0), ("T1", self.t1), ("T2", self.t2)] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::domain(format!("stabilizer {name} must be positive, got {t}")));
            }
        }
        if self.signals.is_empty() {
            return Err(Error::domain("at least one signal kind is required"));
        }
        ColorSpaceConfig::with_weights(self.color.space, self.color.weights)?;
        self.resample.validate()
    }
}

/// Weighted neighborhoods of one keypoint in both clouds.
///
/// Neighbor indices point into the full clouds. Distances are measured from
/// the keypoint position; each side's center is its point nearest to it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalGraphPair {
    pub keypoint: [f64; 3],
    pub reference: Option<WeightedNeighborhood>,
    pub distorted: Option<WeightedNeighborhood>,
    pub tau: f64,
    pub sigma2: f64,
    /// θ-cluster sizes, centers included.
    pub reference_cluster: usize,
    pub distorted_cluster: usize,
}

/// k-th smallest of `distances`, or the largest when there are fewer than k.
pub fn tau_from_distances(distances: &mut [f64], k: usize) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    distances.sort_by(f64::total_cmp);
    distances[k.min(distances.len()) - 1]
}

/// Clustering radius θ and the geometry scale used by mixed weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphExtent {
    pub theta: f64,
    /// Largest reference bounding-box extent.
    pub scale: f64,
}

impl GraphExtent {
    pub fn of(reference: &PointCloud, theta_fraction: f64) -> Result<Self> {
        let bbox = reference.bounding_box()?;
        Ok(Self {
            theta: theta_fraction * bbox.min_extent(),
            scale: bbox.max_extent(),
        })
    }
}

pub fn build_local_graph_pair(
    keypoint: &Point3<f64>,
    reference: (&PointCloud, &SpatialIndex),
    distorted: (&PointCloud, &SpatialIndex),
    extent: &GraphExtent,
    config: &GraphSimConfig,
) -> Result<LocalGraphPair> {
    let theta = extent.theta;
    let ref_hits = reference.1.radius_query(keypoint, theta)?;
    let dist_hits = distorted.1.radius_query(keypoint, theta)?;
    let mut pool: Vec<f64> = match config.tau_scope {
        TauScope::Union => ref_hits.iter().chain(&dist_hits).map(|h| h.distance).collect(),
        TauScope::Reference => ref_hits.iter().map(|h| h.distance).collect(),
    };
    let tau = tau_from_distances(&mut pool, config.matching_k);
    let params = GraphParams::from_tau(tau);

    let side = |hits: &[crate::spatial::Neighbor]| {
        hits.first().map(|center| {
            WeightedNeighborhood::from_candidates(
                center.index,
                hits.iter().map(|h| (h.index, h.distance)),
                &params,
            )
        })
    };
    let mut pair = LocalGraphPair {
        keypoint: [keypoint.x, keypoint.y, keypoint.z],
        reference: side(&ref_hits),
        distorted: side(&dist_hits),
        tau,
        sigma2: params.sigma2,
        reference_cluster: ref_hits.len(),
        distorted_cluster: dist_hits.len(),
    };
    if config.mixed_graph {
        let scale = extent.scale;
        for (nbhd, cloud) in [(&mut pair.reference, reference.0), (&mut pair.distorted, distorted.0)] {
            if let Some(nbhd) = nbhd {
                reweight_mixed(nbhd, cloud, tau, scale)?;
            }
        }
    }
    Ok(pair)
}

/// Replaces geometry-only weights with the geometry/color blend. Geometry is
/// divided by `scale`, colors are unit-range RGB, and both variances follow
/// the `(τ/scale)² / 2` rule.
fn reweight_mixed(nbhd: &mut WeightedNeighborhood, cloud: &PointCloud, tau: f64, scale: f64) -> Result<()> {
    let colors = cloud
        .colors()
        .ok_or_else(|| Error::domain("mixed graph weights need colors in both clouds"))?;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let tau_n = tau / scale;
    let s2 = (tau_n * tau_n / 2.0).max(f64::MIN_POSITIVE);
    let center = rescale(colors[nbhd.center]);
    for ((w, &j), &d) in nbhd.weights.iter_mut().zip(&nbhd.neighbors).zip(&nbhd.distances) {
        let c = rescale(colors[j]);
        let dc = ((c[0] - center[0]).powi(2) + (c[1] - center[1]).powi(2) + (c[2] - center[2]).powi(2)).sqrt();
        *w = mixed_edge_weight(d / scale, dc, s2, s2, tau_n);
    }
    Ok(())
}

/// Positionally corresponding neighbor slots of the two neighborhoods.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Alignment {
    pub reference: Vec<usize>,
    pub distorted: Vec<usize>,
}

impl Alignment {
    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }
}

/// The smaller neighborhood (reference on ties) is the baseline, kept in
/// slot order; each baseline neighbor is matched to its nearest neighbor
/// on the other side. Many-to-one matches are allowed.
pub fn match_and_align(
    reference: &WeightedNeighborhood,
    ref_positions: &[Point3<f64>],
    distorted: &WeightedNeighborhood,
    dist_positions: &[Point3<f64>],
) -> Alignment {
    if reference.is_empty() || distorted.is_empty() {
        return Alignment {
            reference: Vec::new(),
            distorted: Vec::new(),
        };
    }
    let ref_pts: Vec<Point3<f64>> = reference.neighbors.iter().map(|&i| ref_positions[i]).collect();
    let dist_pts: Vec<Point3<f64>> = distorted.neighbors.iter().map(|&i| dist_positions[i]).collect();
    let nearest = |q: &Point3<f64>, among: &[Point3<f64>]| {
        let mut best = (f64::INFINITY, 0usize);
        for (slot, p) in among.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if d2 < best.0 {
                best = (d2, slot);
            }
        }
        best.1
    };
    if reference.len() <= distorted.len() {
        Alignment {
            reference: (0..ref_pts.len()).collect(),
            distorted: ref_pts.iter().map(|q| nearest(q, &dist_pts)).collect(),
        }
    } else {
        Alignment {
            reference: dist_pts.iter().map(|q| nearest(q, &ref_pts)).collect(),
            distorted: (0..dist_pts.len()).collect(),
        }
    }
}

/// Per-channel gradient moments of one neighborhood.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientMoments {
    /// `Σ √w_j (f_j − f_c)` over every retained neighbor.
    pub mass: Vec<f64>,
    /// Mean of the matched gradient sequence.
    pub mean: Vec<f64>,
    /// Population variance of the matched gradient sequence.
    pub variance: Vec<f64>,
    /// Matched gradient sequence, one vector per channel.
    pub matched: Vec<Vec<f64>>,
}

/// Edge-weighted gradients `√w_j (f_j − f_c)`, one vector per channel, in slot order.
pub fn edge_gradients(nbhd: &WeightedNeighborhood, f: &SignalAttribute) -> Vec<Vec<f64>> {
    let center = f.value(nbhd.center);
    (0..f.channels())
        .map(|c| {
            nbhd.neighbors
                .iter()
                .zip(&nbhd.weights)
                .map(|(&j, &w)| w.sqrt() * (f.value(j)[c] - center[c]))
                .collect()
        })
        .collect()
}

/// `matched_order` lists neighbor slots, typically one side of an [`Alignment`].
pub fn gradient_moments(
    nbhd: &WeightedNeighborhood,
    f: &SignalAttribute,
    matched_order: &[usize],
) -> Result<GradientMoments> {
    if matched_order.is_empty() {
        return Err(Error::domain("gradient moments need at least one matched neighbor"));
    }
    let grads = edge_gradients(nbhd, f);
    let mass = grads.iter().map(|g| g.iter().sum()).collect();
    let matched: Vec<Vec<f64>> = grads
        .iter()
        .map(|g| matched_order.iter().map(|&s| g[s]).collect())
        .collect();
    let mean = matched.iter().map(|g| mean_of(g)).collect();
    let variance = matched.iter().map(|g| covariance(g, g)).collect();
    Ok(GradientMoments {
        mass,
        mean,
        variance,
        matched,
    })
}

fn mean_of(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population covariance `E[g g'] − E[g] E[g']`, evaluated in centered form.
///
/// # Panics
/// If the sequences differ in length or are empty.
pub fn covariance(g: &[f64], g2: &[f64]) -> f64 {
    assert_eq!(g.len(), g2.len(), "covariance of sequences with different lengths");
    assert!(!g.is_empty(), "covariance of empty sequences");
    let (m1, m2) = (mean_of(g), mean_of(g2));
    g.iter().zip(g2).map(|(a, b)| (a - m1) * (b - m2)).sum::<f64>() / g.len() as f64
}

/// `(2ab + t) / (a² + b² + t)`.
pub fn ratio_similarity(a: f64, b: f64, t: f64) -> f64 {
    (2.0 * a * b + t) / (a * a + b * b + t)
}

/// `(c + t) / (σ_r σ_d + t)`, clamped to [−1, 1] against rounding.
pub fn covariance_similarity(c: f64, var_r: f64, var_d: f64, t: f64) -> f64 {
    ((c + t) / (var_r.sqrt() * var_d.sqrt() + t)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelSimilarity {
    pub sim_m: f64,
    pub sim_mu: f64,
    pub sim_c: f64,
    /// Feature-pooled channel score `S_C`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindScore {
    pub kind: SignalKind,
    pub channels: Vec<ChannelSimilarity>,
    /// Channel-pooled score.
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphStatus {
    Scored,
    /// The distorted side had no usable neighborhood; scored 0.
    EmptyDistorted,
    /// The reference side could not form an edge; excluded from `Q`.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphScore {
    pub keypoint: usize,
    pub status: GraphStatus,
    pub tau: f64,
    pub reference_neighbors: usize,
    pub distorted_neighbors: usize,
    pub matched: usize,
    pub kinds: Vec<KindScore>,
    /// Attribute-averaged graph score `S`; absent for skipped graphs.
    pub score: Option<f64>,
}

/// Reference and distorted signal of one kind plus its channel weights.
#[derive(Debug, Clone)]
pub struct SignalPair {
    pub kind: SignalKind,
    pub weights: Vec<f64>,
    pub reference: SignalAttribute,
    pub distorted: SignalAttribute,
}

fn pool_features(sim: [f64; 3], pooling: FeaturePooling) -> f64 {
    match pooling {
        FeaturePooling::Multiply => sim[0] * sim[1] * sim[2],
        FeaturePooling::Average => (sim[0] + sim[1] + sim[2]) / 3.0,
    }
}

/// Pools channel scores with weights `γ_C`, always on `|S_C|`.
pub fn pool_channels(scores: &[f64], weights: &[f64], pooling: ChannelPooling) -> f64 {
    let total: f64 = weights.iter().sum();
    match pooling {
        ChannelPooling::WeightedAverage => {
            scores.iter().zip(weights).map(|(s, w)| w * s.abs()).sum::<f64>() / total
        }
        ChannelPooling::Multiply => scores
            .iter()
            .zip(weights)
            .map(|(s, w)| if *w == 0.0 { 1.0 } else { s.abs().powf(w / total) })
            .product(),
    }
}

/// Channel and attribute pooled similarity of one local graph pair.
pub fn score_graph(
    pair: &LocalGraphPair,
    ref_positions: &[Point3<f64>],
    dist_positions: &[Point3<f64>],
    signals: &[SignalPair],
    config: &GraphSimConfig,
) -> Result<GraphScore> {
    let mut out = GraphScore {
        keypoint: 0,
        status: GraphStatus::Skipped,
        tau: pair.tau,
        reference_neighbors: pair.reference.as_ref().map_or(0, |n| n.len()),
        distorted_neighbors: pair.distorted.as_ref().map_or(0, |n| n.len()),
        matched: 0,
        kinds: Vec::new(),
        score: None,
    };
    let Some(reference) = pair.reference.as_ref().filter(|n| !n.is_empty()) else {
        return Ok(out);
    };
    let Some(distorted) = pair.distorted.as_ref().filter(|n| !n.is_empty()) else {
        out.status = GraphStatus::EmptyDistorted;
        out.score = Some(0.0);
        return Ok(out);
    };
    let alignment = match_and_align(reference, ref_positions, distorted, dist_positions);
    out.matched = alignment.len();

    for signal in signals {
        let mr = gradient_moments(reference, &signal.reference, &alignment.reference)?;
        let md = gradient_moments(distorted, &signal.distorted, &alignment.distorted)?;
        let channels: Vec<ChannelSimilarity> = (0..signal.reference.channels())
            .map(|c| {
                let sim_m = ratio_similarity(mr.mass[c], md.mass[c], config.t0);
                let sim_mu = ratio_similarity(mr.mean[c], md.mean[c], config.t1);
                let cg = covariance(&mr.matched[c], &md.matched[c]);
                let sim_c = covariance_similarity(cg, mr.variance[c], md.variance[c], config.t2);
                ChannelSimilarity {
                    sim_m,
                    sim_mu,
                    sim_c,
                    score: pool_features([sim_m, sim_mu, sim_c], config.feature_pooling),
                }
            })
            .collect();
        let scores: Vec<f64> = channels.iter().map(|c| c.score).collect();
        out.kinds.push(KindScore {
            kind: signal.kind,
            score: pool_channels(&scores, &signal.weights, config.channel_pooling),
            channels,
        });
    }
    out.status = GraphStatus::Scored;
    out.score = Some(out.kinds.iter().map(|k| k.score).sum::<f64>() / out.kinds.len() as f64);
    Ok(out)
}

/// Mean channel scores of one signal kind over scored and empty graphs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelMeans {
    pub kind: SignalKind,
    pub means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityScore {
    /// Mean graph score over non-skipped graphs.
    pub q: f64,
    pub theta: f64,
    pub keypoints: Vec<usize>,
    pub scored: usize,
    pub empty_distorted: usize,
    pub skipped: usize,
    pub channel_means: Vec<ChannelMeans>,
    pub graphs: Vec<GraphScore>,
    pub warnings: Vec<String>,
}

/// Prepared inputs for repeated scoring of one cloud pair.
pub struct GraphSimScorer<'a> {
    reference: &'a PointCloud,
    distorted: &'a PointCloud,
    ref_index: SpatialIndex,
    dist_index: SpatialIndex,
    signals: Vec<SignalPair>,
    extent: GraphExtent,
    config: GraphSimConfig,
    warnings: Vec<String>,
}

impl<'a> GraphSimScorer<'a> {
    pub fn new(reference: &'a PointCloud, distorted: &'a PointCloud, config: &GraphSimConfig) -> Result<Self> {
        config.validate()?;
        if reference.is_empty() {
            return Err(Error::domain("reference cloud is empty"));
        }
        if distorted.is_empty() {
            return Err(Error::domain("distorted cloud is empty"));
        }
        let extent = GraphExtent::of(reference, config.theta_fraction)?;
        let ref_index = SpatialIndex::build(reference)?;
        let dist_index = SpatialIndex::build(distorted)?;
        let mut warnings = Vec::new();
        let mut kinds: Vec<SignalKind> = Vec::new();
        for &k in &config.signals {
            if !kinds.contains(&k) {
                kinds.push(k);
            }
        }
        let signals = kinds
            .iter()
            .map(|&kind| {
                build_signal_pair(kind, reference, &ref_index, distorted, &dist_index, config, &mut warnings)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            reference,
            distorted,
            ref_index,
            dist_index,
            signals,
            extent,
            config: config.clone(),
            warnings,
        })
    }

    pub fn theta(&self) -> f64 {
        self.extent.theta
    }

    pub fn reference_index(&self) -> &SpatialIndex {
        &self.ref_index
    }

    /// Draws keypoints with the configured resampler under `seed`.
    pub fn keypoints(&self, seed: u64) -> Result<KeypointSet> {
        let mut rc = self.config.resample;
        rc.seed = seed;
        resample(self.reference, &self.ref_index, &rc)
    }

    pub fn score(&self) -> Result<SimilarityScore> {
        self.score_seed(self.config.resample.seed)
    }

    pub fn score_seed(&self, seed: u64) -> Result<SimilarityScore> {
        let keypoints = self.keypoints(seed)?;
        let mut out = self.score_keypoints(&keypoints.indices)?;
        out.warnings.extend(keypoints.warnings);
        Ok(out)
    }

    /// Scores graphs centered at the given reference indices.
    pub fn score_keypoints(&self, keypoints: &[usize]) -> Result<SimilarityScore> {
        let ref_pos = self.reference.positions();
        let dist_pos = self.distorted.positions();
        let graphs = keypoints
            .par_iter()
            .map(|&k| {
                let s_k = ref_pos.get(k).ok_or_else(|| {
                    Error::domain(format!("keypoint {k} is outside the reference cloud"))
                })?;
                let pair = build_local_graph_pair(
                    s_k,
                    (self.reference, &self.ref_index),
                    (self.distorted, &self.dist_index),
                    &self.extent,
                    &self.config,
                )?;
                let mut g = score_graph(&pair, ref_pos, dist_pos, &self.signals, &self.config)?;
                g.keypoint = k;
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut sum = 0.0;
        let (mut scored, mut empty, mut skipped) = (0, 0, 0);
        let mut channel_sums: Vec<Vec<f64>> =
            self.signals.iter().map(|s| vec![0.0; s.reference.channels()]).collect();
        for g in &graphs {
            match g.status {
                GraphStatus::Scored => scored += 1,
                GraphStatus::EmptyDistorted => empty += 1,
                GraphStatus::Skipped => skipped += 1,
            }
            if let Some(s) = g.score {
                sum += s;
            }
            for (acc, kind) in channel_sums.iter_mut().zip(&g.kinds) {
                for (a, c) in acc.iter_mut().zip(&kind.channels) {
                    *a += c.score;
                }
            }
        }
        let counted = scored + empty;
        if counted == 0 {
            return Err(Error::domain(format!(
                "no keypoint graph could be formed: all {skipped} reference clusters within θ = {} held fewer than two points",
                self.extent.theta
            )));
        }
        let channel_means = self
            .signals
            .iter()
            .zip(channel_sums)
            .map(|(s, sums)| ChannelMeans {
                kind: s.kind,
                means: sums.into_iter().map(|v| v / counted as f64).collect(),
            })
            .collect();
        Ok(SimilarityScore {
            q: sum / counted as f64,
            theta: self.extent.theta,
            keypoints: keypoints.to_vec(),
            scored,
            empty_distorted: empty,
            skipped,
            channel_means,
            graphs,
            warnings: self.warnings.clone(),
        })
    }
}

fn build_signal_pair(
    kind: SignalKind,
    reference: &PointCloud,
    ref_index: &SpatialIndex,
    distorted: &PointCloud,
    dist_index: &SpatialIndex,
    config: &GraphSimConfig,
    warnings: &mut Vec<String>,
) -> Result<SignalPair> {
    let (ref_sig, dist_sig, weights) = match kind {
        SignalKind::Color => (
            decompose(reference, &config.color)?,
            decompose(distorted, &config.color)?,
            config.color.weights.to_vec(),
        ),
        SignalKind::Coordinate => {
            let rows = |c: &PointCloud| -> Vec<[f64; 3]> { c.positions().iter().map(|p| [p.x, p.y, p.z]).collect() };
            (
                SignalAttribute::from_rows(kind, &rows(reference))?,
                SignalAttribute::from_rows(kind, &rows(distorted))?,
                vec![1.0; 3],
            )
        }
        SignalKind::Normal => {
            let from_file = reference.normals().zip(distorted.normals());
            let (rn, dn) = match from_file {
                Some((r, d)) => (r.to_vec(), d.to_vec()),
                None => {
                    let r = estimate_normals(reference, ref_index, DEFAULT_NORMAL_K)?;
                    let d = estimate_normals(distorted, dist_index, DEFAULT_NORMAL_K)?;
                    let flagged = r.degenerate.len() + d.degenerate.len();
                    if flagged > 0 {
                        warnings.push(format!("{flagged} degenerate normal patches fell back to +z"));
                    }
                    (r.normals, d.normals)
                }
            };
            let rows = |n: &[nalgebra::Vector3<f64>]| -> Vec<[f64; 3]> { n.iter().map(|v| [v.x, v.y, v.z]).collect() };
            (
                SignalAttribute::from_rows(kind, &rows(&rn))?,
                SignalAttribute::from_rows(kind, &rows(&dn))?,
                vec![1.0; 3],
            )
        }
    };
    Ok(SignalPair {
        kind,
        weights,
        reference: ref_sig,
        distorted: dist_sig,
    })
}

/// One-shot score with the configured seed.
pub fn graphsim(reference: &PointCloud, distorted: &PointCloud, config: &GraphSimConfig) -> Result<SimilarityScore> {
    GraphSimScorer::new(reference, distorted, config)?.score()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedScore {
    pub seed: u64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiSeedScore {
    pub mean_q: f64,
    pub per_seed: Vec<SeedScore>,
}

/// Scores under each seed and averages `Q` in seed order.
pub fn graphsim_seeds(
    reference: &PointCloud,
    distorted: &PointCloud,
    config: &GraphSimConfig,
    seeds: &[u64],
) -> Result<MultiSeedScore> {
    if seeds.is_empty() {
        return Err(Error::domain("at least one seed is required"));
    }
    let scorer = GraphSimScorer::new(reference, distorted, config)?;
    let per_seed = seeds
        .iter()
        .map(|&seed| Ok(SeedScore { seed, q: scorer.score_seed(seed)?.q }))
        .collect::<Result<Vec<_>>>()?;
    let mean_q = per_seed.iter().map(|s| s.q).sum::<f64>() / per_seed.len() as f64;
    Ok(MultiSeedScore { mean_q, per_seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::ColorSpace;
    use crate::resample::KeypointCount;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn unit_nbhd(n: usize) -> WeightedNeighborhood {
        WeightedNeighborhood {
            center: 0,
            neighbors: (1..=n).collect(),
            weights: vec![1.0; n],
            distances: vec![1.0; n],
        }
    }

    fn scalar_signal(values: Vec<f64>) -> SignalAttribute {
        SignalAttribute::new(SignalKind::Color, 1, values).unwrap()
    }

    #[test]
    fn tau_rule() {
        let mut d: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        assert_eq!(tau_from_distances(&mut d, 50), 4.5);
        let mut d: Vec<f64> = (0..100).rev().map(|i| i as f64).collect();
        assert_eq!(tau_from_distances(&mut d, 50), 49.0);
        assert_eq!(tau_from_distances(&mut [], 50), 0.0);
    }

    #[test]
    fn half_removal_halves_mass() {
        let f = scalar_signal(vec![0.2, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7]);
        let full = unit_nbhd(8);
        let half = WeightedNeighborhood {
            neighbors: vec![1, 3, 5, 7],
            weights: vec![1.0; 4],
            distances: vec![1.0; 4],
            ..full.clone()
        };
        let a = gradient_moments(&full, &f, &(0..8).collect::<Vec<_>>()).unwrap();
        let b = gradient_moments(&half, &f, &(0..4).collect::<Vec<_>>()).unwrap();
        assert_eq!(b.mass[0], 0.5 * a.mass[0]);
        assert_eq!(b.mean[0], a.mean[0]);
    }

    #[test]
    fn constant_signal_has_zero_moments() {
        let f = scalar_signal(vec![0.4; 6]);
        let m = gradient_moments(&unit_nbhd(5), &f, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!((m.mass[0], m.mean[0], m.variance[0]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn covariance_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g: Vec<f64> = (0..30).map(|_| rng.random::<f64>() - 0.3).collect();
        let var = covariance(&g, &g);
        let neg: Vec<f64> = g.iter().map(|v| 2.5 - v).collect();
        assert!((covariance(&g, &neg) + var).abs() < 1e-15);
        let h: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        // Raw-moment form.
        let n = 30.0;
        let e_gh = g.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() / n;
        let raw = e_gh - g.iter().sum::<f64>() / n * h.iter().sum::<f64>() / n;
        assert!((covariance(&g, &h) - raw).abs() < 1e-14);
    }

    #[test]
    fn similarity_terms() {
        assert!((ratio_similarity(1.0, 0.0, 1e-3) - 0.001 / 1.001).abs() < 1e-15);
        assert_eq!(ratio_similarity(0.3, 0.3, 1e-3), 1.0);
        assert_eq!(ratio_similarity(0.0, 0.0, 1e-3), 1.0);
        assert!((covariance_similarity(0.04, 0.04, 0.04, 1e-3) - 1.0).abs() < 1e-15);
        assert!(covariance_similarity(-0.04, 0.04, 0.04, 1e-3) > -1.0);
    }

    #[test]
    fn channel_pooling_is_scale_free() {
        let s = [0.9, -0.5, 0.7];
        let a = pool_channels(&s, &[6.0, 1.0, 1.0], ChannelPooling::WeightedAverage);
        let b = pool_channels(&s, &[12.0, 2.0, 2.0], ChannelPooling::WeightedAverage);
        assert!((a - (6.0 * 0.9 + 0.5 + 0.7) / 8.0).abs() < 1e-15);
        assert!((a - b).abs() < 1e-15);
        let m = pool_channels(&s, &[6.0, 1.0, 1.0], ChannelPooling::Multiply);
        let want = 0.9f64.powf(0.75) * 0.5f64.powf(0.125) * 0.7f64.powf(0.125);
        assert!((m - want).abs() < 1e-15);
        assert_eq!(pool_channels(&[1.0; 3], &[1.0, 2.0, 1.0], ChannelPooling::Multiply), 1.0);
    }

    #[test]
    fn alignment_uses_smaller_side() {
        let pos: Vec<Point3<f64>> = (0..6).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let five = WeightedNeighborhood {
            center: 0,
            neighbors: vec![1, 2, 3, 4, 5],
            weights: vec![1.0; 5],
            distances: vec![1.0; 5],
        };
        let three = WeightedNeighborhood {
            center: 0,
            neighbors: vec![1, 3, 5],
            weights: vec![1.0; 3],
            distances: vec![1.0; 3],
        };
        let a = match_and_align(&five, &pos, &three, &pos);
        assert_eq!(a.len(), 3);
        assert_eq!(a.distorted, vec![0, 1, 2]);
        assert_eq!(a.reference, vec![0, 2, 4]);
        let same = match_and_align(&five, &pos, &five, &pos);
        assert_eq!(same.reference, same.distorted);
    }

    pub(crate) fn colored_blob(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Point3<f64>> = (0..n)
            .map(|_| Point3::new(rng.random::<f64>(), rng.random::<f64>(), 0.6 * rng.random::<f64>()))
            .collect();
        let colors = pts
            .iter()
            .map(|p| {
                [
                    (255.0 * (0.5 + 0.5 * (9.0 * p.x).sin())) as u8,
                    (255.0 * p.y) as u8,
                    (255.0 * (0.5 + 0.5 * (7.0 * p.z + 3.0 * p.x).cos())) as u8,
                ]
            })
            .collect();
        PointCloud::new(pts).unwrap().with_colors(colors).unwrap()
    }

    fn small_config() -> GraphSimConfig {
        GraphSimConfig {
            resample: ResampleConfig {
                count: KeypointCount::Exact(20),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn identity_scores_one() {
        let cloud = colored_blob(3000, 1);
        for space in [ColorSpace::Gcm, ColorSpace::Yuv, ColorSpace::Rgb] {
            let config = GraphSimConfig {
                color: ColorSpaceConfig::new(space),
                ..small_config()
            };
            let s = graphsim(&cloud, &cloud, &config).unwrap();
            assert!((s.q - 1.0).abs() < 1e-9, "{space:?}: {}", s.q);
            assert_eq!(s.scored, 20);
        }
    }

    #[test]
    fn translation_invariance() {
        let a = colored_blob(3000, 2);
        let b = crate::distort::apply(
            &a,
            &crate::distort::DistortionSpec::single(crate::distort::DistortionKind::Ggn, 0.01, 3),
        )
        .unwrap();
        let shift = nalgebra::Vector3::new(12.5, -3.0, 100.25);
        let at = a.map_positions(|p| p + shift).unwrap();
        let bt = b.map_positions(|p| p + shift).unwrap();
        let config = small_config();
        let q = graphsim(&a, &b, &config).unwrap().q;
        let qt = graphsim(&at, &bt, &config).unwrap().q;
        assert!(q < 1.0);
        assert!((q - qt).abs() < 1e-9, "{q} vs {qt}");
    }

    #[test]
    fn colorless_input_is_rejected() {
        let cloud = PointCloud::new(colored_blob(100, 3).positions().to_vec()).unwrap();
        let err = graphsim(&cloud, &cloud, &small_config()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        let coord = GraphSimConfig {
            signals: vec![SignalKind::Coordinate],
            ..small_config()
        };
        assert!((graphsim(&cloud, &cloud, &coord).unwrap().q - 1.0).abs() < 1e-9);
    }

    #[test]
    fn noise_lowers_score_in_order() {
        let cloud = colored_blob(8000, 4);
        let b = cloud.bounding_box().unwrap().min_extent();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let config = GraphSimConfig {
            resample: ResampleConfig {
                count: KeypointCount::Exact(60),
                ..Default::default()
            },
            ..Default::default()
        };
        let scorer_q = |sigma: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let noisy = cloud
                .map_positions(|p| {
                    p + nalgebra::Vector3::new(
                        sigma * normal.sample(&mut rng),
                        sigma * normal.sample(&mut rng),
                        sigma * normal.sample(&mut rng),
                    )
                })
                .unwrap();
            graphsim(&cloud, &noisy, &config).unwrap().q
        };
        let qs: Vec<f64> = [0.001, 0.005, 0.01, 0.02].iter().map(|f| scorer_q(f * b)).collect();
        for w in qs.windows(2) {
            assert!(w[0] > w[1], "{qs:?}");
        }
    }

    #[test]
    fn mixed_kinds_average() {
        let cloud = colored_blob(6000, 5);
        let other = crate::distort::apply(
            &cloud,
            &crate::distort::DistortionSpec::single(crate::distort::DistortionKind::Cn, 0.2, 1),
        )
        .unwrap();
        let run = |signals: Vec<SignalKind>| {
            graphsim(
                &cloud,
                &other,
                &GraphSimConfig {
                    signals,
                    ..small_config()
                },
            )
            .unwrap()
        };
        let color = run(vec![SignalKind::Color]);
        let coord = run(vec![SignalKind::Coordinate]);
        let both = run(vec![SignalKind::Color, SignalKind::Coordinate]);
        let mut compared = 0;
        for ((c, g), m) in color.graphs.iter().zip(&coord.graphs).zip(&both.graphs) {
            assert_eq!(c.status, m.status);
            if let (Some(c), Some(g), Some(m)) = (c.score, g.score, m.score) {
                assert!((m - (c + g) / 2.0).abs() < 1e-12);
                compared += 1;
            }
        }
        assert!(compared >= 10);
    }
}
