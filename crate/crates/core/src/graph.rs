//! Edge weights, degrees, gradients and Laplacians over neighbor lists.
//!
//! Nothing here materializes a dense adjacency matrix. A graph is a set of
//! [`WeightedNeighborhood`] rows, each one the edges incident to a center.

use serde::Serialize;

use crate::error::{Error, Result};

/// Clustering threshold and Gaussian variance of an edge-weight kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphParams {
    pub tau: f64,
    pub sigma2: f64,
}

impl GraphParams {
    pub fn new(tau: f64, sigma2: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::domain(format!("tau must be finite and >= 0, got {tau}")));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::domain(format!("sigma2 must be finite and > 0, got {sigma2}")));
        }
        Ok(Self { tau, sigma2 })
    }

    /// `sigma2 = tau² / 2`. A zero `tau` gets the smallest positive variance,
    /// which still gives weight 1 to coincident points.
    pub fn from_tau(tau: f64) -> Self {
        Self {
            tau,
            sigma2: (tau * tau / 2.0).max(f64::MIN_POSITIVE),
        }
    }
}

/// Gaussian edge weight, cut to zero beyond `tau`.
pub fn edge_weight(d: f64, params: &GraphParams) -> f64 {
    if d <= params.tau {
        (-(d * d) / params.sigma2).exp()
    } else {
        0.0
    }
}

/// Equal blend of a geometric and a color Gaussian kernel. Inputs are
/// expected on unit-normalized scales; the cutoff applies to geometry only.
pub fn mixed_edge_weight(d_geom: f64, d_color: f64, sigma1_2: f64, sigma2_2: f64, tau: f64) -> f64 {
    if d_geom <= tau {
        ((-(d_geom * d_geom) / sigma1_2).exp() + (-(d_color * d_color) / sigma2_2).exp()) / 2.0
    } else {
        0.0
    }
}

/// The edges incident to one center vertex.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WeightedNeighborhood {
    pub center: usize,
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
    pub distances: Vec<f64>,
}

impl WeightedNeighborhood {
    /// Keeps candidates with distance ≤ tau, drops the center itself.
    pub fn from_candidates(
        center: usize,
        candidates: impl IntoIterator<Item = (usize, f64)>,
        params: &GraphParams,
    ) -> Self {
        let mut nbhd = Self {
            center,
            ..Self::default()
        };
        for (index, d) in candidates {
            if index == center || d > params.tau {
                continue;
            }
            nbhd.neighbors.push(index);
            nbhd.distances.push(d);
            nbhd.weights.push(edge_weight(d, params));
        }
        nbhd
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Sum of incident weights.
    pub fn degree(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn degree(nbhd: &WeightedNeighborhood) -> f64 {
    nbhd.degree()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Color,
    Coordinate,
    Normal,
}

/// A per-vertex signal with 1 to 3 channels, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalAttribute {
    kind: SignalKind,
    channels: usize,
    data: Vec<f64>,
}

impl SignalAttribute {
    pub fn new(kind: SignalKind, channels: usize, data: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&channels) || !data.len().is_multiple_of(channels) {
            return Err(Error::domain(format!(
                "signal with {channels} channels cannot hold {} values",
                data.len()
            )));
        }
        if kind == SignalKind::Normal {
            for (i, row) in data.chunks(channels).enumerate() {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::Validation {
                        index: i,
                        message: "normal signal is not unit length".into(),
                    });
                }
            }
        }
        Ok(Self {
            kind,
            channels,
            data,
        })
    }

    pub fn from_rows(kind: SignalKind, rows: &[[f64; 3]]) -> Result<Self> {
        Self::new(kind, 3, rows.iter().flatten().copied().collect())
    }

    pub fn kind(&self) -> SignalKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }
}

/// Per channel, `Σ_j √w_j · (f_j − f_center)`.
pub fn graph_gradient(nbhd: &WeightedNeighborhood, f: &SignalAttribute) -> Vec<f64> {
    let center = f.value(nbhd.center);
    let mut out = vec![0.0; f.channels()];
    for (&j, &w) in nbhd.neighbors.iter().zip(&nbhd.weights) {
        let sw = w.sqrt();
        for (acc, (fj, fc)) in out.iter_mut().zip(f.value(j).iter().zip(center)) {
            *acc += sw * (fj - fc);
        }
    }
    out
}

/// Per channel, `Σ_j w_j · (f_center − f_j)`: one row of `(D − W) f`.
pub fn laplacian_apply(nbhd: &WeightedNeighborhood, f: &SignalAttribute) -> Vec<f64> {
    let center = f.value(nbhd.center);
    let mut out = vec![0.0; f.channels()];
    for (&j, &w) in nbhd.neighbors.iter().zip(&nbhd.weights) {
        for (acc, (fj, fc)) in out.iter_mut().zip(f.value(j).iter().zip(center)) {
            *acc += w * (fc - fj);
        }
    }
    out
}
