//! Exact static kd-tree over 3D positions.
//!
//! All queries are exact and deterministic: results are ordered by
//! (squared distance, point index), so ties between equidistant points are
//! always resolved toward the smaller index. Distances are compared squared
//! internally and square-rooted only when handed back to the caller.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Point3;
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;

/// A query hit: index into the indexed point set and Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// Hit with squared distance, ordered by (distance², index).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaredHit {
    pub index: usize,
    pub dist2: f64,
}

impl Eq for SquaredHit {}

impl Ord for SquaredHit {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for SquaredHit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl SquaredHit {
    fn into_neighbor(self) -> Neighbor {
        Neighbor {
            index: self.index,
            distance: self.dist2.sqrt(),
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable kd-tree. Safe to query from many threads at once.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    /// Points stored in leaf order.
    points: Vec<[f64; 3]>,
    /// Original index of each stored point.
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn coords(p: &Point3<f64>) -> [f64; 3] {
    [p.x, p.y, p.z]
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        Self::from_points(cloud.positions())
    }

    pub fn from_points(positions: &[Point3<f64>]) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::domain("cannot index an empty point set"));
        }
        let raw: Vec<[f64; 3]> = positions.iter().map(coords).collect();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        let mut nodes = Vec::with_capacity(2 * raw.len() / LEAF_SIZE + 1);
        build_node(&raw, &mut order, 0, &mut nodes);
        let points = order.iter().map(|&i| raw[i]).collect();
        Ok(Self {
            points,
            ids: order,
            nodes,
        })
    }

    /// Number of indexed points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `min(k, len)` nearest points, ascending by (distance, index).
    pub fn knn(&self, query: &Point3<f64>, k: usize) -> Vec<Neighbor> {
        self.knn_squared(query, k)
            .into_iter()
            .map(SquaredHit::into_neighbor)
            .collect()
    }

    pub fn knn_squared(&self, query: &Point3<f64>, k: usize) -> Vec<SquaredHit> {
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_visit(0, &coords(query), k, &mut heap);
        heap.into_sorted_vec()
    }

    fn knn_visit(&self, node: usize, q: &[f64; 3], k: usize, heap: &mut BinaryHeap<SquaredHit>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let hit = SquaredHit {
                        index: self.ids[slot],
                        dist2: dist2(q, &self.points[slot]),
                    };
                    if heap.len() < k {
                        heap.push(hit);
                    } else if hit < *heap.peek().expect("heap holds k items") {
                        heap.pop();
                        heap.push(hit);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_visit(near, q, k, heap);
                // `<=` keeps equidistant candidates reachable for index tie-breaks.
                let worst = heap.peek().map_or(f64::INFINITY, |h| h.dist2);
                if heap.len() < k || diff * diff <= worst {
                    self.knn_visit(far, q, k, heap);
                }
            }
        }
    }

    /// All points with distance ≤ `radius`, ascending by (distance, index).
    pub fn radius_query(&self, query: &Point3<f64>, radius: f64) -> Result<Vec<Neighbor>> {
        Ok(self
            .radius_squared(query, radius)?
            .into_iter()
            .map(SquaredHit::into_neighbor)
            .collect())
    }

    pub fn radius_squared(&self, query: &Point3<f64>, radius: f64) -> Result<Vec<SquaredHit>> {
        if !(radius >= 0.0) {
            return Err(Error::domain(format!("radius must be nonnegative, got {radius}")));
        }
        let mut out = Vec::new();
        self.radius_visit(0, &coords(query), radius * radius, &mut out);
        out.sort_unstable();
        Ok(out)
    }

    fn radius_visit(&self, node: usize, q: &[f64; 3], r2: f64, out: &mut Vec<SquaredHit>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let d2 = dist2(q, &self.points[slot]);
                    if d2 <= r2 {
                        out.push(SquaredHit {
                            index: self.ids[slot],
                            dist2: d2,
                        });
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.radius_visit(near, q, r2, out);
                if diff * diff <= r2 {
                    self.radius_visit(far, q, r2, out);
                }
            }
        }
    }

    /// Nearest indexed point, smallest index on ties.
    pub fn nearest(&self, query: &Point3<f64>) -> Neighbor {
        self.knn_squared(query, 1)[0].into_neighbor()
    }
}

fn build_node(raw: &[[f64; 3]], order: &mut [usize], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(raw[i][a]);
            hi[a] = hi[a].max(raw[i][a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        raw[a][axis].total_cmp(&raw[b][axis]).then(a.cmp(&b))
    });
    let value = raw[order[mid]][axis];

    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (left_part, right_part) = order.split_at_mut(mid);
    let left = build_node(raw, left_part, offset, nodes);
    let right = build_node(raw, right_part, offset + mid, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

/// For each point of `from`, the index of its nearest point in `to`.
///
/// Many-to-one matches are allowed; no bijection is enforced.
pub fn match_points(from: &[Point3<f64>], to: &SpatialIndex) -> Vec<usize> {
    from.par_iter().map(|p| to.nearest(p).index).collect()
}
