//! Full-reference point cloud quality assessment by local graph similarity.
//!
//! The main entry point is [`similarity::graphsim`]. Point-wise comparison
//! metrics live in [`baselines`], correlation against subjective scores in
//! [`eval`].

pub mod baselines;
pub mod cloud;
pub mod color;
pub mod distort;
pub mod error;
pub mod eval;
pub mod graph;
pub mod mos;
pub mod normals;
pub mod ply;
pub mod report;
pub mod resample;
pub mod similarity;
pub mod spatial;

pub use cloud::{BoundingBox, PointCloud, Rgb};
pub use error::{Error, ErrorClass, Result};
pub use similarity::{graphsim, GraphSimConfig, SimilarityScore};
