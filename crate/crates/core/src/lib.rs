//! Rotation-adaptive point cloud training.
//!
//! The pipeline this crate implements: for every training cloud, *mine* the
//! Euler-angle rotations that most confuse the current classifier (projected
//! gradient ascent on the cross-entropy), keep a periodically refreshed set of
//! those intricate orientations, and train the classifier on the rotated
//! variants under a three-part objective — cross-entropy, a tempered-softmax
//! consistency loss against an EMA teacher, and a cosine contrastive loss
//! pulling same-class variants together and different classes apart. Models
//! are scored by rotating the test set through all 64 combinations of
//! `{π/2, π, 3π/2, 2π}` per axis and aggregating accuracy, macro precision,
//! and prediction-consistency metrics across the series.
//!
//! All numeric kernels are generic over the scalar type via [`real::Real`];
//! the aliases below fix the two supported precisions. Every source of
//! randomness is a deterministic stream derived from the run seed
//! ([`stream`]), and all parallel reductions run in a fixed order, so every
//! artifact (datasets, checkpoints, logs, metrics) is byte-reproducible for a
//! given seed, independent of worker count.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod mining;
pub mod net;
pub mod real;
pub mod so3;
pub mod stream;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;

/// `f64` aliases (the precision the CLI runs at).
pub type EulerF64 = so3::Euler<f64>;
pub type Mat3F64 = so3::Mat3<f64>;
pub type PointCloudF64 = so3::PointCloud<f64>;
pub type PointNetF64 = net::PointNet<f64>;
pub type DatasetF64 = data::Dataset<f64>;
pub type IntricateSetF64 = mining::IntricateSet<f64>;

/// `f32` aliases.
pub type EulerF32 = so3::Euler<f32>;
pub type Mat3F32 = so3::Mat3<f32>;
pub type PointCloudF32 = so3::PointCloud<f32>;
pub type PointNetF32 = net::PointNet<f32>;
pub type DatasetF32 = data::Dataset<f32>;
pub type IntricateSetF32 = mining::IntricateSet<f32>;
