//! Hybrid RSS/AoA 3D positioning.
//!
//! Synthesizes received-power and angle-of-arrival measurements from anchors
//! to a target, linearizes them into a small least-squares system solved in
//! closed form (weighted and unweighted), and trains a compact MLP to map
//! either raw measurements or the linearized system to a position. A Monte
//! Carlo harness compares all four estimators across noise sweeps.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the dataset and checkpoint
//! formats store.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod linalg;
pub mod linearization;
pub mod measurement;
pub mod mlp;
pub mod scalar;
pub mod scene;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Point3d = scene::Point3<f64>;
pub type Scene64 = scene::Scene<f64>;
pub type SceneConfig64 = scene::SceneConfig<f64>;
pub type PathLoss64 = scene::PathLossConfig<f64>;
pub type Noise64 = measurement::NoiseConfig<f64>;
pub type Measurements64 = measurement::MeasurementVector<f64>;
pub type LinearSystem64 = linearization::LinearSystem<f64>;
pub type Features64 = linearization::FeatureVector<f64>;

pub type Point3f = scene::Point3<f32>;
pub type Scene32 = scene::Scene<f32>;
pub type LinearSystem32 = linearization::LinearSystem<f32>;
