//! Temporal attentive relation network for few-shot and zero-shot
//! classification of variable-length sequences.
//!
//! The crate builds every forward pass as a define-by-run graph over dense
//! `f64` matrices ([`autodiff`]), embeds segment features with GRUs
//! ([`recurrent`], [`embedding`]), aligns sample segments to query segments
//! with segment-by-segment attention ([`attention`]), compares the aligned
//! pairs ([`comparison`]), scores them with a learned deep metric
//! ([`relation`]) and trains the whole stack episodically ([`episodic`]).
//! [`data`] supplies binary feature files and synthetic datasets.

pub mod attention;
pub mod autodiff;
pub mod comparison;
pub mod data;
pub mod embedding;
pub mod episodic;
pub mod error;
pub mod gradcheck;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod params;
pub mod recurrent;
pub mod relation;
pub mod rng;

pub use autodiff::{Graph, NodeId};
pub use error::{Result, TarnError};
pub use matrix::Matrix;
pub use params::{ParamSet, PId};
