//! Multi-task span-selection question answering at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine, a trainable
//! Transformer encoder with optional BiLSTM/Highway post-encoders, task
//! heads for span QA, subjectivity and domain classification, the
//! training regimes built on them (single-task, multi-task, adversarial,
//! sequential transfer), QA metrics, and the hidden-state analysis
//! pipeline (PCA, t-SNE, answer-span cosine statistics).

pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod post;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use params::Params;
pub use tensor::{Scalar, Tensor};
