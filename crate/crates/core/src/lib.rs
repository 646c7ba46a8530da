//! Shadow-pool construction for shadow-model-based inference attacks.
//!
//! A shadow pool is a mixture-of-experts network with `L` expert layers of
//! `M` experts each. Every end-to-end pathway (one expert per layer plus a
//! shared stem and head) behaves as a shadow model, so one training run
//! yields up to `M^L` shared models for membership and property inference.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense layers, losses, backpropagation and SGD.
//! - [`data`]: synthetic datasets, splits, the data-to-pathway mapping and
//!   persistence.
//! - [`pool`]: the shadow pool itself (routing, pathway regularization,
//!   alignment, querying).
//! - [`shadow`]: independent shadow models, neural-masking augmentation and
//!   cost accounting.
//! - [`attack`]: LiRA, RMIA and property inference.
//! - [`metrics`]: ROC/AUC, TPR at low FPR and shadow-model diagnostics.

pub mod attack;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pool;
pub mod rng;
pub mod shadow;

pub use error::{Error, Result};
