//! Detection and classification of speech interruptions in multi-channel
//! meeting audio.
//!
//! The pipeline runs from per-participant tracks ([`audio`]) through
//! overlap-candidate extraction ([`overlap`]) and feature extraction
//! ([`features`]) to an attention-pooling classifier ([`model`]) and its
//! metrics ([`eval`]). Crowd-label aggregation lives in [`labels`] and the
//! propensity-score impact estimate in [`causal`].

pub mod audio;
pub mod causal;
pub mod class;
pub mod error;
pub mod eval;
pub mod features;
pub mod fixtures;
pub mod labels;
pub mod manifest;
pub mod model;
pub mod overlap;
pub mod rng;

pub use class::Class;
pub use error::{Error, ErrorFamily, Result};
