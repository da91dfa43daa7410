//! Semantic-memory accelerated CNN inference.
//!
//! The pipeline encodes each exit point's feature map into a low-dimensional
//! semantic vector (per-channel mean), matches it against the cached centers
//! of recently and frequently seen classes, and exits inference early once
//! the cross-layer accumulated confidence clears a global threshold. A
//! hierarchical priming memory (small fast memory over a complete global
//! store) is maintained from the frequency and recency of predictions, with
//! optional adaptive cache sizing and online center adaptation.

pub mod encoding;
pub mod error;
pub mod exit;
pub mod forward;
pub mod harness;
pub mod memory;
pub mod model;
pub mod modelgen;
pub mod pipeline;
pub mod stream;
pub mod tensor;
pub mod trace;

/// Class identifier; trace labels use the same representation.
pub type ClassId = u32;

pub use error::{Error, Result};
pub use tensor::FeatureMap;
