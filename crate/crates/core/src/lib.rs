//! Embedding-free text models built on a MinHash projection.
//!
//! Text is tokenized into subword units, each unit is fingerprinted with a
//! family of MinHash functions (cached once per vocabulary), and the token
//! fingerprints are folded into counting-Bloom-filter features. A small
//! MLP-Mixer consumes those features for slot tagging or sequence
//! classification.
//!
//! The crate is `no_std` (with `alloc`). Enabling the `parallel` feature pulls
//! in `std` and `rayon` for batch-parallel feature extraction and gradient
//! accumulation; results are bit-identical with and without it.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod hash;
pub mod mixer;
pub mod projection;
pub mod quant;
pub mod real;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use hash::{Fingerprint, HashFamily};
pub use mixer::{HeadKind, ModelConfig, ModelParams};
pub use projection::{FeatureMatrix, FingerprintCache, ProjectionConfig, ProjectionKind, Projector};
pub use real::Real;
pub use train::{Metric, TrainConfig};
pub use vocab::{SubwordUnit, Vocabulary};
