//! White-box multi-bit watermarking of neural network weights.
//!
//! The watermark is a direct-sequence spread-spectrum encoding of an `l`-bit
//! message. A secret key selects `n = S * l` host positions among the weights
//! of one or more layers and a Laplace-distributed spreading sequence. The
//! modulated sequence is written into the host positions *before* training,
//! the host positions are frozen, and the remaining weights are trained
//! around them. Extraction correlates the host weights with the spreading
//! sequence block by block.
//!
//! Module map:
//!
//! - [`message`], [`seed`], [`plan`], [`key`], [`watermark`]: key derivation,
//!   modulation, embedding, extraction and bit error rate.
//! - [`dist`]: watermark strength, Laplace fitting, closed-form and
//!   empirical KL divergence, maximum-entropy checks and indistinguishability
//!   reports.
//! - [`nn`]: a small deterministic MLP trainer with frozen-position masks.
//! - [`attacks`]: pruning, quantization, threshold cut-off, fine-tuning and
//!   transfer learning, with measurement helpers.
//! - [`keyfile`], [`snapshot`]: on-disk formats for keys and models.

pub mod attacks;
pub mod dist;
mod error;
pub mod key;
pub mod keyfile;
pub mod message;
pub mod model;
pub mod nn;
pub mod plan;
pub mod seed;
pub mod snapshot;
pub mod watermark;

pub use error::{Error, Result};
pub use key::{derive_key, sample_spreading_sequence, HostPosition, KeyLayer, WatermarkKey};
pub use message::Message;
pub use model::{Layer, ModelWeights};
pub use plan::{EmbeddingPlan, Occupancy};
pub use seed::MasterSeed;
pub use watermark::{bit_error_rate, embed, extract, modulate};
