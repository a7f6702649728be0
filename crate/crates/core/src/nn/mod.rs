//! Small fully-connected classifiers trained with plain mini-batch SGD.
//!
//! Weights are stored as `f32` in [`ModelWeights`](crate::ModelWeights); the
//! trainer works on an `f64` copy ([`Mlp`]) and writes the result back, so
//! frozen positions survive the round trip bit-for-bit.

mod data;
mod network;
mod train;

pub use data::{gen_dataset, Dataset, DatasetKind};
pub use network::{build_model, init_dense, Dense, InitScheme, Mlp, NetworkSpec, HEAD_LAYER};
pub use train::{evaluate, fine_tune, train, transfer_learn, EpochStats, TrainConfig, TrainHistory};
