//! Desk-scale experiment fixtures shared by the integration tests.
//!
//! Source task: 4-class spirals lifted to 16-D, classified by a
//! 16-128-128-128-4 ReLU network. The watermark lives in `fc2` and `fc3`
//! (16384 weights each) with an even split of host weights.

#![allow(dead_code)]

use std::sync::OnceLock;

use wmnet::dist::mean_std;
use wmnet::nn::{build_model, evaluate, gen_dataset, train, Dataset, DatasetKind, InitScheme, NetworkSpec, TrainConfig};
use wmnet::seed::STREAM_MESSAGE;
use wmnet::{derive_key, embed, EmbeddingPlan, MasterSeed, Message, ModelWeights, WatermarkKey};

pub const HOST_LAYERS: [&str; 2] = ["fc2", "fc3"];
pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const PAYLOAD: usize = 64;

pub fn source_task(seed: u64) -> Dataset {
    gen_dataset(DatasetKind::Spirals, 4, 500, 0.1, seed).unwrap().lift(16, seed + 100).unwrap()
}

pub fn network(seed: u64) -> NetworkSpec {
    NetworkSpec { input_dim: 16, hidden: vec![128, 128, 128], classes: 4, init: InitScheme::FanInNormal, seed }
}

pub fn train_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 40,
        batch_size: 32,
        learning_rate: 0.1,
        lr_decay: 0.5,
        lr_step_epochs: 13,
        seed,
        subset_fraction: 1.0,
    }
}

/// 10 epochs on 70% of the training split, every weight trainable.
pub fn fine_tune_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 10,
        batch_size: 32,
        learning_rate: 0.1,
        lr_decay: 1.0,
        lr_step_epochs: 0,
        seed: seed + 7,
        subset_fraction: 0.7,
    }
}

/// 8-class spirals through a different lift: new task, new input domain.
pub fn transfer_task(seed: u64) -> Dataset {
    gen_dataset(DatasetKind::Spirals, 8, 250, 0.05, seed + 50).unwrap().lift(16, seed + 200).unwrap()
}

pub fn transfer_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 100,
        batch_size: 8,
        learning_rate: 0.3,
        lr_decay: 0.5,
        lr_step_epochs: 25,
        seed: seed + 9,
        subset_fraction: 1.0,
    }
}

pub struct Desk {
    pub seed: u64,
    pub data: Dataset,
    pub init: ModelWeights,
    pub baseline: ModelWeights,
    pub baseline_ter: f64,
    /// Std of the trained baseline's host layers.
    pub sigmas: Vec<f64>,
}

pub struct Watermarked {
    pub key: WatermarkKey,
    pub message: Message,
    pub model: ModelWeights,
    pub ter: f64,
}

impl Desk {
    fn build(seed: u64) -> Self {
        let data = source_task(seed);
        let init = build_model(&network(seed)).unwrap();
        let (baseline, _) = train(&init, &data, &train_cfg(seed)).unwrap();
        let baseline_ter = evaluate(&baseline, &data).unwrap();
        let sigmas = HOST_LAYERS
            .iter()
            .map(|name| {
                let w: Vec<f64> = baseline.layer(name).unwrap().weights.iter().map(|&x| f64::from(x)).collect();
                mean_std(&w).1
            })
            .collect();
        Self { seed, data, init, baseline, baseline_ter, sigmas }
    }

    pub fn plan(&self, payload_l: usize, spreading_s: usize, strength_c: f64) -> EmbeddingPlan {
        EmbeddingPlan::even_split(
            HOST_LAYERS.iter().map(|s| s.to_string()).collect(),
            payload_l * spreading_s,
            strength_c,
            self.sigmas.clone(),
        )
        .unwrap()
    }

    /// Embeds into the initial weights, then trains with the hosts frozen.
    pub fn watermark(&self, payload_l: usize, spreading_s: usize, strength_c: f64) -> Watermarked {
        let master = MasterSeed::from_u64(self.seed * 1000 + spreading_s as u64);
        let plan = self.plan(payload_l, spreading_s, strength_c);
        let key = derive_key(master, &self.init, &plan, payload_l, spreading_s).unwrap();
        let message = Message::random(payload_l, &mut master.stream(STREAM_MESSAGE)).unwrap();
        let embedded = embed(&self.init, &key, &message).unwrap();
        let (model, _) = train(&embedded, &self.data, &train_cfg(self.seed)).unwrap();
        let ter = evaluate(&model, &self.data).unwrap();
        Watermarked { key, message, model, ter }
    }
}

/// Trained baseline for `seed`, built once per test binary.
pub fn desk(seed: u64) -> &'static Desk {
    static CACHE: [OnceLock<Desk>; 8] = [const { OnceLock::new() }; 8];
    CACHE[seed as usize].get_or_init(|| Desk::build(seed))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
