use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Isotropic Gaussian blobs centred on a radius-2 circle.
    Blobs,
    /// Interleaved spiral arms.
    Spirals,
    /// Concentric rings of radius 1, 2, ...
    Rings,
}

/// Labelled feature matrix with a fixed train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major `m x dim`.
    pub features: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates `classes * per_class` 2-D points and splits each class 80/20
/// into train/test.
pub fn gen_dataset(kind: DatasetKind, classes: usize, per_class: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || per_class == 0 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 classes and 1 point per class, got {classes} x {per_class}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise must be finite and non-negative, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(classes * per_class * 2);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let phase = 2.0 * PI * c as f64 / classes as f64;
        for _ in 0..per_class {
            let (x, y) = match kind {
                DatasetKind::Blobs => (2.0 * phase.cos(), 2.0 * phase.sin()),
                DatasetKind::Spirals => {
                    let t: f64 = rng.gen_range(0.05..1.0);
                    let angle = phase + 3.0 * PI * t;
                    (2.0 * t * angle.cos(), 2.0 * t * angle.sin())
                }
                DatasetKind::Rings => {
                    let angle = rng.gen_range(0.0..2.0 * PI);
                    let r = 1.0 + c as f64;
                    (r * angle.cos(), r * angle.sin())
                }
            };
            features.push(x + noise * gaussian(&mut rng));
            features.push(y + noise * gaussian(&mut rng));
            labels.push(c);
        }
    }

    let n_train = per_class * 4 / 5;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = (c * per_class..(c + 1) * per_class).collect();
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Dataset { features, dim: 2, labels, classes, train, test, seed })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.labels.len() * self.dim {
            return Err(Error::DimensionMismatch("feature matrix does not match label count".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.classes) {
            return Err(Error::InvalidParameter(format!("label {bad} outside [0, {})", self.classes)));
        }
        let mut seen = vec![false; self.len()];
        for &i in self.train.iter().chain(&self.test) {
            if i >= self.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidParameter("train/test split is not a disjoint partition".into()));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidParameter("train/test split does not cover the dataset".into()));
        }
        Ok(())
    }

    /// Embeds the points into `dim` dimensions through a fixed random
    /// projection followed by a per-coordinate sine, so the task is no longer
    /// confined to a plane.
    pub fn lift(&self, dim: usize, seed: u64) -> Result<Dataset> {
        if dim < self.dim {
            return Err(Error::InvalidParameter(format!("cannot lift {}-D data to {dim}-D", self.dim)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (self.dim as f64).sqrt();
        let proj: Vec<f64> = (0..dim * self.dim).map(|_| scale * gaussian(&mut rng)).collect();
        let offset: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let mut features = Vec::with_capacity(self.len() * dim);
        for i in 0..self.len() {
            let x = self.sample(i);
            for (row, &phi) in proj.chunks_exact(self.dim).zip(&offset) {
                let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                features.push((z + phi).sin());
            }
        }
        Ok(Dataset { features, dim, ..self.clone() })
    }

    /// The first `ceil(fraction * |train|)` training indices of a seeded
    /// shuffle, in ascending order.
    pub fn train_subset(&self, fraction: f64, seed: u64) -> Result<Vec<usize>> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!("subset fraction must lie in (0, 1], got {fraction}")));
        }
        if fraction == 1.0 {
            return Ok(self.train.clone());
        }
        let mut idx = self.train.clone();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed));
        idx.truncate((fraction * idx.len() as f64).ceil() as usize);
        idx.sort_unstable();
        Ok(idx)
    }
}
