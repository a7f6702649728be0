use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::network::{init_dense, InitScheme, Mlp};
use crate::error::{Error, Result};
use crate::model::ModelWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate every `lr_step_epochs` epochs.
    #[serde(default = "one")]
    pub lr_decay: f64,
    /// 0 disables decay.
    #[serde(default)]
    pub lr_step_epochs: usize,
    pub seed: u64,
    /// Fraction of the training split used.
    #[serde(default = "one")]
    pub subset_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!("subset fraction {} outside (0, 1]", self.subset_fraction)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid learning-rate decay {}", self.lr_decay)));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.lr_step_epochs {
            0 => self.learning_rate,
            step => self.learning_rate * self.lr_decay.powi((epoch / step) as i32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean mini-batch loss.
    pub loss: f64,
    /// Training accuracy in percent, measured on the forward passes of the epoch.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

fn check_dims(mlp: &Mlp, data: &Dataset) -> Result<()> {
    if mlp.input_dim() != data.dim {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} inputs, data has {}",
            mlp.input_dim(),
            data.dim
        )));
    }
    if mlp.classes() < data.classes {
        return Err(Error::DimensionMismatch(format!(
            "model has {} outputs, data has {} classes",
            mlp.classes(),
            data.classes
        )));
    }
    Ok(())
}

/// Mini-batch SGD on softmax cross-entropy. Gradients at frozen positions are
/// zeroed before every update, so frozen weights come back bit-identical.
pub fn train(model: &ModelWeights, data: &Dataset, cfg: &TrainConfig) -> Result<(ModelWeights, TrainHistory)> {
    cfg.validate()?;
    data.validate()?;
    let mut mlp = Mlp::from_model(model)?;
    check_dims(&mlp, data)?;
    let mut order = data.train_subset(cfg.subset_fraction, cfg.seed)?;
    if order.is_empty() {
        return Err(Error::EmptyInput("training split is empty"));
    }

    let masks: Vec<Vec<bool>> = model
        .layers()
        .iter()
        .enumerate()
        .map(|(o, l)| (0..l.weight_count()).map(|i| model.is_frozen(o, i)).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut batches) = (0.0, 0, 0);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| data.sample(i)).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (loss, grads, hits) = mlp.loss_and_grad(&xs, &ys);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch, loss });
            }
            loss_sum += loss;
            correct += hits;
            batches += 1;
            for ((layer, grad), mask) in mlp.layers.iter_mut().zip(&grads).zip(&masks) {
                for ((w, &g), &frozen) in layer.w.iter_mut().zip(&grad.w).zip(mask) {
                    let g = if frozen { 0.0 } else { g };
                    *w -= lr * g;
                }
                for (b, &g) in layer.b.iter_mut().zip(&grad.b) {
                    *b -= lr * g;
                }
            }
        }
        history.epochs.push(EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: 100.0 * correct as f64 / order.len() as f64,
        });
    }

    let mut out = model.clone();
    mlp.write_to(&mut out);
    Ok((out, history))
}

/// Test error rate in percent on the test split.
pub fn evaluate(model: &ModelWeights, data: &Dataset) -> Result<f64> {
    if data.test.is_empty() {
        return Err(Error::EmptyInput("test split is empty"));
    }
    let mlp = Mlp::from_model(model)?;
    check_dims(&mlp, data)?;
    let wrong = data.test.iter().filter(|&&i| mlp.predict(data.sample(i)) != data.labels[i]).count();
    Ok(100.0 * wrong as f64 / data.test.len() as f64)
}

/// Retrains every weight, former hosts included, on `cfg.subset_fraction` of
/// the training split.
pub fn fine_tune(model: &ModelWeights, data: &Dataset, cfg: &TrainConfig) -> Result<(ModelWeights, TrainHistory)> {
    let mut open = model.clone();
    open.clear_frozen();
    train(&open, data, cfg)
}

/// Swaps the output layer for a freshly initialised `new_classes`-way head and
/// retrains the whole network on `new_data`.
pub fn transfer_learn(
    model: &ModelWeights,
    new_data: &Dataset,
    new_classes: usize,
    cfg: &TrainConfig,
) -> Result<(ModelWeights, TrainHistory)> {
    if new_classes < 2 {
        return Err(Error::InvalidParameter(format!("transfer needs at least 2 classes, got {new_classes}")));
    }
    let head = model.layers().len().checked_sub(1).ok_or(Error::EmptyInput("model has no layers"))?;
    let old = &model.layers()[head];
    let &[_, fan_in] = old.shape.as_slice() else {
        return Err(Error::InvalidNetwork(format!("head `{}` is not a dense layer", old.name)));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x4ead));
    let fresh = init_dense(&old.name, fan_in, new_classes, InitScheme::FanInUniform, &mut rng)?;
    let mut open = model.clone();
    open.replace_layer(head, fresh)?;
    open.clear_frozen();
    train(&open, new_data, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_model, gen_dataset, DatasetKind, NetworkSpec};

    fn cfg(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            learning_rate: lr,
            lr_decay: 1.0,
            lr_step_epochs: 0,
            seed: 1,
            subset_fraction: 1.0,
        }
    }

    fn small() -> (ModelWeights, Dataset) {
        let spec = NetworkSpec { input_dim: 2, hidden: vec![16], classes: 2, init: Default::default(), seed: 4 };
        (build_model(&spec).unwrap(), gen_dataset(DatasetKind::Blobs, 2, 60, 0.8, 3).unwrap())
    }

    #[test]
    fn fully_frozen_model_is_unchanged() {
        let (mut m, d) = small();
        let all: Vec<_> = m
            .layers()
            .iter()
            .enumerate()
            .flat_map(|(o, l)| (0..l.weight_count()).map(move |i| (o, i)))
            .collect();
        m.set_frozen(all).unwrap();
        let (out, hist) = train(&m, &d, &cfg(3, 0.1)).unwrap();
        for (a, b) in out.layers().iter().zip(m.layers()) {
            assert_eq!(a.weights, b.weights);
        }
        assert_eq!(hist.epochs.len(), 3);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (m, d) = small();
        let (out, _) = fine_tune(&m, &d, &TrainConfig { subset_fraction: 0.7, ..cfg(2, 0.0) }).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn training_is_deterministic() {
        let (m, d) = small();
        assert_eq!(train(&m, &d, &cfg(3, 0.1)).unwrap(), train(&m, &d, &cfg(3, 0.1)).unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let (m, d) = small();
        let err = train(&m, &d, &cfg(5, 1e300)).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn dimension_mismatch() {
        let (m, d) = small();
        let lifted = d.lift(5, 0).unwrap();
        assert!(train(&m, &lifted, &cfg(1, 0.1)).is_err());
        assert!(evaluate(&m, &lifted).is_err());
    }

    #[test]
    fn transfer_changes_head_only_in_shape() {
        let (m, _) = small();
        let d4 = gen_dataset(DatasetKind::Blobs, 4, 30, 0.3, 8).unwrap();
        let (out, _) = transfer_learn(&m, &d4, 4, &cfg(2, 0.05)).unwrap();
        assert_eq!(out.layers()[0].shape, m.layers()[0].shape);
        assert_eq!(out.layers()[1].shape, vec![4, 16]);
        assert!(out.frozen_mask().is_empty());
        assert!(transfer_learn(&m, &d4, 1, &cfg(1, 0.05)).is_err());
    }

    #[test]
    fn learning_rate_schedule() {
        let c = TrainConfig { lr_decay: 0.5, lr_step_epochs: 2, ..cfg(6, 0.1) };
        assert_eq!(c.learning_rate_at(0), 0.1);
        assert_eq!(c.learning_rate_at(2), 0.05);
        assert_eq!(c.learning_rate_at(5), 0.025);
    }
}
