//! Model modifications that a watermark has to survive, and a helper that
//! applies one and measures what is left.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::key::WatermarkKey;
use crate::message::Message;
use crate::model::ModelWeights;
use crate::nn::{evaluate, fine_tune, transfer_learn, Dataset, TrainConfig};
use crate::watermark::{bit_error_rate, extract};

/// Zeroes the `floor(p * N)` smallest-magnitude weights over all layers
/// (biases excluded). Ties are ordered by `(|w|, layer ordinal, index)`.
pub fn prune(model: &ModelWeights, p: f64) -> Result<ModelWeights> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("pruning fraction {p} outside [0, 1]")));
    }
    let total = model.weight_count();
    // guard against p * N landing a hair below an integer
    let k = ((p * total as f64) + 1e-9).floor() as usize;
    let k = k.min(total);
    let mut out = model.clone();
    if k == 0 {
        return Ok(out);
    }
    let mut ranked: Vec<(f32, usize, usize)> = model
        .layers()
        .iter()
        .enumerate()
        .flat_map(|(o, l)| l.weights.iter().enumerate().map(move |(i, w)| (w.abs(), o, i)))
        .collect();
    let order = |a: &(f32, usize, usize), b: &(f32, usize, usize)| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    };
    if k < total {
        ranked.select_nth_unstable_by(k - 1, order);
    }
    for &(_, o, i) in &ranked[..k] {
        out.weights_mut(o)[i] = 0.0;
    }
    Ok(out)
}

/// Range over which the quantization step is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantScope {
    /// One `w_max` (and step) for the whole model.
    #[default]
    Global,
    /// A separate `w_max` per layer.
    PerLayer,
}

/// Grid step `δ = 2 w_max / 2^n_b`.
pub fn quantization_step(w_max: f64, n_bits: u32) -> f64 {
    2.0 * w_max / 2f64.powi(n_bits as i32)
}

/// `floor(w / δ) * δ`, rounding towards negative infinity.
pub fn quantize_value(w: f64, delta: f64) -> f64 {
    (w / delta).floor() * delta
}

fn max_abs(weights: &[f32]) -> f64 {
    weights.iter().fold(0.0f64, |m, &w| m.max(f64::from(w).abs()))
}

/// Maps every weight to the floor of its `δ`-grid cell.
pub fn quantize(model: &ModelWeights, n_bits: u32, scope: QuantScope) -> Result<ModelWeights> {
    if n_bits == 0 || n_bits > 64 {
        return Err(Error::InvalidParameter(format!("bit count {n_bits} outside 1..=64")));
    }
    let global_max = model.layers().iter().map(|l| max_abs(&l.weights)).fold(0.0, f64::max);
    if global_max == 0.0 {
        return Err(Error::InvalidParameter("all weights are zero; quantization step would be 0".into()));
    }
    let mut out = model.clone();
    for ordinal in 0..model.layers().len() {
        let w_max = match scope {
            QuantScope::Global => global_max,
            QuantScope::PerLayer => max_abs(&model.layers()[ordinal].weights),
        };
        if w_max == 0.0 {
            continue;
        }
        let delta = quantization_step(w_max, n_bits);
        for w in out.weights_mut(ordinal) {
            *w = quantize_value(f64::from(*w), delta) as f32;
        }
    }
    Ok(out)
}

/// Zeroes every weight with `|w| > threshold` in the named layers.
pub fn cutoff(model: &ModelWeights, layers: &[String], threshold: f64) -> Result<ModelWeights> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(format!("cut-off threshold must be positive, got {threshold}")));
    }
    let ordinals = layers.iter().map(|name| model.layer_ordinal(name)).collect::<Result<Vec<_>>>()?;
    let mut out = model.clone();
    for ordinal in ordinals {
        for w in out.weights_mut(ordinal) {
            if f64::from(w.abs()) > threshold {
                *w = 0.0;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Attack {
    Identity,
    Prune { fraction: f64 },
    Quantize { bits: u32, scope: QuantScope },
    Cutoff { layers: Vec<String>, threshold: f64 },
    /// Retrains on `cfg.subset_fraction` of the evaluation dataset's
    /// training split with the frozen mask cleared.
    FineTune { cfg: TrainConfig },
    /// Head replacement and retraining on a different task; TER is measured
    /// on the new task.
    Transfer { data: Box<Dataset>, new_classes: usize, cfg: TrainConfig },
}

impl Attack {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Prune { .. } => "prune",
            Self::Quantize { .. } => "quantize",
            Self::Cutoff { .. } => "cutoff",
            Self::FineTune { .. } => "fine_tune",
            Self::Transfer { .. } => "transfer",
        }
    }

    pub fn params(&self) -> String {
        match self {
            Self::Identity => String::new(),
            Self::Prune { fraction } => format!("p={fraction}"),
            Self::Quantize { bits, scope } => match scope {
                QuantScope::Global => format!("n_b={bits}"),
                QuantScope::PerLayer => format!("n_b={bits};per_layer"),
            },
            Self::Cutoff { layers, threshold } => format!("T={threshold};layers={}", layers.join("+")),
            Self::FineTune { cfg } => format!("epochs={};lr={};subset={}", cfg.epochs, cfg.learning_rate, cfg.subset_fraction),
            Self::Transfer { new_classes, cfg, .. } => {
                format!("classes={new_classes};epochs={};lr={}", cfg.epochs, cfg.learning_rate)
            }
        }
    }

    /// Applies the attack to `model`; `data` backs the retraining attacks.
    pub fn apply(&self, model: &ModelWeights, data: &Dataset) -> Result<ModelWeights> {
        match self {
            Self::Identity => Ok(model.clone()),
            Self::Prune { fraction } => prune(model, *fraction),
            Self::Quantize { bits, scope } => quantize(model, *bits, *scope),
            Self::Cutoff { layers, threshold } => cutoff(model, layers, *threshold),
            Self::FineTune { cfg } => Ok(fine_tune(model, data, cfg)?.0),
            Self::Transfer { data, new_classes, cfg } => Ok(transfer_learn(model, data, *new_classes, cfg)?.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub attack: String,
    pub params: String,
    /// Test error rate after the attack, percent.
    pub ter: f64,
    /// Bit error rate after the attack, percent.
    pub ber: f64,
    /// Weights changed by the attack, per layer.
    pub modified: Vec<(String, usize)>,
}

impl AttackResult {
    pub fn modified_count(&self) -> usize {
        self.modified.iter().map(|(_, c)| c).sum()
    }
}

/// Applies `attack`, then extracts the watermark and evaluates the model.
pub fn attack_and_measure(
    model: &ModelWeights,
    key: &WatermarkKey,
    message: &Message,
    attack: &Attack,
    test_data: &Dataset,
) -> Result<AttackResult> {
    let attacked = attack.apply(model, test_data)?;
    let ber = bit_error_rate(message, &extract(&attacked, key)?)?;
    let eval_data = match attack {
        Attack::Transfer { data, .. } => data.as_ref(),
        _ => test_data,
    };
    let ter = evaluate(&attacked, eval_data)?;
    // a replaced head counts as fully modified
    let modified = attacked
        .layers()
        .iter()
        .zip(model.layers())
        .map(|(a, b)| {
            let changed = if a.shape == b.shape {
                a.weights.iter().zip(&b.weights).filter(|(x, y)| x != y).count()
            } else {
                a.weight_count()
            };
            (a.name.clone(), changed)
        })
        .collect();
    Ok(AttackResult { attack: attack.name().to_string(), params: attack.params(), ter, ber, modified })
}
