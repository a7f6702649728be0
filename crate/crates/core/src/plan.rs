use serde::{Deserialize, Serialize};

use crate::dist::gamma_from_strength;
use crate::error::{Error, Result};
use crate::model::ModelWeights;

/// Which layers host the watermark, how many host weights each receives, and
/// the statistics that set the watermark strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPlan {
    pub host_layers: Vec<String>,
    /// `|Ω_k|` for each host layer, in `host_layers` order.
    pub per_layer_count: Vec<usize>,
    /// Dimensionless strength multiplier `C`.
    pub strength_c: f64,
    /// Standard deviation of the non-watermarked weights of each host layer.
    pub layer_sigma: Vec<f64>,
}

/// Percentages of watermarked weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub per_layer: Vec<(String, f64)>,
    pub global: f64,
}

impl EmbeddingPlan {
    /// Splits `n` host weights evenly over `host_layers`; the remainder
    /// `n mod k` goes one apiece to the earliest layers.
    pub fn even_split(host_layers: Vec<String>, n: usize, strength_c: f64, layer_sigma: Vec<f64>) -> Result<Self> {
        if host_layers.is_empty() {
            return Err(Error::InvalidPlan("no host layers".into()));
        }
        let k = host_layers.len();
        let per_layer_count = (0..k).map(|i| n / k + usize::from(i < n % k)).collect();
        Ok(Self { host_layers, per_layer_count, strength_c, layer_sigma })
    }

    pub fn total(&self) -> usize {
        self.per_layer_count.iter().sum()
    }

    /// Checks the plan against a model and a `(l, S)` setting.
    pub fn validate(&self, model: &ModelWeights, payload_l: usize, spreading_s: usize) -> Result<()> {
        if payload_l == 0 || spreading_s == 0 {
            return Err(Error::InvalidPlan("payload and spreading factor must be at least 1".into()));
        }
        if self.host_layers.is_empty() {
            return Err(Error::InvalidPlan("no host layers".into()));
        }
        if self.per_layer_count.len() != self.host_layers.len() || self.layer_sigma.len() != self.host_layers.len() {
            return Err(Error::InvalidPlan("per-layer fields must match the host layer list".into()));
        }
        for (i, name) in self.host_layers.iter().enumerate() {
            if self.host_layers[..i].contains(name) {
                return Err(Error::InvalidPlan(format!("host layer `{name}` listed twice")));
            }
        }
        let n = payload_l * spreading_s;
        if n > model.weight_count() {
            return Err(Error::InvalidPlan(format!(
                "n = S*l = {n} exceeds the {} weights of the model",
                model.weight_count()
            )));
        }
        if self.total() != n {
            return Err(Error::InvalidPlan(format!(
                "host counts sum to {} but S*l = {spreading_s}*{payload_l} = {n}",
                self.total()
            )));
        }
        for ((name, &count), &sigma) in self.host_layers.iter().zip(&self.per_layer_count).zip(&self.layer_sigma) {
            let layer = model.layer(name).ok_or_else(|| Error::UnknownLayer(name.clone()))?;
            if count == 0 {
                return Err(Error::InvalidPlan(format!("host layer `{name}` receives no host weights")));
            }
            if count > layer.weight_count() {
                return Err(Error::InvalidPlan(format!(
                    "layer `{name}` has {} weights but {count} host weights were requested (occupancy {:.2}%)",
                    layer.weight_count(),
                    100.0 * count as f64 / layer.weight_count() as f64
                )));
            }
            gamma_from_strength(self.strength_c, sigma)?;
        }
        Ok(())
    }

    /// Strength `γ_k` for each host layer.
    pub fn gammas(&self) -> Result<Vec<f64>> {
        self.layer_sigma.iter().map(|&sigma| gamma_from_strength(self.strength_c, sigma)).collect()
    }

    pub fn occupancy(&self, model: &ModelWeights) -> Result<Occupancy> {
        let mut per_layer = Vec::with_capacity(self.host_layers.len());
        for (name, &count) in self.host_layers.iter().zip(&self.per_layer_count) {
            let layer = model.layer(name).ok_or_else(|| Error::UnknownLayer(name.clone()))?;
            per_layer.push((name.clone(), 100.0 * count as f64 / layer.weight_count() as f64));
        }
        let global = 100.0 * self.total() as f64 / model.weight_count() as f64;
        Ok(Occupancy { per_layer, global })
    }
}
