//! Secret watermark keys: host positions plus the spreading sequence.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ModelWeights;
use crate::plan::EmbeddingPlan;
use crate::seed::{MasterSeed, STREAM_HOST_INDICES, STREAM_SPREADING};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HostPosition {
    pub layer: String,
    pub index: usize,
}

/// Host positions of one layer, in generation order.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyLayer {
    pub name: String,
    pub gamma: f64,
    pub indices: Vec<usize>,
}

/// The secret key: host layers with their index lists and the spreading
/// sequence. Spreading sample `j` belongs to the `j`-th host position when the
/// per-layer index lists are concatenated in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkKey {
    pub master_seed: MasterSeed,
    pub payload_l: usize,
    pub spreading_s: usize,
    pub layers: Vec<KeyLayer>,
    pub spreading_seq: Vec<f64>,
}

impl WatermarkKey {
    /// Number of host weights, `n = S * l`.
    pub fn n(&self) -> usize {
        self.payload_l * self.spreading_s
    }

    pub fn host_indices(&self) -> Vec<HostPosition> {
        self.layers
            .iter()
            .flat_map(|l| l.indices.iter().map(|&index| HostPosition { layer: l.name.clone(), index }))
            .collect()
    }

    pub fn gamma_per_layer(&self) -> impl Iterator<Item = (&str, f64)> {
        self.layers.iter().map(|l| (l.name.as_str(), l.gamma))
    }

    /// Internal consistency, independent of any model.
    pub fn validate(&self) -> Result<()> {
        if self.payload_l == 0 || self.spreading_s == 0 {
            return Err(Error::KeyMismatch("payload and spreading factor must be at least 1".into()));
        }
        let hosts: usize = self.layers.iter().map(|l| l.indices.len()).sum();
        if hosts != self.n() || self.spreading_seq.len() != self.n() {
            return Err(Error::KeyMismatch(format!(
                "key holds {hosts} host positions and {} spreading samples, expected S*l = {}",
                self.spreading_seq.len(),
                self.n()
            )));
        }
        let mut names = BTreeSet::new();
        for layer in &self.layers {
            if !names.insert(layer.name.as_str()) {
                return Err(Error::KeyMismatch(format!("layer `{}` listed twice", layer.name)));
            }
            if !(layer.gamma > 0.0 && layer.gamma.is_finite()) {
                return Err(Error::KeyMismatch(format!("layer `{}` has invalid gamma {}", layer.name, layer.gamma)));
            }
            let unique: BTreeSet<_> = layer.indices.iter().collect();
            if unique.len() != layer.indices.len() {
                return Err(Error::KeyMismatch(format!("duplicate host index in layer `{}`", layer.name)));
            }
        }
        Ok(())
    }

    /// Resolves host positions to `(layer ordinal, index)` pairs of `model`,
    /// in key order.
    pub fn resolve(&self, model: &ModelWeights) -> Result<Vec<(usize, usize)>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.n());
        for layer in &self.layers {
            let ordinal = model
                .layer_ordinal(&layer.name)
                .map_err(|_| Error::KeyMismatch(format!("model has no layer `{}`", layer.name)))?;
            let size = model.layers()[ordinal].weight_count();
            for &index in &layer.indices {
                if index >= size {
                    return Err(Error::KeyMismatch(format!(
                        "host index {index} out of range for layer `{}` ({size} weights)",
                        layer.name
                    )));
                }
                out.push((ordinal, index));
            }
        }
        Ok(out)
    }
}

/// Inverse CDF of `Laplace(0, gamma)` evaluated at `u` in `(-1/2, 1/2)`.
pub fn laplace_inverse_cdf(u: f64, gamma: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    -gamma * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Draws one spreading sample per host position: `count` i.i.d. samples from
/// `Laplace(0, gamma)` for each `(gamma, count)` entry, in order.
pub fn sample_spreading_sequence<R: Rng + ?Sized>(rng: &mut R, gamma_counts: &[(f64, usize)]) -> Result<Vec<f64>> {
    if let Some(&(gamma, _)) = gamma_counts.iter().find(|(g, _)| !(*g > 0.0 && g.is_finite())) {
        return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    let total = gamma_counts.iter().map(|&(_, c)| c).sum();
    let mut seq = Vec::with_capacity(total);
    for &(gamma, count) in gamma_counts {
        for _ in 0..count {
            // U uniform on (-1/2, 1/2); -1/2 itself maps to -inf and is redrawn.
            let u = loop {
                let u = rng.gen::<f64>() - 0.5;
                if u > -0.5 {
                    break u;
                }
            };
            seq.push(laplace_inverse_cdf(u, gamma));
        }
    }
    Ok(seq)
}

/// `count` distinct indices from `[0, size)` by a partial Fisher-Yates shuffle
/// over a sparse swap map.
pub(crate) fn sample_indices<R: Rng + ?Sized>(rng: &mut R, size: usize, count: usize) -> Vec<usize> {
    debug_assert!(count <= size);
    let size = size as u64;
    let mut swaps: HashMap<u64, u64> = HashMap::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let j = rng.gen_range(i..size);
        let at_i = swaps.get(&i).copied().unwrap_or(i);
        let at_j = swaps.get(&j).copied().unwrap_or(j);
        swaps.insert(j, at_i);
        out.push(at_j as usize);
    }
    out
}

/// Derives the key deterministically from the master seed, the model layout
/// and the plan.
pub fn derive_key(
    master_seed: MasterSeed,
    model: &ModelWeights,
    plan: &EmbeddingPlan,
    payload_l: usize,
    spreading_s: usize,
) -> Result<WatermarkKey> {
    plan.validate(model, payload_l, spreading_s)?;
    let gammas = plan.gammas()?;

    let mut index_rng = master_seed.stream(STREAM_HOST_INDICES);
    let mut layers = Vec::with_capacity(plan.host_layers.len());
    for ((name, &count), &gamma) in plan.host_layers.iter().zip(&plan.per_layer_count).zip(&gammas) {
        let size = model.layer(name).ok_or_else(|| Error::UnknownLayer(name.clone()))?.weight_count();
        let indices = sample_indices(&mut index_rng, size, count);
        layers.push(KeyLayer { name: name.clone(), gamma, indices });
    }

    let gamma_counts: Vec<(f64, usize)> = gammas.iter().copied().zip(plan.per_layer_count.iter().copied()).collect();
    let spreading_seq = sample_spreading_sequence(&mut master_seed.stream(STREAM_SPREADING), &gamma_counts)?;

    Ok(WatermarkKey { master_seed, payload_l, spreading_s, layers, spreading_seq })
}
