//! Named layers of flat weight vectors plus a frozen-position mask.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// One layer. Weights are flattened row-major; for a dense layer the shape is
/// `[out, in]` and the bias has `out` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub shape: Vec<usize>,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Layer {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if shape.is_empty() || expected != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "layer `{name}`: shape {shape:?} does not match {} weights",
                weights.len()
            )));
        }
        Ok(Self { name, shape, weights, bias })
    }

    pub fn weight_count(&self) -> usize {
        self.weights.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelWeights {
    layers: Vec<Layer>,
    /// (layer ordinal, flat weight index)
    frozen: BTreeSet<(usize, usize)>,
}

impl ModelWeights {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for (i, layer) in layers.iter().enumerate() {
            if layers[..i].iter().any(|other| other.name == layer.name) {
                return Err(Error::InvalidNetwork(format!("duplicate layer name `{}`", layer.name)));
            }
        }
        Ok(Self { layers, frozen: BTreeSet::new() })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_ordinal(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn weights_mut(&mut self, ordinal: usize) -> &mut [f32] {
        &mut self.layers[ordinal].weights
    }

    pub fn bias_mut(&mut self, ordinal: usize) -> &mut [f32] {
        &mut self.layers[ordinal].bias
    }

    /// Total number of weights (biases excluded).
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(Layer::weight_count).sum()
    }

    pub fn frozen_mask(&self) -> &BTreeSet<(usize, usize)> {
        &self.frozen
    }

    pub fn is_frozen(&self, ordinal: usize, index: usize) -> bool {
        self.frozen.contains(&(ordinal, index))
    }

    /// Frozen positions as `(layer name, index)` pairs.
    pub fn frozen_positions(&self) -> BTreeSet<(String, usize)> {
        self.frozen
            .iter()
            .map(|&(ordinal, index)| (self.layers[ordinal].name.clone(), index))
            .collect()
    }

    /// Replaces the frozen mask. Every position must be a valid weight index.
    pub fn set_frozen(&mut self, positions: impl IntoIterator<Item = (usize, usize)>) -> Result<()> {
        let mut mask = BTreeSet::new();
        for (ordinal, index) in positions {
            let layer = self.layers.get(ordinal).ok_or_else(|| {
                Error::DimensionMismatch(format!("frozen position refers to layer ordinal {ordinal}"))
            })?;
            if index >= layer.weight_count() {
                return Err(Error::DimensionMismatch(format!(
                    "frozen index {index} out of range for layer `{}` ({} weights)",
                    layer.name,
                    layer.weight_count()
                )));
            }
            mask.insert((ordinal, index));
        }
        self.frozen = mask;
        Ok(())
    }

    pub fn clear_frozen(&mut self) {
        self.frozen.clear();
    }

    /// Replaces the layer at `ordinal`, dropping any frozen positions it held.
    pub fn replace_layer(&mut self, ordinal: usize, layer: Layer) -> Result<()> {
        if self.layers.iter().enumerate().any(|(i, l)| i != ordinal && l.name == layer.name) {
            return Err(Error::InvalidNetwork(format!("duplicate layer name `{}`", layer.name)));
        }
        self.frozen.retain(|&(o, _)| o != ordinal);
        self.layers[ordinal] = layer;
        Ok(())
    }

    /// All weights of all layers, in layer order, widened to `f64`.
    pub fn all_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.iter().map(|&w| f64::from(w)))
    }

    /// Per-layer count of weights that differ from `other`. Both models must
    /// have the same layer layout.
    pub fn changed_weights(&self, other: &ModelWeights) -> Vec<(String, usize)> {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                let changed = a.weights.iter().zip(&b.weights).filter(|(x, y)| x != y).count();
                (a.name.clone(), changed)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_layers() -> ModelWeights {
        ModelWeights::new(vec![
            Layer::new("a", vec![2, 3], vec![0.0; 6], vec![0.0; 2]).unwrap(),
            Layer::new("b", vec![1, 2], vec![0.0; 2], vec![0.0; 1]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn shape_must_match_weights() {
        assert!(Layer::new("x", vec![2, 2], vec![0.0; 3], vec![]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let l = Layer::new("a", vec![1], vec![0.0], vec![]).unwrap();
        assert!(ModelWeights::new(vec![l.clone(), l]).is_err());
    }

    #[test]
    fn frozen_mask_validated() {
        let mut m = two_layers();
        assert!(m.set_frozen([(0, 6)]).is_err());
        assert!(m.set_frozen([(2, 0)]).is_err());
        m.set_frozen([(1, 1), (0, 5)]).unwrap();
        assert!(m.is_frozen(1, 1));
        let names = m.frozen_positions();
        assert!(names.contains(&("a".to_string(), 5)));
        assert_eq!(m.weight_count(), 8);
    }
}
