use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Layer, ModelWeights};

pub const HEAD_LAYER: &str = "head";

/// Weight initialisers. All three draw zero-mean weights with standard
/// deviation `sqrt(2 / fan_in)`; biases start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    FanInUniform,
    FanInNormal,
    FanInLaplace,
}

impl InitScheme {
    pub fn std(self, fan_in: usize) -> f64 {
        (2.0 / fan_in as f64).sqrt()
    }

    fn sample<R: Rng + ?Sized>(self, fan_in: usize, rng: &mut R) -> f64 {
        let std = self.std(fan_in);
        match self {
            Self::FanInUniform => {
                let limit = 3f64.sqrt() * std;
                rng.gen_range(-limit..limit)
            }
            Self::FanInNormal => std * Distribution::<f64>::sample(&StandardNormal, rng),
            Self::FanInLaplace => {
                let u = loop {
                    let u = rng.gen::<f64>() - 0.5;
                    if u > -0.5 {
                        break u;
                    }
                };
                crate::key::laplace_inverse_cdf(u, std / std::f64::consts::SQRT_2)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    #[serde(default)]
    pub init: InitScheme,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::InvalidNetwork("at least one hidden layer is required".into()));
        }
        if self.input_dim == 0 || self.classes == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidNetwork("all layer widths must be at least 1".into()));
        }
        Ok(())
    }

    /// Names of the weight layers: `fc1..fcH`, then [`HEAD_LAYER`].
    pub fn layer_names(&self) -> Vec<String> {
        (1..=self.hidden.len()).map(|i| format!("fc{i}")).chain([HEAD_LAYER.to_string()]).collect()
    }

    /// `(fan_in, fan_out)` of every weight layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let widths: Vec<usize> =
            std::iter::once(self.input_dim).chain(self.hidden.iter().copied()).chain([self.classes]).collect();
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Theoretical standard deviation of the initial weights of `layer`.
    pub fn init_std(&self, layer: &str) -> Result<f64> {
        let ordinal = self
            .layer_names()
            .iter()
            .position(|n| n == layer)
            .ok_or_else(|| Error::UnknownLayer(layer.to_string()))?;
        Ok(self.init.std(self.layer_dims()[ordinal].0))
    }
}

/// A dense layer with freshly drawn weights of shape `[fan_out, fan_in]`.
pub fn init_dense<R: Rng + ?Sized>(
    name: &str,
    fan_in: usize,
    fan_out: usize,
    scheme: InitScheme,
    rng: &mut R,
) -> Result<Layer> {
    let weights = (0..fan_in * fan_out).map(|_| scheme.sample(fan_in, rng) as f32).collect();
    Layer::new(name, vec![fan_out, fan_in], weights, vec![0.0; fan_out])
}

pub fn build_model(spec: &NetworkSpec) -> Result<ModelWeights> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layers = spec
        .layer_names()
        .iter()
        .zip(spec.layer_dims())
        .map(|(name, (fan_in, fan_out))| init_dense(name, fan_in, fan_out, spec.init, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    ModelWeights::new(layers)
}

/// `f64` working copy of a dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `[outputs, inputs]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Feed-forward network: ReLU on hidden layers, softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn from_model(model: &ModelWeights) -> Result<Self> {
        if model.layers().len() < 2 {
            return Err(Error::InvalidNetwork("need at least one hidden layer and a head".into()));
        }
        let mut layers: Vec<Dense> = Vec::with_capacity(model.layers().len());
        for layer in model.layers() {
            let &[outputs, inputs] = layer.shape.as_slice() else {
                return Err(Error::InvalidNetwork(format!("layer `{}` is not a dense [out, in] layer", layer.name)));
            };
            if layer.bias.len() != outputs {
                return Err(Error::InvalidNetwork(format!("layer `{}` bias length {}", layer.name, layer.bias.len())));
            }
            if let Some(prev) = layers.last() {
                if prev.outputs != inputs {
                    return Err(Error::InvalidNetwork(format!(
                        "layer `{}` expects {inputs} inputs but the previous layer has {} outputs",
                        layer.name, prev.outputs
                    )));
                }
            }
            layers.push(Dense {
                inputs,
                outputs,
                w: layer.weights.iter().map(|&x| f64::from(x)).collect(),
                b: layer.bias.iter().map(|&x| f64::from(x)).collect(),
            });
        }
        Ok(Self { layers })
    }

    /// Narrows the parameters back into `model`, which must have the same layout.
    pub fn write_to(&self, model: &mut ModelWeights) {
        for (ordinal, dense) in self.layers.iter().enumerate() {
            for (dst, &src) in model.weights_mut(ordinal).iter_mut().zip(&dense.w) {
                *dst = src as f32;
            }
            for (dst, &src) in model.bias_mut(ordinal).iter_mut().zip(&dense.b) {
                *dst = src as f32;
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn classes(&self) -> usize {
        self.layers.last().expect("nonempty").outputs
    }

    /// Pre-activations of every layer for one input.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut input: Vec<f64> = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let z: Vec<f64> = layer
                .w
                .chunks_exact(layer.inputs)
                .zip(&layer.b)
                .map(|(row, b)| b + row.iter().zip(&input).map(|(w, a)| w * a).sum::<f64>())
                .collect();
            if k < last {
                input = z.iter().map(|&v| v.max(0.0)).collect();
            }
            pre.push(z);
        }
        pre
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).pop().expect("nonempty")
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Arg-max class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (k, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = k;
            }
        }
        best
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, xs: &[&[f64]], ys: &[usize]) -> f64 {
        xs.iter().zip(ys).map(|(x, &y)| cross_entropy(&self.logits(x), y)).sum::<f64>() / xs.len() as f64
    }

    /// Mean cross-entropy, its gradient with respect to every parameter
    /// (same layout as `self`), and the number of correct predictions.
    pub fn loss_and_grad(&self, xs: &[&[f64]], ys: &[usize]) -> (f64, Vec<Dense>, usize) {
        let mut grads: Vec<Dense> = self
            .layers
            .iter()
            .map(|l| Dense { inputs: l.inputs, outputs: l.outputs, w: vec![0.0; l.w.len()], b: vec![0.0; l.b.len()] })
            .collect();
        let mut total = 0.0;
        let mut correct = 0;
        for (x, &y) in xs.iter().zip(ys) {
            let pre = self.forward(x);
            let logits = pre.last().expect("nonempty");
            total += cross_entropy(logits, y);
            let mut delta = softmax(logits);
            if argmax(logits) == y {
                correct += 1;
            }
            delta[y] -= 1.0;
            for k in (0..self.layers.len()).rev() {
                let layer = &self.layers[k];
                let grad = &mut grads[k];
                let input: Vec<f64> = if k == 0 { x.to_vec() } else { pre[k - 1].iter().map(|&v| v.max(0.0)).collect() };
                for (o, &d) in delta.iter().enumerate() {
                    grad.b[o] += d;
                    if d != 0.0 {
                        for (g, &a) in grad.w[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(&input) {
                            *g += d * a;
                        }
                    }
                }
                if k > 0 {
                    let mut back = vec![0.0; layer.inputs];
                    for (o, &d) in delta.iter().enumerate() {
                        if d != 0.0 {
                            for (acc, &w) in back.iter_mut().zip(&layer.w[o * layer.inputs..(o + 1) * layer.inputs]) {
                                *acc += w * d;
                            }
                        }
                    }
                    for (acc, &z) in back.iter_mut().zip(&pre[k - 1]) {
                        if z <= 0.0 {
                            *acc = 0.0;
                        }
                    }
                    delta = back;
                }
            }
        }
        let scale = 1.0 / xs.len() as f64;
        for g in &mut grads {
            g.w.iter_mut().chain(g.b.iter_mut()).for_each(|v| *v *= scale);
        }
        (total * scale, grads, correct)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}
