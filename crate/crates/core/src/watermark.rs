//! Spread-spectrum modulation, embedding and correlation decoding.

use crate::error::{Error, Result};
use crate::key::WatermarkKey;
use crate::message::Message;
use crate::model::ModelWeights;

/// Modulates the sign of each length-`S` block of `s` by the matching
/// antipodal message symbol.
pub fn modulate(message: &Message, s: &[f64], spreading_s: usize) -> Result<Vec<f64>> {
    let n = message.len() * spreading_s;
    if spreading_s == 0 || s.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: s.len() });
    }
    Ok(s.chunks(spreading_s)
        .zip(message.antipodal())
        .flat_map(|(block, u)| block.iter().map(move |&sj| u * sj))
        .collect())
}

fn check_payload(key: &WatermarkKey, message: &Message) -> Result<()> {
    if message.len() != key.payload_l {
        return Err(Error::KeyMismatch(format!(
            "message has {} bits, key payload is {}",
            message.len(),
            key.payload_l
        )));
    }
    Ok(())
}

/// Writes the modulated sequence into the key's host positions and freezes
/// exactly those positions. Biases and non-host weights are left untouched.
pub fn embed(model: &ModelWeights, key: &WatermarkKey, message: &Message) -> Result<ModelWeights> {
    check_payload(key, message)?;
    let positions = key.resolve(model)?;
    let wm = modulate(message, &key.spreading_seq, key.spreading_s)?;
    let mut out = model.clone();
    for (&(ordinal, index), &value) in positions.iter().zip(&wm) {
        out.weights_mut(ordinal)[index] = value as f32;
    }
    out.set_frozen(positions)?;
    Ok(out)
}

/// Per-bit correlation `sum_j s_j * w_j` over each block of host weights.
pub fn correlations(model: &ModelWeights, key: &WatermarkKey) -> Result<Vec<f64>> {
    let positions = key.resolve(model)?;
    let layers = model.layers();
    let host: Vec<f64> = positions.iter().map(|&(o, i)| f64::from(layers[o].weights[i])).collect();
    Ok(host
        .chunks(key.spreading_s)
        .zip(key.spreading_seq.chunks(key.spreading_s))
        .map(|(w, s)| w.iter().zip(s).map(|(w, s)| w * s).sum())
        .collect())
}

/// Decodes bit `i` as 1 when its block correlation is `>= 0`, so an all-zero
/// block decodes to 1.
pub fn extract(model: &ModelWeights, key: &WatermarkKey) -> Result<Message> {
    Message::from_bits(correlations(model, key)?.into_iter().map(|c| c >= 0.0).collect())
}

/// Percentage of differing bits.
pub fn bit_error_rate(b: &Message, b_hat: &Message) -> Result<f64> {
    if b.len() != b_hat.len() {
        return Err(Error::LengthMismatch { expected: b.len(), actual: b_hat.len() });
    }
    let flips = b.bits().iter().zip(b_hat.bits()).filter(|(x, y)| x != y).count();
    Ok(100.0 * flips as f64 / b.len() as f64)
}
