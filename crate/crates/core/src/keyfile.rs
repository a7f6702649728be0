//! Versioned JSON key files.
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "master_seed": "<64 hex digits>",
//!   "payload_l": 64,
//!   "spreading_s": 50,
//!   "layers": [{"name": "fc2", "gamma": 1.2345678901234567e-1, "indices": [..]}, ..],
//!   "spreading_seq": [-3.0517578125000000e-2, ..]
//! }
//! ```
//!
//! Reals are written with 17 significant digits, which is enough for every
//! `f64` to parse back to the identical bit pattern.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::key::{KeyLayer, WatermarkKey};
use crate::seed::MasterSeed;

pub const KEY_FORMAT_VERSION: u32 = 1;

fn real(x: f64) -> Result<Box<RawValue>> {
    if !x.is_finite() {
        return Err(Error::KeyFormat(format!("cannot store non-finite value {x}")));
    }
    RawValue::from_string(format!("{x:.16e}")).map_err(|e| Error::KeyFormat(e.to_string()))
}

#[derive(Serialize)]
struct LayerOut<'a> {
    name: &'a str,
    gamma: Box<RawValue>,
    indices: &'a [usize],
}

#[derive(Serialize)]
struct KeyOut<'a> {
    format_version: u32,
    master_seed: String,
    payload_l: usize,
    spreading_s: usize,
    layers: Vec<LayerOut<'a>>,
    spreading_seq: Vec<Box<RawValue>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerIn {
    name: String,
    gamma: f64,
    indices: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyIn {
    format_version: u32,
    master_seed: String,
    payload_l: usize,
    spreading_s: usize,
    layers: Vec<LayerIn>,
    spreading_seq: Vec<f64>,
}

pub fn to_string(key: &WatermarkKey) -> Result<String> {
    key.validate()?;
    let layers = key
        .layers
        .iter()
        .map(|l| Ok(LayerOut { name: &l.name, gamma: real(l.gamma)?, indices: &l.indices }))
        .collect::<Result<Vec<_>>>()?;
    let out = KeyOut {
        format_version: KEY_FORMAT_VERSION,
        master_seed: key.master_seed.to_hex(),
        payload_l: key.payload_l,
        spreading_s: key.spreading_s,
        layers,
        spreading_seq: key.spreading_seq.iter().map(|&x| real(x)).collect::<Result<_>>()?,
    };
    serde_json::to_string_pretty(&out).map_err(|e| Error::KeyFormat(e.to_string()))
}

pub fn from_str(text: &str) -> Result<WatermarkKey> {
    let parsed: KeyIn = serde_json::from_str(text).map_err(|e| Error::KeyFormat(e.to_string()))?;
    if parsed.format_version != KEY_FORMAT_VERSION {
        return Err(Error::KeyFormat(format!(
            "unsupported format version {} (expected {KEY_FORMAT_VERSION})",
            parsed.format_version
        )));
    }
    let key = WatermarkKey {
        master_seed: MasterSeed::from_hex(&parsed.master_seed).map_err(|e| Error::KeyFormat(e.to_string()))?,
        payload_l: parsed.payload_l,
        spreading_s: parsed.spreading_s,
        layers: parsed
            .layers
            .into_iter()
            .map(|l| KeyLayer { name: l.name, gamma: l.gamma, indices: l.indices })
            .collect(),
        spreading_seq: parsed.spreading_seq,
    };
    key.validate().map_err(|e| Error::KeyFormat(e.to_string()))?;
    Ok(key)
}

pub fn save(key: &WatermarkKey, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_string(key)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<WatermarkKey> {
    from_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Layer, ModelWeights};
    use crate::plan::EmbeddingPlan;
    use crate::derive_key;
    use proptest::prelude::*;

    fn sample_key(seed: u64) -> WatermarkKey {
        let m = ModelWeights::new(vec![
            Layer::new("a", vec![40], vec![0.0; 40], vec![]).unwrap(),
            Layer::new("b", vec![30], vec![0.0; 30], vec![]).unwrap(),
        ])
        .unwrap();
        let plan = EmbeddingPlan::even_split(vec!["a".into(), "b".into()], 24, 1.3, vec![0.31, 0.077]).unwrap();
        derive_key(MasterSeed::from_u64(seed), &m, &plan, 8, 3).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let key = sample_key(5);
        let back = from_str(&to_string(&key).unwrap()).unwrap();
        assert_eq!(back, key);
        for (a, b) in back.spreading_seq.iter().zip(&key.spreading_seq) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn seventeen_significant_digits() {
        let text = to_string(&sample_key(1)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["format_version"], 1);
        let gamma_text = text.split("\"gamma\": ").nth(1).unwrap().split(',').next().unwrap();
        let mantissa = gamma_text.split('e').next().unwrap().replace(['.', '-'], "");
        assert_eq!(mantissa.len(), 17, "{gamma_text}");
    }

    #[test]
    fn rejects_bad_files() {
        let text = to_string(&sample_key(2)).unwrap();
        assert!(from_str(&text.replace("\"format_version\": 1", "\"format_version\": 9")).is_err());
        assert!(from_str(&text.replace("\"payload_l\": 8", "\"payload_l\": 9")).is_err());
        assert!(from_str(&text.replace("\"spreading_s\"", "\"bogus\": 1, \"spreading_s\"")).is_err());
        assert!(from_str("not json").is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_reals_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 2)) {
            let mut key = sample_key(0);
            key.spreading_seq[0] = values[0];
            key.spreading_seq[1] = values[1] * 1e-300;
            let back = from_str(&to_string(&key).unwrap()).unwrap();
            prop_assert_eq!(back.spreading_seq[0].to_bits(), key.spreading_seq[0].to_bits());
            prop_assert_eq!(back.spreading_seq[1].to_bits(), key.spreading_seq[1].to_bits());
        }
    }
}
