use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `l`-bit watermark payload.
///
/// The antipodal image maps bit 1 to +1 and bit 0 to -1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Message {
    bits: Vec<bool>,
}

impl Message {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::InvalidMessage("payload must hold at least one bit".into()));
        }
        Ok(Self { bits })
    }

    /// Parses a `0`/`1` string, e.g. `"1011"`.
    pub fn from_bit_str(text: &str) -> Result<Self> {
        let bits = text
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidMessage(format!("unexpected character `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(bits)
    }

    /// Reads the first `len` bits of `hex`, most significant bit of each digit
    /// first. The string must supply exactly `ceil(len / 4)` digits and any
    /// padding bits in the last digit must be zero.
    pub fn from_hex(hex: &str, len: usize) -> Result<Self> {
        let hex = hex.trim();
        let hex = hex.strip_prefix("0x").unwrap_or(hex);
        let digits = len.div_ceil(4);
        if hex.len() != digits {
            return Err(Error::InvalidMessage(format!(
                "a {len}-bit message needs {digits} hex digits, got {}",
                hex.len()
            )));
        }
        let mut bits = Vec::with_capacity(digits * 4);
        for c in hex.chars() {
            let nibble = c
                .to_digit(16)
                .ok_or_else(|| Error::InvalidMessage(format!("invalid hex digit `{c}`")))?;
            bits.extend((0..4).rev().map(|k| (nibble >> k) & 1 == 1));
        }
        if bits[len..].iter().any(|&b| b) {
            return Err(Error::InvalidMessage("non-zero padding bits".into()));
        }
        bits.truncate(len);
        Self::from_bits(bits)
    }

    pub fn to_hex(&self) -> String {
        self.bits
            .chunks(4)
            .map(|chunk| {
                let nibble = chunk
                    .iter()
                    .enumerate()
                    .fold(0u32, |acc, (k, &b)| acc | (u32::from(b) << (3 - k)));
                char::from_digit(nibble, 16).expect("nibble < 16")
            })
            .collect()
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Result<Self> {
        Self::from_bits((0..len).map(|_| rng.gen::<bool>()).collect())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn antipodal(&self) -> impl Iterator<Item = f64> + '_ {
        self.bits.iter().map(|&b| if b { 1.0 } else { -1.0 })
    }

    pub fn complement(&self) -> Self {
        Self { bits: self.bits.iter().map(|b| !b).collect() }
    }
}

impl std::fmt::Display for Message {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl TryFrom<String> for Message {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Self::from_bit_str(&value)
    }
}

impl From<Message> for String {
    fn from(value: Message) -> Self {
        value.to_string()
    }
}
