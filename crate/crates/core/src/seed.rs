//! Master seeds and the deterministic stream layout derived from them.
//!
//! Every secret quantity is drawn from ChaCha20 keyed by the 256-bit master
//! seed. ChaCha20 exposes independent 64-bit stream identifiers, and each
//! consumer owns one:
//!
//! | stream | consumer                                  |
//! |--------|-------------------------------------------|
//! | 0      | host index sampling (per layer, in order) |
//! | 1      | spreading sequence (Laplace samples)      |
//! | 2      | random messages                           |
//!
//! The generator is specified byte-for-byte by the ChaCha20 reference, so keys
//! are reproducible across platforms.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const STREAM_HOST_INDICES: u64 = 0;
pub const STREAM_SPREADING: u64 = 1;
pub const STREAM_MESSAGE: u64 = 2;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MasterSeed([u8; 32]);

impl MasterSeed {
    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    /// Little-endian embedding of `value` into the first 8 bytes.
    pub fn from_u64(value: u64) -> Self {
        let mut bytes = [0u8; 32];
        bytes[..8].copy_from_slice(&value.to_le_bytes());
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Parses up to 64 hex digits. Shorter strings are left-padded with zeros,
    /// so `"ff"` and `"00..00ff"` name the same seed.
    pub fn from_hex(text: &str) -> Result<Self> {
        let text = text.trim();
        let text = text.strip_prefix("0x").unwrap_or(text);
        if text.is_empty() || text.len() > 64 {
            return Err(Error::InvalidParameter(format!(
                "master seed must have 1..=64 hex digits, got {}",
                text.len()
            )));
        }
        let padded = format!("{text:0>64}");
        let mut bytes = [0u8; 32];
        for (i, byte) in bytes.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&padded[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::InvalidParameter(format!("invalid hex seed `{text}`")))?;
        }
        Ok(Self(bytes))
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// A fresh generator positioned at the start of `stream`.
    pub fn stream(&self, stream: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::from_seed(self.0);
        rng.set_stream(stream);
        rng
    }
}

impl fmt::Debug for MasterSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MasterSeed({})", self.to_hex())
    }
}

impl fmt::Display for MasterSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for MasterSeed {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_hex(s)
    }
}

impl Serialize for MasterSeed {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for MasterSeed {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Self::from_hex(&text).map_err(serde::de::Error::custom)
    }
}
