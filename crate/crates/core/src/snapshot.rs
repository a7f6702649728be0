//! Binary model snapshots.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic           4 bytes  "WMNS"
//! format_version  u32
//! layer_count     u32
//! per layer:
//!   name_len      u32, then name_len bytes of UTF-8
//!   rank          u32, then rank x u64 dims
//!   weights       prod(dims) x f32
//!   bias_len      u64, then bias_len x f32
//! frozen_count    u64
//! per frozen position:
//!   layer ordinal u32, flat index u64
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Layer, ModelWeights};

pub const MAGIC: &[u8; 4] = b"WMNS";
pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

pub fn write<W: Write>(model: &ModelWeights, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&SNAPSHOT_FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(model.layers().len() as u32).to_le_bytes())?;
    for layer in model.layers() {
        out.write_all(&(layer.name.len() as u32).to_le_bytes())?;
        out.write_all(layer.name.as_bytes())?;
        out.write_all(&(layer.shape.len() as u32).to_le_bytes())?;
        for &d in &layer.shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for w in &layer.weights {
            out.write_all(&w.to_le_bytes())?;
        }
        out.write_all(&(layer.bias.len() as u64).to_le_bytes())?;
        for b in &layer.bias {
            out.write_all(&b.to_le_bytes())?;
        }
    }
    out.write_all(&(model.frozen_mask().len() as u64).to_le_bytes())?;
    for &(ordinal, index) in model.frozen_mask() {
        out.write_all(&(ordinal as u32).to_le_bytes())?;
        out.write_all(&(index as u64).to_le_bytes())?;
    }
    Ok(())
}

pub fn to_bytes(model: &ModelWeights) -> Vec<u8> {
    let mut buf = Vec::new();
    write(model, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::SnapshotFormat(format!("truncated snapshot: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.bytes()?))
            .map_err(|_| Error::SnapshotFormat("length does not fit in memory".into()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut raw = Vec::new();
        let want = n.checked_mul(4).ok_or_else(|| Error::SnapshotFormat("length overflow".into()))?;
        (&mut self.inner).take(want as u64).read_to_end(&mut raw)?;
        if raw.len() != want {
            return Err(Error::SnapshotFormat("truncated snapshot".into()));
        }
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

pub fn read<R: Read>(input: R) -> Result<ModelWeights> {
    let mut r = Reader { inner: input };
    if &r.bytes::<4>()? != MAGIC {
        return Err(Error::SnapshotFormat("bad magic".into()));
    }
    let version = r.u32()?;
    if version != SNAPSHOT_FORMAT_VERSION {
        return Err(Error::SnapshotFormat(format!("unsupported format version {version}")));
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let mut name = vec![0u8; name_len];
        r.inner
            .read_exact(&mut name)
            .map_err(|_| Error::SnapshotFormat("truncated layer name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::SnapshotFormat("layer name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let size = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::SnapshotFormat("shape overflow".into()))?;
        let weights = r.f32s(size)?;
        let bias_len = r.u64()?;
        let bias = r.f32s(bias_len)?;
        layers.push(Layer::new(name, shape, weights, bias).map_err(|e| Error::SnapshotFormat(e.to_string()))?);
    }
    let mut model = ModelWeights::new(layers).map_err(|e| Error::SnapshotFormat(e.to_string()))?;
    let frozen = r.u64()?;
    let mut positions = Vec::with_capacity(frozen.min(1 << 20));
    for _ in 0..frozen {
        positions.push((r.u32()? as usize, r.u64()?));
    }
    model.set_frozen(positions).map_err(|e| Error::SnapshotFormat(e.to_string()))?;
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::SnapshotFormat("trailing bytes after frozen mask".into()));
    }
    Ok(model)
}

pub fn save(model: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelWeights> {
    read(fs::read(path)?.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ModelWeights {
        let mut m = ModelWeights::new(vec![
            Layer::new("fc1", vec![2, 3], vec![0.5, -0.0, f32::MIN_POSITIVE, 1e-40, -7.25, 3.0], vec![0.1, 0.2])
                .unwrap(),
            Layer::new("head", vec![1, 2], vec![1.0, 2.0], vec![-1.0]).unwrap(),
        ])
        .unwrap();
        m.set_frozen([(0, 4), (1, 1)]).unwrap();
        m
    }

    #[test]
    fn header_layout() {
        let bytes = to_bytes(&sample());
        assert_eq!(&bytes[..4], b"WMNS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(&bytes[16..19], b"fc1");
    }

    #[test]
    fn round_trip_keeps_bits() {
        let m = sample();
        let back = read(to_bytes(&m).as_slice()).unwrap();
        assert_eq!(back.frozen_mask(), m.frozen_mask());
        for (a, b) in back.layers().iter().zip(m.layers()) {
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.weights), bits(&b.weights));
            assert_eq!(bits(&a.bias), bits(&b.bias));
            assert_eq!(a.shape, b.shape);
        }
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = to_bytes(&sample());
        assert!(read(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read(bad.as_slice()).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read(extra.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_weights_round_trip(ws in proptest::collection::vec(any::<u32>(), 1..64)) {
            let weights: Vec<f32> = ws.iter().map(|&b| f32::from_bits(b)).collect();
            let n = weights.len();
            let m = ModelWeights::new(vec![Layer::new("x", vec![n], weights, vec![]).unwrap()]).unwrap();
            let back = read(to_bytes(&m).as_slice()).unwrap();
            let a: Vec<u32> = back.layers()[0].weights.iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, ws);
        }
    }
}
