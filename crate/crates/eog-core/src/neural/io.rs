//! Weights file.
//!
//! Byte layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "EOGNNWTS"
//! version      u32
//! spec digest  32 bytes SHA-256 of the canonical spec text
//! seed         u64
//! epochs       u32
//! final loss   f64
//! layer count  u32
//! per layer:   u32 tensor count (0, or 2 for weight then bias)
//!   per tensor: u32 rank, rank x u64 dims, prod(dims) x f64
//! checksum     32 bytes SHA-256 of every preceding byte
//! ```

use std::fs;
use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{LayerParams, NetworkSpec, NetworkWeights, Tensor, TrainMeta};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EOGNNWTS";
pub const FORMAT_VERSION: u32 = 1;

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes weights for `spec`.
pub fn write_weights(spec: &NetworkSpec, weights: &NetworkWeights) -> Result<Vec<u8>> {
    weights.check_shapes(spec)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&spec.digest());
    out.extend_from_slice(&weights.meta.seed.to_le_bytes());
    out.extend_from_slice(&weights.meta.epochs.to_le_bytes());
    out.extend_from_slice(&weights.meta.final_loss.to_le_bytes());
    out.extend_from_slice(&(weights.layers.len() as u32).to_le_bytes());
    for l in &weights.layers {
        if l.is_empty() {
            out.extend_from_slice(&0u32.to_le_bytes());
        } else {
            out.extend_from_slice(&2u32.to_le_bytes());
            put_tensor(&mut out, &l.weight);
            put_tensor(&mut out, &l.bias);
        }
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format("weights file is truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::format(format!("tensor rank {rank} is implausible")));
        }
        let dims = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= (self.buf.len() - self.pos) / 8)
            .ok_or_else(|| Error::format("tensor larger than the remaining file"))?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Tensor { dims, data })
    }
}

/// Parses and validates a weights file against `spec`.
///
/// Checks run in order: magic, version, checksum, structure, tensor shapes
/// against the spec (naming the first offending layer), spec digest.
pub fn read_weights(bytes: &[u8], spec: &NetworkSpec) -> Result<NetworkWeights> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format("not a weights file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 12 + 32 + 32 {
        return Err(Error::format("weights file is truncated"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::format(
            "weights file is corrupt or truncated (checksum mismatch)",
        ));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
    let meta = TrainMeta {
        seed: r.u64()?,
        epochs: r.u32()?,
        final_loss: r.f64()?,
    };
    let n_layers = r.u32()? as usize;
    if n_layers > 1024 {
        return Err(Error::format("implausible layer count"));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        layers.push(match r.u32()? {
            0 => LayerParams::empty(),
            2 => LayerParams {
                weight: r.tensor()?,
                bias: r.tensor()?,
            },
            n => return Err(Error::format(format!("layer with {n} tensors"))),
        });
    }
    if r.pos != body.len() {
        return Err(Error::format("trailing bytes in weights file"));
    }
    let weights = NetworkWeights { layers, meta };
    weights.check_shapes(spec)?;
    if digest != spec.digest() {
        return Err(Error::format(
            "weights were saved for a different network spec (digest mismatch)",
        ));
    }
    Ok(weights)
}

/// Writes to a temporary sibling, then renames over `path`.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::input(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn save_weights(path: &Path, spec: &NetworkSpec, weights: &NetworkWeights) -> Result<()> {
    let bytes = write_weights(spec, weights)?;
    atomic_write(path, &bytes)
}

pub fn load_weights(path: &Path, spec: &NetworkSpec) -> Result<NetworkWeights> {
    read_weights(&fs::read(path)?, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{build_ann, build_cnn};

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = build_cnn(10);
        let mut w = NetworkWeights::init(&spec, 17);
        w.meta.final_loss = 0.123_456_789;
        w.layers[0].bias.data[3] = -0.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        save_weights(&path, &spec, &w).unwrap();
        let back = load_weights(&path, &spec).unwrap();
        assert_eq!(back, w);
        assert!(back.layers[0].bias.data[3].is_sign_negative());
    }

    #[test]
    fn truncation_and_corruption() {
        let spec = build_ann();
        let bytes = write_weights(&spec, &NetworkWeights::init(&spec, 1)).unwrap();
        for cut in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(read_weights(&bytes[..cut], &spec), Err(Error::Format(_))),
                "cut {cut}"
            );
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(matches!(
            read_weights(&flipped, &spec),
            Err(Error::Format(_))
        ));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(
            read_weights(&v2, &spec),
            Err(Error::Version { found: 2, .. })
        ));
    }

    #[test]
    fn wrong_spec_names_first_layer() {
        let ann = build_ann();
        let bytes = write_weights(&ann, &NetworkWeights::init(&ann, 1)).unwrap();
        match read_weights(&bytes, &build_cnn(10)) {
            Err(Error::ShapeMismatch { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("{other:?}"),
        }
    }
}
