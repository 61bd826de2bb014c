//! Model checkpoint file format.
//!
//! Layout (little-endian): magic `HMTW`, u16 version, u64 spec-hash, then per
//! tensor: u16 name length, UTF-8 name, u8 rank, u32 dims, f32 data
//! (row-major). Round-trips are bit-exact. Training metadata (epoch count,
//! seed) rides in a reserved `__meta` tensor whose f32 entries carry the raw
//! bit patterns.

use crate::error::{Error, Result};
use crate::models::{ModelSpec, ModelWeights};
use crate::tensor::Tensor;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"HMTW";
pub const VERSION: u16 = 1;
const META_NAME: &str = "__meta";

pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(weights.spec_hash)?;

    let meta = [
        f32::from_bits(weights.epochs),
        f32::from_bits((weights.seed & 0xFFFF_FFFF) as u32),
        f32::from_bits((weights.seed >> 32) as u32),
    ];
    write_tensor(&mut w, META_NAME, &[3], &meta)?;
    for (name, tensor) in &weights.tensors {
        write_tensor(&mut w, name, tensor.shape(), tensor.data())?;
    }
    w.flush()?;
    Ok(())
}

fn write_tensor<W: Write>(w: &mut W, name: &str, shape: &[usize], data: &[f32]) -> Result<()> {
    let name_bytes = name.as_bytes();
    if name_bytes.len() > u16::MAX as usize {
        return Err(Error::parameter("tensor name too long"));
    }
    w.write_u16::<LittleEndian>(name_bytes.len() as u16)?;
    w.write_all(name_bytes)?;
    if shape.len() > u8::MAX as usize {
        return Err(Error::parameter("tensor rank too large"));
    }
    w.write_u8(shape.len() as u8)?;
    for &d in shape {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    for &v in data {
        w.write_u32::<LittleEndian>(v.to_bits())?;
    }
    Ok(())
}

struct Counting<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Counting<R> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::format(self.offset, message)
    }
}

impl<R: Read> Read for Counting<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.offset += n as u64;
        Ok(n)
    }
}

/// Load a checkpoint without spec verification (inspection tooling).
pub fn load_weights_unchecked(path: &Path) -> Result<ModelWeights> {
    let mut r = Counting {
        inner: BufReader::new(File::open(path)?),
        offset: 0,
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| r.fail("file shorter than magic"))?;
    if &magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected HMTW")));
    }
    let version = r
        .read_u16::<LittleEndian>()
        .map_err(|_| r.fail("missing version"))?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let spec_hash = r
        .read_u64::<LittleEndian>()
        .map_err(|_| r.fail("missing spec hash"))?;

    let mut tensors: Vec<(String, Tensor<f32>)> = Vec::new();
    let mut epochs = 0u32;
    let mut seed = 0u64;
    loop {
        let name_len = match r.read_u16::<LittleEndian>() {
            Ok(n) => n as usize,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(_) => return Err(r.fail("truncated tensor header")),
        };
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| r.fail("truncated tensor name"))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| r.fail("tensor name is not valid UTF-8"))?;
        let rank = r.read_u8().map_err(|_| r.fail("truncated tensor rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r
                .read_u32::<LittleEndian>()
                .map_err(|_| r.fail("truncated tensor dims"))? as usize;
            shape.push(d);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let bits = r
                .read_u32::<LittleEndian>()
                .map_err(|_| r.fail(format!("truncated data for tensor '{name}'")))?;
            data.push(f32::from_bits(bits));
        }
        if name == META_NAME {
            if data.len() != 3 {
                return Err(r.fail("malformed __meta tensor"));
            }
            epochs = data[0].to_bits();
            seed = (data[1].to_bits() as u64) | ((data[2].to_bits() as u64) << 32);
        } else {
            let tensor = Tensor::new(shape, data)
                .map_err(|e| r.fail(format!("tensor '{name}': {e}")))?;
            tensors.push((name, tensor));
        }
    }

    Ok(ModelWeights {
        spec_hash,
        epochs,
        seed,
        tensors,
    })
}

/// Load and verify against the spec the caller intends to run.
pub fn load_weights(path: &Path, spec: &ModelSpec) -> Result<ModelWeights> {
    let weights = load_weights_unchecked(path)?;
    let expected = spec.content_hash();
    if weights.spec_hash != expected {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint hash {:#018x} does not match spec '{}' hash {:#018x}",
            weights.spec_hash, spec.name, expected
        )));
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_mcn, build_srn, init_weights};

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = build_srn(2, [6, 16, 20]).unwrap();
        let mut weights = init_weights(&spec, 123).unwrap();
        weights.epochs = 57;
        weights.seed = 0xDEAD_BEEF_1234_5678;
        let path = dir.path().join("w.hmtw");
        save_weights(&weights, &path).unwrap();
        let loaded = load_weights(&path, &spec).unwrap();
        assert_eq!(loaded.spec_hash, weights.spec_hash);
        assert_eq!(loaded.epochs, 57);
        assert_eq!(loaded.seed, 0xDEAD_BEEF_1234_5678);
        assert_eq!(loaded.tensors.len(), weights.tensors.len());
        for ((na, ta), (nb, tb)) in weights.tensors.iter().zip(&loaded.tensors) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            let bits_a: Vec<u32> = ta.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = tb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn wrong_spec_is_incompatible() {
        let dir = tempfile::tempdir().unwrap();
        let spec = build_srn(1, [6, 16, 20]).unwrap();
        let weights = init_weights(&spec, 1).unwrap();
        let path = dir.path().join("w.hmtw");
        save_weights(&weights, &path).unwrap();

        let other = build_mcn([6, 16, 20]).unwrap();
        match load_weights(&path, &other) {
            Err(Error::IncompatibleCheckpoint(_)) => {}
            other => panic!("expected incompatible-checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let spec = build_srn(1, [6, 16, 20]).unwrap();
        let weights = init_weights(&spec, 1).unwrap();
        let path = dir.path().join("w.hmtw");
        save_weights(&weights, &path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        match load_weights(&path, &spec) {
            Err(Error::Format { .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_a_format_error_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        let spec = build_srn(1, [6, 16, 20]).unwrap();
        let weights = init_weights(&spec, 1).unwrap();
        let path = dir.path().join("w.hmtw");
        save_weights(&weights, &path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match load_weights(&path, &spec) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
