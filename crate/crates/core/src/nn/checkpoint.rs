//! Binary parameter checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    "GEMC"
//! version  u32
//! count    u32                 number of tensors
//! manifest count × { rank u32, rank × u64 extents }
//! payload  count × raw f64 values, row-major
//! ```

use std::io::{Cursor, Read};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::Parameterized;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GEMC";
pub const VERSION: u32 = 1;

pub fn save_tensors(tensors: &[&Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION).unwrap();
    out.write_u32::<LittleEndian>(tensors.len() as u32).unwrap();
    for t in tensors {
        out.write_u32::<LittleEndian>(t.rank() as u32).unwrap();
        for &d in t.shape() {
            out.write_u64::<LittleEndian>(d as u64).unwrap();
        }
    }
    for t in tensors {
        for &v in t.data() {
            out.write_f64::<LittleEndian>(v).unwrap();
        }
    }
    out
}

fn truncated(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("truncated stream: {e}"))
}

pub fn load_tensors(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut shapes = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let shape = (0..rank)
            .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(truncated)?;
        shapes.push(shape);
    }
    let needed: usize = shapes.iter().map(|s| s.iter().product::<usize>() * 8).sum();
    let remaining = bytes.len() - r.position() as usize;
    if remaining != needed {
        return Err(Error::Checkpoint(format!(
            "payload holds {remaining} bytes, manifest needs {needed}"
        )));
    }
    shapes
        .into_iter()
        .map(|shape| {
            let n = shape.iter().product();
            let mut data = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut data).map_err(truncated)?;
            Tensor::new(shape, data)
        })
        .collect()
}

pub fn save_params<M: Parameterized + ?Sized>(model: &M) -> Vec<u8> {
    save_tensors(&model.parameters())
}

/// Overwrites `model`'s parameters from a checkpoint whose shape manifest
/// must match the model exactly. On error the model is left untouched.
pub fn load_params_into<M: Parameterized + ?Sized>(model: &mut M, bytes: &[u8]) -> Result<()> {
    let loaded = load_tensors(bytes)?;
    let mut params = model.parameters_mut();
    if loaded.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model has {}",
            loaded.len(),
            params.len()
        )));
    }
    for (i, (p, t)) in params.iter().zip(&loaded).enumerate() {
        if p.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {i}: checkpoint shape {:?}, model shape {:?}",
                t.shape(),
                p.shape()
            )));
        }
    }
    for (p, t) in params.iter_mut().zip(loaded) {
        **p = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mlp};
    use crate::rng::{stream, Stream};

    fn model(seed: u64) -> Mlp {
        Mlp::init(&[3, 4, 2], Activation::LeakyRelu(0.2), Activation::Identity, &mut stream(seed, Stream::Init)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = model(1);
        let bytes = save_params(&a);
        let mut b = model(2);
        assert_ne!(a, b);
        load_params_into(&mut b, &bytes).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_stream_leaves_model_untouched() {
        let a = model(1);
        let bytes = save_params(&a);
        let mut b = model(2);
        let before = b.clone();
        for cut in [0, 3, 10, bytes.len() - 1] {
            assert!(load_params_into(&mut b, &bytes[..cut]).is_err());
            assert_eq!(b, before);
        }
    }

    #[test]
    fn version_and_manifest_checked() {
        let a = model(1);
        let mut bytes = save_params(&a);
        bytes[4] = 9;
        assert!(matches!(load_tensors(&bytes), Err(Error::Checkpoint(m)) if m.contains("version")));

        let other = Mlp::init(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut stream(1, Stream::Init)).unwrap();
        let mut b = model(3);
        assert!(load_params_into(&mut b, &save_params(&other)).is_err());
    }
}
