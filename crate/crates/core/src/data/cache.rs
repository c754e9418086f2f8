//! Versioned binary dataset cache.
//!
//! ```text
//! magic    "GEMD"
//! version  u32
//! n, d     u64, u64
//! classes  u64
//! range    f64, f64
//! seed     u8 flag, u64
//! name     u32 length, UTF-8 bytes
//! labels   u8 flag, n × u32
//! values   n·d × f64
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Cursor, Read};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Dataset, DatasetMeta};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"GEMD";
pub const CACHE_VERSION: u32 = 1;

pub fn write_dataset(d: &Dataset) -> Vec<u8> {
    let mut out = CACHE_MAGIC.to_vec();
    out.write_u32::<LittleEndian>(CACHE_VERSION).unwrap();
    out.write_u64::<LittleEndian>(d.len() as u64).unwrap();
    out.write_u64::<LittleEndian>(d.dim() as u64).unwrap();
    out.write_u64::<LittleEndian>(d.classes() as u64).unwrap();
    out.write_f64::<LittleEndian>(d.meta.range.0).unwrap();
    out.write_f64::<LittleEndian>(d.meta.range.1).unwrap();
    out.write_u8(u8::from(d.meta.seed.is_some())).unwrap();
    out.write_u64::<LittleEndian>(d.meta.seed.unwrap_or(0)).unwrap();
    out.write_u32::<LittleEndian>(d.meta.name.len() as u32).unwrap();
    out.extend_from_slice(d.meta.name.as_bytes());
    out.write_u8(u8::from(d.labels().is_some())).unwrap();
    for &l in d.labels().unwrap_or(&[]) {
        out.write_u32::<LittleEndian>(l as u32).unwrap();
    }
    for &v in d.features().data() {
        out.write_f64::<LittleEndian>(v).unwrap();
    }
    out
}

fn short(e: std::io::Error) -> Error {
    Error::Dataset(format!("cache truncated: {e}"))
}

pub fn read_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(short)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Dataset(format!("cache magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(short)?;
    if version != CACHE_VERSION {
        return Err(Error::Dataset(format!("cache version {version}, expected {CACHE_VERSION}")));
    }
    let n = r.read_u64::<LittleEndian>().map_err(short)? as usize;
    let d = r.read_u64::<LittleEndian>().map_err(short)? as usize;
    let classes = r.read_u64::<LittleEndian>().map_err(short)? as usize;
    let range = (
        r.read_f64::<LittleEndian>().map_err(short)?,
        r.read_f64::<LittleEndian>().map_err(short)?,
    );
    let has_seed = r.read_u8().map_err(short)? != 0;
    let seed = r.read_u64::<LittleEndian>().map_err(short)?;
    let len = r.read_u32::<LittleEndian>().map_err(short)? as usize;
    let mut name = vec![0u8; len.min(bytes.len())];
    r.read_exact(&mut name).map_err(short)?;
    let name = String::from_utf8(name).map_err(|_| Error::Dataset("cache name is not UTF-8".into()))?;
    let labels = if r.read_u8().map_err(short)? != 0 {
        let mut l = vec![0u32; n.min(bytes.len())];
        r.read_u32_into::<LittleEndian>(&mut l).map_err(short)?;
        Some(l.into_iter().map(|v| v as usize).collect())
    } else {
        None
    };
    let remaining = bytes.len() - r.position() as usize;
    if remaining != n * d * 8 {
        return Err(Error::Dataset(format!("cache payload has {remaining} bytes, expected {}", n * d * 8)));
    }
    let mut values = vec![0.0; n * d];
    r.read_f64_into::<LittleEndian>(&mut values).map_err(short)?;
    Dataset::new(
        Tensor::new([n, d], values)?,
        labels,
        classes,
        DatasetMeta {
            name,
            range,
            seed: has_seed.then_some(seed),
        },
    )
}
