//! IDX container parsing: a big-endian magic word, big-endian `u32`
//! extents, then raw unsigned bytes.

use std::path::Path;

use super::{Dataset, DatasetMeta};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn header(bytes: &[u8], magic: u32, dims: usize, what: &str) -> Result<Vec<usize>> {
    let need = 4 + 4 * dims;
    if bytes.len() < need {
        return Err(Error::Idx(format!("{what}: header truncated ({} bytes)", bytes.len())));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != magic {
        return Err(Error::Idx(format!("{what}: magic {:#010x}, expected {magic:#010x}", word(0))));
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let d = header(bytes, IMAGES_MAGIC, 3, "images")?;
    let (count, rows, cols) = (d[0], d[1], d[2]);
    let payload = &bytes[16..];
    let expected = count * rows * cols;
    if payload.len() != expected {
        return Err(Error::Idx(format!(
            "images: payload has {} bytes, header promises {expected}",
            payload.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: payload.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let d = header(bytes, LABELS_MAGIC, 1, "labels")?;
    let payload = &bytes[8..];
    if payload.len() != d[0] {
        return Err(Error::Idx(format!(
            "labels: payload has {} bytes, header promises {}",
            payload.len(),
            d[0]
        )));
    }
    Ok(payload.to_vec())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdxOptions {
    /// Average non-overlapping 2×2 blocks (28×28 becomes 14×14).
    pub downsample: bool,
    /// Keep only these digits, relabeled `0..len` in the given order. Every
    /// listed digit must occur.
    pub classes: Option<Vec<u8>>,
    /// Keep at most this many samples per kept class, in file order.
    pub per_class: Option<usize>,
}

fn pool2(img: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let (r2, c2) = (rows / 2, cols / 2);
    let mut out = Vec::with_capacity(r2 * c2);
    for r in 0..r2 {
        for c in 0..c2 {
            let at = |dr: usize, dc: usize| img[(2 * r + dr) * cols + 2 * c + dc];
            out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0);
        }
    }
    out
}

/// Builds a dataset from parsed IDX buffers; pixels are scaled to `[0, 1]`.
pub fn idx_dataset(images: &IdxImages, labels: &[u8], options: &IdxOptions, name: &str) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(Error::Idx(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    if options.downsample && (images.rows % 2 != 0 || images.cols % 2 != 0) {
        return Err(Error::Idx(format!("cannot 2x2-pool {}x{} images", images.rows, images.cols)));
    }
    let classes: Vec<u8> = match &options.classes {
        Some(c) => c.clone(),
        None => (0..=labels.iter().copied().max().unwrap_or(0)).collect(),
    };
    let size = images.rows * images.cols;
    let mut taken = vec![0usize; classes.len()];
    let mut data = Vec::new();
    let mut out_labels = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        let Some(slot) = classes.iter().position(|&c| c == label) else { continue };
        if options.per_class.is_some_and(|cap| taken[slot] >= cap) {
            continue;
        }
        taken[slot] += 1;
        let img: Vec<f64> = images.pixels[i * size..(i + 1) * size]
            .iter()
            .map(|&p| p as f64 / 255.0)
            .collect();
        if options.downsample {
            data.extend(pool2(&img, images.rows, images.cols));
        } else {
            data.extend(img);
        }
        out_labels.push(slot);
    }
    if let Some((slot, _)) = taken.iter().enumerate().find(|(_, &t)| t == 0 && options.classes.is_some()) {
        return Err(Error::Idx(format!("no samples of digit {}", classes[slot])));
    }
    let dim = if options.downsample { size / 4 } else { size };
    let n = out_labels.len();
    Dataset::new(
        Tensor::new([n, dim], data)?,
        Some(out_labels),
        classes.len(),
        DatasetMeta {
            name: name.to_string(),
            range: (0.0, 1.0),
            seed: None,
        },
    )
}

pub fn load_idx(images: &Path, labels: &Path, options: &IdxOptions) -> Result<Dataset> {
    let img = parse_idx_images(&std::fs::read(images)?)?;
    let lab = parse_idx_labels(&std::fs::read(labels)?)?;
    let name = images
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    idx_dataset(&img, &lab, options, &name)
}
