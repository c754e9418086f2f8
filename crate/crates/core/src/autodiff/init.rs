use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Uniform on `[low, high]`; `low == high` gives a constant tensor.
    Uniform { low: f64, high: f64 },
    /// Zero-mean normal with variance `1 / fan_in`.
    ScaledNormal { fan_in: usize },
}

/// Draws a parameter tensor from `rng`.
pub fn init_with<R: Rng + ?Sized>(shape: &[usize], scheme: InitScheme, rng: &mut R) -> Result<Tensor> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "parameters need positive extents".into(),
        });
    }
    let n: usize = shape.iter().product();
    let data = match scheme {
        InitScheme::Uniform { low, high } => {
            if !(high >= low) || !low.is_finite() || !high.is_finite() {
                return Err(Error::invalid(format!("uniform bounds [{low}, {high}]")));
            }
            if high == low {
                vec![low; n]
            } else {
                (0..n).map(|_| rng.random_range(low..high)).collect()
            }
        }
        InitScheme::ScaledNormal { fan_in } => {
            if fan_in == 0 {
                return Err(Error::invalid("fan_in must be positive"));
            }
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("finite std");
            (0..n).map(|_| normal.sample(rng)).collect()
        }
    };
    Tensor::new(shape.to_vec(), data)
}

/// Deterministic initialization from a seed.
pub fn init_params(shape: &[usize], scheme: InitScheme, seed: u64) -> Result<Tensor> {
    init_with(shape, scheme, &mut stream(seed, Stream::Init))
}
