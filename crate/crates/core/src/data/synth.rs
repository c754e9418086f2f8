use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Synthetic mixture families. The 2-D kinds live in `[-1, 1]²`;
/// `bernoulli-pixels` lives in `[0, 1]^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Tight isotropic Gaussians on a square grid.
    GaussianGrid,
    /// Pairs of concentric rings; ring `2p` is the inner ring of pair `p`.
    TwoRings,
    /// Curved arms radiating from the origin.
    Pinwheel,
    /// Binary-valued images: a class glyph plus a sliding bar whose position
    /// is independent of the class.
    BernoulliPixels,
}

impl SynthKind {
    pub const ALL: [SynthKind; 4] = [
        SynthKind::GaussianGrid,
        SynthKind::TwoRings,
        SynthKind::Pinwheel,
        SynthKind::BernoulliPixels,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::GaussianGrid => "gaussian-grid",
            SynthKind::TwoRings => "two-rings",
            SynthKind::Pinwheel => "pinwheel",
            SynthKind::BernoulliPixels => "bernoulli-pixels",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            SynthKind::GaussianGrid => "isotropic Gaussians on a square grid, 2-D",
            SynthKind::TwoRings => "concentric ring pairs, 2-D",
            SynthKind::Pinwheel => "curved pinwheel arms, 2-D",
            SynthKind::BernoulliPixels => "binary glyph per class plus a class-independent sliding bar, 6K + 64 pixels",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Dataset(format!("unknown synthetic kind `{s}`")))
    }
}

/// Glyph pixels per class in `bernoulli-pixels`.
pub const GLYPH_WIDTH: usize = 6;
/// Pixels of the sliding-bar strip.
pub const STRIP_WIDTH: usize = 64;
/// Width of the bar inside the strip.
pub const BAR_WIDTH: usize = 24;
/// Probability that a pixel's bit is flipped.
pub const FLIP_PROB: f64 = 0.02;

/// `n` samples from `kind` with `k` components of equal weight; labels are
/// assigned round-robin so every class has `⌊n/k⌋` or `⌈n/k⌉` samples.
pub fn synth_mixture(kind: SynthKind, k: usize, n: usize, seed: u64) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::Dataset("K must be positive".into()));
    }
    if n < 10 * k {
        return Err(Error::Dataset(format!("need N >= 10 K, got N = {n}, K = {k}")));
    }
    let mut rng = stream(seed, Stream::Data);
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let (data, range) = match kind {
        SynthKind::GaussianGrid => (gaussian_grid(&labels, k, &mut rng), (-1.0, 1.0)),
        SynthKind::TwoRings => (two_rings(&labels, k, &mut rng), (-1.0, 1.0)),
        SynthKind::Pinwheel => (pinwheel(&labels, k, &mut rng), (-1.0, 1.0)),
        SynthKind::BernoulliPixels => (bernoulli_pixels(&labels, k, &mut rng), (0.0, 1.0)),
    };
    let dim = data.len() / n;
    let data = data.into_iter().map(|v: f64| v.clamp(range.0, range.1)).collect();
    Dataset::new(
        Tensor::new([n, dim], data)?,
        Some(labels),
        k,
        DatasetMeta {
            name: kind.name().to_string(),
            range,
            seed: Some(seed),
        },
    )
}

fn gaussian_grid<R: Rng>(labels: &[usize], k: usize, rng: &mut R) -> Vec<f64> {
    let side = (k as f64).sqrt().ceil() as usize;
    let spacing = 1.6 / side as f64;
    let noise = Normal::new(0.0, 0.08 * spacing).unwrap();
    labels
        .iter()
        .flat_map(|&c| {
            let (row, col) = (c / side, c % side);
            let cx = -0.8 + spacing * (col as f64 + 0.5);
            let cy = -0.8 + spacing * (row as f64 + 0.5);
            [cx + noise.sample(rng), cy + noise.sample(rng)]
        })
        .collect()
}

fn two_rings<R: Rng>(labels: &[usize], k: usize, rng: &mut R) -> Vec<f64> {
    let pairs = k.div_ceil(2);
    let cell = 2.0 / pairs as f64;
    let noise = Normal::new(0.0, 0.025 * cell).unwrap();
    labels
        .iter()
        .flat_map(|&c| {
            let pair = c / 2;
            let cx = -1.0 + cell * (pair as f64 + 0.5);
            let radius = if c % 2 == 0 { 0.2 * cell } else { 0.45 * cell };
            let t = rng.random_range(0.0..2.0 * PI);
            let r = radius + noise.sample(rng);
            [cx + r * t.cos(), r * t.sin()]
        })
        .collect()
}

fn pinwheel<R: Rng>(labels: &[usize], k: usize, rng: &mut R) -> Vec<f64> {
    let radial = Normal::new(0.0, 0.3).unwrap();
    let tangential = Normal::new(0.0, 0.05).unwrap();
    labels
        .iter()
        .flat_map(|&c| {
            let a: f64 = radial.sample(rng) + 1.0;
            let b: f64 = tangential.sample(rng);
            let angle = 2.0 * PI * c as f64 / k as f64 + 0.25 * (a.exp() - 1.0);
            let (s, co) = angle.sin_cos();
            [0.45 * (co * a - s * b), 0.45 * (s * a + co * b)]
        })
        .collect()
}

/// Each sample is `K` glyph slots of [`GLYPH_WIDTH`] pixels, where slot `c`
/// is lit for class `c`, followed by a strip of [`STRIP_WIDTH`] pixels
/// holding a bar of [`BAR_WIDTH`] lit pixels at a uniform position. Bits are
/// flipped with probability [`FLIP_PROB`]; a lit pixel takes a value in
/// `[0.9, 1]` and a dark pixel a value in `[0, 0.1]`.
fn bernoulli_pixels<R: Rng>(labels: &[usize], k: usize, rng: &mut R) -> Vec<f64> {
    let dim = k * GLYPH_WIDTH + STRIP_WIDTH;
    let positions = STRIP_WIDTH - BAR_WIDTH + 1;
    let mut out = Vec::with_capacity(labels.len() * dim);
    for &c in labels {
        let bar = rng.random_range(0..positions);
        for p in 0..dim {
            let lit = if p < k * GLYPH_WIDTH {
                p / GLYPH_WIDTH == c
            } else {
                let s = p - k * GLYPH_WIDTH;
                s >= bar && s < bar + BAR_WIDTH
            };
            let lit = lit ^ rng.random_bool(FLIP_PROB);
            let jitter: f64 = rng.random_range(0.0..=0.1);
            out.push(if lit { 1.0 - jitter } else { jitter });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_labeled() {
        for kind in SynthKind::ALL {
            let a = synth_mixture(kind, 4, 200, 5).unwrap();
            let b = synth_mixture(kind, 4, 200, 5).unwrap();
            assert_eq!(a, b);
            let c = synth_mixture(kind, 4, 200, 6).unwrap();
            assert_ne!(a.features(), c.features());
            let l = a.labels().unwrap();
            for class in 0..4 {
                assert_eq!(l.iter().filter(|&&x| x == class).count(), 50);
            }
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(synth_mixture(SynthKind::TwoRings, 4, 39, 0).is_err());
        assert!("moons".parse::<SynthKind>().is_err());
        assert_eq!("two-rings".parse::<SynthKind>().unwrap(), SynthKind::TwoRings);
    }

    #[test]
    fn pixel_mass_sits_at_the_peaks() {
        let d = synth_mixture(SynthKind::BernoulliPixels, 2, 500, 1).unwrap();
        let v = d.features().data();
        let peaks = v.iter().filter(|&&x| x <= 0.1 || x >= 0.9).count();
        assert!(peaks as f64 >= 0.9 * v.len() as f64);
        assert_eq!(d.dim(), 2 * GLYPH_WIDTH + STRIP_WIDTH);
    }

    #[test]
    fn rings_have_distinct_radii() {
        let d = synth_mixture(SynthKind::TwoRings, 2, 400, 2).unwrap();
        let l = d.labels().unwrap();
        for i in 0..d.len() {
            let r = d.features().row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if l[i] == 0 {
                assert!(r < 0.6, "inner ring point at radius {r}");
            } else {
                assert!(r > 0.6, "outer ring point at radius {r}");
            }
        }
    }
}
