use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `N × K` row-stochastic matrix of cluster posteriors.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftAssignment {
    probs: Tensor,
}

impl SoftAssignment {
    /// Allowed deviation of a row sum from one.
    pub const ROW_TOLERANCE: f64 = 1e-9;

    pub fn new(probs: Tensor) -> Result<Self> {
        let (n, k) = probs
            .dims2()
            .ok_or_else(|| Error::InvalidAssignment(format!("expected N x K, got {:?}", probs.shape())))?;
        for i in 0..n {
            let row = probs.row(i);
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidAssignment(format!("row {i} has entry {v} outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > Self::ROW_TOLERANCE {
                return Err(Error::InvalidAssignment(format!("row {i} sums to {s}")));
            }
        }
        let _ = k;
        Ok(Self { probs })
    }

    pub fn uniform(n: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("K must be positive"));
        }
        Self::new(Tensor::full([n, k], 1.0 / k as f64)?)
    }

    pub fn one_hot(labels: &[usize], k: usize) -> Result<Self> {
        Self::new(crate::models::one_hot(labels, k)?)
    }

    pub fn rows(&self) -> usize {
        self.probs.rows()
    }

    pub fn classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.probs.row(i)
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.probs
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        self.probs.select_rows(indices)
    }

    pub fn hard_labels(&self) -> Vec<usize> {
        (0..self.rows()).map(|i| argmax(self.row(i))).collect()
    }
}

/// Mixing weights `φ` on the K-simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct MixturePrior {
    probs: Vec<f64>,
}

impl MixturePrior {
    pub const SUM_TOLERANCE: f64 = 1e-12;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("prior needs at least one class"));
        }
        if let Some(v) = probs.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("prior entry {v} is not a probability")));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::invalid(format!("prior sums to {s}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("K must be positive"));
        }
        Ok(Self {
            probs: vec![1.0 / k as f64; k],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    /// Draws `n` class indices with probabilities `φ`. Classes with zero
    /// weight are never drawn.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        let last = self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, &p) in self.probs.iter().enumerate() {
                    acc += p;
                    if u < acc && p > 0.0 {
                        return i;
                    }
                }
                last
            })
            .collect()
    }
}

/// Closed-form maximizer of the prior term of the Q function: the soft
/// cluster counts `N_i = Σ_n w_{n,i}` normalized by their total (which is N
/// for exactly stochastic rows).
pub fn update_prior(w: &SoftAssignment) -> Result<MixturePrior> {
    let (n, k) = (w.rows(), w.classes());
    if n == 0 {
        return Err(Error::invalid("cannot update the prior from zero samples"));
    }
    let mut counts = vec![0.0; k];
    for i in 0..n {
        for (c, v) in counts.iter_mut().zip(w.row(i)) {
            *c += v;
        }
    }
    let total: f64 = counts.iter().sum();
    MixturePrior::new(counts.iter().map(|c| c / total).collect())
}
