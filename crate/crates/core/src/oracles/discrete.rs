//! Exact checks on finite supports: the per-cluster discriminator game, its
//! optimum, the divergence identity at that optimum, and the Q function.

use crate::emcore::{update_prior, MixturePrior, SoftAssignment};
use crate::error::{Error, Result};

/// `0 · log(anything) := 0`.
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub const TOLERANCE: f64 = 1e-12;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty support"));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("probabilities must be finite and nonnegative"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::invalid(format!("probabilities sum to {s}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative masses.
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        let s: f64 = masses.iter().sum();
        if !(s > 0.0) {
            return Err(Error::invalid("masses must have positive total"));
        }
        let mut probs: Vec<f64> = masses.iter().map(|m| m / s).collect();
        let drift: f64 = 1.0 - probs.iter().sum::<f64>();
        let last = probs.len() - 1;
        probs[last] = (probs[last] + drift).max(0.0);
        Self::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> usize {
        self.probs.len()
    }
}

/// Real distribution `P_r`, per-point cluster weight `w_i(x)`, and the
/// cluster's fake distribution `P_fi`, all over one finite support.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteGameInstance {
    pub real: DiscreteDistribution,
    pub weights: Vec<f64>,
    pub fake: DiscreteDistribution,
}

impl DiscreteGameInstance {
    pub fn new(real: DiscreteDistribution, weights: Vec<f64>, fake: DiscreteDistribution) -> Result<Self> {
        if real.support() != fake.support() || weights.len() != real.support() {
            return Err(Error::invalid("real, fake and weights must share one support"));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::invalid("weights must lie in [0, 1]"));
        }
        Ok(Self { real, weights, fake })
    }

    /// Unnormalized reweighted real measure `w_i(x) · P_r(x)`.
    pub fn weighted_real(&self) -> Vec<f64> {
        self.real.probs().iter().zip(&self.weights).map(|(p, w)| p * w).collect()
    }

    /// `w_i · P_r / Z`, the normalized per-cluster real distribution.
    pub fn normalized_real(&self) -> Result<DiscreteDistribution> {
        DiscreteDistribution::from_masses(&self.weighted_real())
    }

    /// `Σ_x [ w_i(x) P_r(x) log D(x) + P_fi(x) log(1 − D(x)) ]`, the cluster's
    /// objective to maximize. Points with `D = None` are skipped.
    pub fn objective(&self, d: &[Option<f64>]) -> f64 {
        self.weighted_real()
            .iter()
            .zip(self.fake.probs())
            .zip(d)
            .filter_map(|((&a, &b), v)| v.map(|v| xlogy(a, v) + xlogy(b, 1.0 - v)))
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimalDiscriminator {
    /// `D*(x)`, or `None` where both measures vanish.
    pub values: Vec<Option<f64>>,
    /// Support points excluded because both measures are zero there.
    pub excluded: Vec<usize>,
}

/// `D*(x) = a(x) / (a(x) + P_fi(x))` with the unnormalized `a = w_i · P_r`.
pub fn optimal_discriminator(inst: &DiscreteGameInstance) -> OptimalDiscriminator {
    let mut excluded = Vec::new();
    let values = inst
        .weighted_real()
        .iter()
        .zip(inst.fake.probs())
        .enumerate()
        .map(|(x, (&a, &b))| {
            if a + b == 0.0 {
                excluded.push(x);
                None
            } else {
                Some(a / (a + b))
            }
        })
        .collect();
    OptimalDiscriminator { values, excluded }
}

/// Maximizes `a log D + b log(1 − D)` over `D ∈ [0, 1]` by golden-section
/// search, independent of the closed form.
pub fn maximize_pointwise(a: f64, b: f64) -> f64 {
    let f = |d: f64| xlogy(a, d) + xlogy(b, 1.0 - d);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-13 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        }
    }
    (lo + hi) / 2.0
}

/// Numerical maximizer of [`DiscreteGameInstance::objective`].
pub fn brute_force_discriminator(inst: &DiscreteGameInstance) -> Vec<Option<f64>> {
    inst.weighted_real()
        .iter()
        .zip(inst.fake.probs())
        .map(|(&a, &b)| (a + b > 0.0).then(|| maximize_pointwise(a, b)))
        .collect()
}

/// `KL(p ‖ q) = Σ p log(p / q)` for nonnegative measures, `0 log 0 := 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| if a == 0.0 { 0.0 } else { a * (a / b).ln() }).sum()
}

/// `½ KL(p ‖ m) + ½ KL(q ‖ m)` with `m = (p + q)/2`. Also defined for
/// unnormalized measures, which is the form the identity below needs.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) / 2.0).collect();
    0.5 * kl_divergence(p, &m) + 0.5 * kl_divergence(q, &m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GameIdentity {
    /// Objective at `D*`, summed directly.
    pub value: f64,
    /// `−(w + 1) log 2 + 2 JSD(w P_r ‖ P_fi)`.
    pub closed_form: f64,
    pub jsd: f64,
    pub residual: f64,
}

/// Compares the objective at the optimal discriminator with the divergence
/// closed form. Requires the cluster weight to be the same at every point.
pub fn game_value_identity(inst: &DiscreteGameInstance) -> Result<GameIdentity> {
    let w = inst.weights[0];
    if inst.weights.iter().any(|&v| v != w) {
        return Err(Error::invalid("the identity needs a constant cluster weight"));
    }
    let d = optimal_discriminator(inst);
    let value = inst.objective(&d.values);
    let jsd = jensen_shannon(&inst.weighted_real(), inst.fake.probs());
    let closed_form = -(w + 1.0) * 2f64.ln() + 2.0 * jsd;
    Ok(GameIdentity {
        value,
        closed_form,
        jsd,
        residual: value - closed_form,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QValue {
    pub q: f64,
    pub q1: f64,
    pub q2: f64,
}

/// `Q = Q1 + Q2` averaged over the `N` rows of `w`:
/// `Q1 = mean_n Σ_i w_ni log P(x_n | c = i)` and `Q2 = mean_n Σ_i w_ni log φ_i`.
/// `likelihood` is `N × K`, row `n` holding `P(x_n | c = i)`.
/// A zero likelihood or prior under a positive weight is an error naming the cell.
pub fn exact_q(w: &SoftAssignment, phi: &MixturePrior, likelihood: &[Vec<f64>]) -> Result<QValue> {
    let (n, k) = (w.rows(), w.classes());
    if likelihood.len() != n || likelihood.iter().any(|r| r.len() != k) || phi.classes() != k {
        return Err(Error::invalid("likelihood table must be N x K and match w and phi"));
    }
    let (mut q1, mut q2) = (0.0, 0.0);
    for (i, row) in likelihood.iter().enumerate() {
        for c in 0..k {
            let wv = w.row(i)[c];
            if wv == 0.0 {
                continue;
            }
            if row[c] <= 0.0 {
                return Err(Error::Domain {
                    op: "exact_q: Q1 is -inf",
                    value: row[c],
                    domain: "(0, 1] wherever the weight is positive",
                });
            }
            if phi.probs()[c] <= 0.0 {
                return Err(Error::Domain {
                    op: "exact_q: Q2 is -inf",
                    value: phi.probs()[c],
                    domain: "(0, 1] wherever the weight is positive",
                });
            }
            q1 += wv * row[c].ln();
            q2 += wv * phi.probs()[c].ln();
        }
    }
    let (q1, q2) = (q1 / n as f64, q2 / n as f64);
    Ok(QValue { q: q1 + q2, q1, q2 })
}

/// Only the prior part of [`exact_q`].
pub fn q2_value(w: &SoftAssignment, phi: &[f64]) -> f64 {
    let n = w.rows();
    (0..n)
        .map(|i| w.row(i).iter().zip(phi).map(|(&a, &p)| xlogy(a, p)).sum::<f64>())
        .sum::<f64>()
        / n as f64
}

/// EM on a fully tabulated mixture over a finite support: the "generator"
/// of class `i` is the table `P(x | c = i)`, fit by weighted counting.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteEm {
    /// Support index of every sample.
    pub samples: Vec<usize>,
    pub tables: Vec<DiscreteDistribution>,
    pub prior: MixturePrior,
}

impl DiscreteEm {
    pub fn likelihood(&self) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .map(|&x| self.tables.iter().map(|t| t.probs()[x]).collect())
            .collect()
    }

    /// Exact posterior by Bayes rule.
    pub fn e_step(&self) -> Result<SoftAssignment> {
        let rows: Vec<f64> = self
            .likelihood()
            .iter()
            .flat_map(|l| {
                let joint: Vec<f64> = l.iter().zip(self.prior.probs()).map(|(a, b)| a * b).collect();
                let s: f64 = joint.iter().sum();
                joint.into_iter().map(move |j| j / s)
            })
            .collect();
        SoftAssignment::new(crate::autodiff::Tensor::new([self.samples.len(), self.tables.len()], rows)?)
    }

    /// Closed-form maximizer of Q for fixed `w`; a small smoothing mass keeps
    /// every table entry positive.
    pub fn m_step(&mut self, w: &SoftAssignment, smoothing: f64) -> Result<()> {
        self.prior = update_prior(w)?;
        let s = self.tables[0].support();
        for (c, table) in self.tables.iter_mut().enumerate() {
            let mut masses = vec![smoothing; s];
            for (n, &x) in self.samples.iter().enumerate() {
                masses[x] += w.row(n)[c];
            }
            *table = DiscreteDistribution::from_masses(&masses)?;
        }
        Ok(())
    }

    pub fn q(&self, w: &SoftAssignment) -> Result<QValue> {
        exact_q(w, &self.prior, &self.likelihood())
    }

    /// Mean log marginal likelihood of the samples.
    pub fn log_likelihood(&self) -> f64 {
        let l = self.likelihood();
        l.iter()
            .map(|row| row.iter().zip(self.prior.probs()).map(|(a, b)| a * b).sum::<f64>().ln())
            .sum::<f64>()
            / self.samples.len() as f64
    }
}
