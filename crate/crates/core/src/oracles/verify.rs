use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::discrete::{
    brute_force_discriminator, game_value_identity, optimal_discriminator, q2_value, DiscreteDistribution,
    DiscreteGameInstance,
};
use crate::autodiff::Tensor;
use crate::emcore::{update_prior, SoftAssignment};
use crate::error::Result;
use crate::rng::{stream, Stream};

/// Flat-Dirichlet draw on the `k`-simplex; with `sparsity > 0` some entries
/// are zeroed first (at least one survives).
pub fn random_simplex(k: usize, sparsity: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = rng.random_range(0..k);
    let mut v: Vec<f64> = (0..k)
        .map(|i| {
            if i != keep && rng.random_bool(sparsity) {
                0.0
            } else {
                -(1.0 - rng.random::<f64>()).ln()
            }
        })
        .collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    let drift = 1.0 - v.iter().sum::<f64>();
    v[keep] += drift;
    v
}

/// Game instance on a support of `2..=max_support` points, with zero-mass
/// points mixed in. `constant_weight` draws one weight for every point.
pub fn random_instance(max_support: usize, constant_weight: bool, rng: &mut ChaCha8Rng) -> Result<DiscreteGameInstance> {
    let s = rng.random_range(2..=max_support);
    let real = DiscreteDistribution::new(random_simplex(s, 0.15, rng))?;
    let fake = DiscreteDistribution::new(random_simplex(s, 0.15, rng))?;
    let weights = if constant_weight {
        vec![rng.random_range(0.05..=1.0); s]
    } else {
        (0..s).map(|_| rng.random::<f64>()).collect()
    };
    DiscreteGameInstance::new(real, weights, fake)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoryReport {
    pub trials: usize,
    /// Largest `|D_brute − D*|` over every kept support point.
    pub max_argmax_error: f64,
    /// Largest objective gap `L(D*) − L(D_brute)`; negative means D* was worse.
    pub min_objective_margin: f64,
    /// Largest `|identity residual|` over constant-weight instances.
    pub max_identity_residual: f64,
    pub prior_matrices: usize,
    pub prior_probes: usize,
    /// Probes whose `Q2` beat the closed-form prior by more than `1e-12`.
    pub prior_dominance_failures: usize,
    pub max_prior_sum_error: f64,
}

impl TheoryReport {
    pub const ARGMAX_TOLERANCE: f64 = 1e-6;
    pub const IDENTITY_TOLERANCE: f64 = 1e-9;
    pub const PRIOR_SUM_TOLERANCE: f64 = 1e-12;

    pub fn argmax_ok(&self) -> bool {
        self.max_argmax_error <= Self::ARGMAX_TOLERANCE && self.min_objective_margin >= -1e-12
    }

    pub fn identity_ok(&self) -> bool {
        self.max_identity_residual <= Self::IDENTITY_TOLERANCE
    }

    pub fn prior_ok(&self) -> bool {
        self.prior_dominance_failures == 0 && self.max_prior_sum_error <= Self::PRIOR_SUM_TOLERANCE
    }

    pub fn passed(&self) -> bool {
        self.argmax_ok() && self.identity_ok() && self.prior_ok()
    }
}

/// Runs the discrete suite: `trials` random games (support ≤ 16) for the
/// optimal discriminator and the divergence identity, and 10 random soft
/// assignments probed by 1000 random priors each for the prior update.
pub fn verify_theory(trials: usize, seed: u64) -> Result<TheoryReport> {
    let mut rng = stream(seed, Stream::Data);
    let mut report = TheoryReport {
        trials,
        max_argmax_error: 0.0,
        min_objective_margin: f64::INFINITY,
        max_identity_residual: 0.0,
        prior_matrices: 10,
        prior_probes: 1000,
        prior_dominance_failures: 0,
        max_prior_sum_error: 0.0,
    };
    for _ in 0..trials {
        let inst = random_instance(16, false, &mut rng)?;
        let exact = optimal_discriminator(&inst);
        let brute = brute_force_discriminator(&inst);
        for (a, b) in exact.values.iter().zip(&brute) {
            if let (Some(a), Some(b)) = (a, b) {
                report.max_argmax_error = report.max_argmax_error.max((a - b).abs());
            }
        }
        let margin = inst.objective(&exact.values) - inst.objective(&brute);
        report.min_objective_margin = report.min_objective_margin.min(margin);

        let constant = random_instance(16, true, &mut rng)?;
        let id = game_value_identity(&constant)?;
        report.max_identity_residual = report.max_identity_residual.max(id.residual.abs());
    }
    for _ in 0..report.prior_matrices {
        let k = rng.random_range(2..=5);
        let n = rng.random_range(5..=40);
        let rows: Vec<f64> = (0..n).flat_map(|_| random_simplex(k, 0.2, &mut rng)).collect();
        let w = SoftAssignment::new(Tensor::new([n, k], rows)?)?;
        let phi = update_prior(&w)?;
        let sum: f64 = phi.probs().iter().sum();
        report.max_prior_sum_error = report.max_prior_sum_error.max((sum - 1.0).abs());
        let best = q2_value(&w, phi.probs());
        for _ in 0..report.prior_probes {
            let probe = random_simplex(k, 0.0, &mut rng);
            if q2_value(&w, &probe) > best + 1e-12 {
                report.prior_dominance_failures += 1;
            }
        }
    }
    if trials == 0 {
        report.min_objective_margin = 0.0;
    }
    Ok(report)
}
