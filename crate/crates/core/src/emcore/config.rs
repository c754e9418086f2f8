use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::DecayMode;

/// Hyperparameters of one EM run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    /// Number of clusters K.
    pub classes: usize,
    /// EM iterations n.
    pub iterations: usize,
    /// Passes over the real data per M-step (p).
    pub m_epochs: usize,
    /// E-net updates per E-step (q). `None` applies [`EmConfig::e_steps_for`].
    pub e_iterations: Option<usize>,
    pub m_batch: usize,
    pub e_batch: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lr_enet: f64,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    pub decay_mode: DecayMode,
    /// Labeled-error threshold that ends supervised fine-tuning.
    pub epsilon: f64,
    /// Generator weight clip constant c.
    pub clip: f64,
    pub clip_discriminator: bool,
    /// Weight of the real/fake unit's loss in the discriminator objective; 0 disables it.
    pub realfake_weight: f64,
    /// Keep E-net parameters across iterations instead of reinitializing.
    pub enet_warm_start: bool,
    /// Hard cap on supervised fine-tuning steps per E-step.
    pub supervise_max_steps: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            classes: 2,
            iterations: 10,
            m_epochs: 5,
            e_iterations: None,
            m_batch: 64,
            e_batch: 256,
            lr_generator: 0.0002,
            lr_discriminator: 0.0002,
            lr_enet: 0.0002,
            rms_decay: 0.98,
            rms_epsilon: 1e-8,
            decay_mode: DecayMode::Smoothing,
            epsilon: 0.05,
            clip: 0.01,
            clip_discriminator: false,
            realfake_weight: 1.0,
            enet_warm_start: true,
            supervise_max_steps: 2000,
            seed: 0,
        }
    }
}

/// Reference E-step budget: updates at batch 256 for a 50 000-sample set.
pub const REFERENCE_E_ITERATIONS: usize = 1000;
pub const REFERENCE_SAMPLES: usize = 50_000;

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("classes", self.classes),
            ("m_batch", self.m_batch),
            ("e_batch", self.e_batch),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.e_iterations == Some(0) {
            return Err(Error::invalid("e_iterations must be positive"));
        }
        for (name, v) in [
            ("lr_generator", self.lr_generator),
            ("lr_discriminator", self.lr_discriminator),
            ("lr_enet", self.lr_enet),
            ("rms_epsilon", self.rms_epsilon),
            ("clip", self.clip),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.rms_decay > 0.0 && self.rms_decay < 1.0) {
            return Err(Error::invalid(format!("rms_decay = {} must lie in (0, 1)", self.rms_decay)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!("epsilon = {} must lie in (0, 1)", self.epsilon)));
        }
        if !(self.realfake_weight >= 0.0 && self.realfake_weight.is_finite()) {
            return Err(Error::invalid("realfake_weight must be nonnegative"));
        }
        Ok(())
    }

    /// E-net updates per E-step for `n` real samples: the reference budget
    /// scaled by `n / 50 000`, but never less than one full pass over `n`.
    pub fn e_steps_for(&self, n: usize) -> usize {
        self.e_iterations.unwrap_or_else(|| {
            let pass = n.div_ceil(self.e_batch);
            let scaled = (n * REFERENCE_E_ITERATIONS).div_ceil(REFERENCE_SAMPLES);
            pass.max(scaled).max(1)
        })
    }
}
