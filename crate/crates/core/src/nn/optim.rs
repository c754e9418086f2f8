use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// What the "decay rate" hyperparameter controls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayMode {
    /// Smoothing coefficient of the squared-gradient running average.
    #[default]
    Smoothing,
    /// Per-epoch multiplicative learning-rate decay; the running average then
    /// uses the conventional 0.9.
    LearningRateSchedule,
}

pub const SCHEDULE_MODE_SMOOTHING: f64 = 0.9;

/// RMSprop with one squared-gradient accumulator per parameter tensor.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    accumulators: Vec<Tensor>,
}

impl RmsProp {
    pub fn new(learning_rate: f64, decay: f64, epsilon: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning rate {learning_rate} must be positive")));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::invalid(format!("decay {decay} must lie in (0, 1)")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon {epsilon} must be positive")));
        }
        Ok(Self {
            learning_rate,
            decay,
            epsilon,
            accumulators: Vec::new(),
        })
    }

    /// Builds the optimizer for a decay reading: with `Smoothing` the decay
    /// is the running-average coefficient, otherwise it is left to the caller
    /// to shrink `learning_rate` each epoch.
    pub fn for_mode(learning_rate: f64, decay: f64, epsilon: f64, mode: DecayMode) -> Result<Self> {
        match mode {
            DecayMode::Smoothing => Self::new(learning_rate, decay, epsilon),
            DecayMode::LearningRateSchedule => Self::new(learning_rate, SCHEDULE_MODE_SMOOTHING, epsilon),
        }
    }

    pub fn accumulators(&self) -> &[Tensor] {
        &self.accumulators
    }

    /// `acc ← decay·acc + (1−decay)·g²`, then `p ← p − lr·g/√(acc+ε)`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.accumulators.is_empty() {
            self.accumulators = params.iter().map(|p| p.zeros_like()).collect();
        }
        if self.accumulators.len() != params.len() {
            return Err(Error::invalid("parameter list changed between steps"));
        }
        for ((p, g), acc) in params.iter().zip(grads).zip(&self.accumulators) {
            if p.shape() != g.shape() || p.shape() != acc.shape() {
                return Err(Error::ShapeMismatch {
                    op: "rmsprop",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        let (lr, decay, eps) = (self.learning_rate, self.decay, self.epsilon);
        for ((p, g), acc) in params.iter_mut().zip(grads).zip(&mut self.accumulators) {
            for ((pv, &gv), av) in p.data_mut().iter_mut().zip(g.data()).zip(acc.data_mut()) {
                *av = decay * *av + (1.0 - decay) * gv * gv;
                *pv -= lr * gv / (*av + eps).sqrt();
            }
        }
        Ok(())
    }
}

/// Projects every value into `[-c, c]`.
pub fn clip_weights(params: &mut [&mut Tensor], c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::invalid(format!("clip constant {c} must be positive")));
    }
    for p in params.iter_mut() {
        for v in p.data_mut() {
            *v = v.clamp(-c, c);
        }
    }
    Ok(())
}
