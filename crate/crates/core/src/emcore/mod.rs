//! The EM loop: losses, the closed-form prior update, the M-step that
//! trains the conditional GAN, the E-step that trains the E-net, and the
//! driver that alternates them.
//!
//! ```
//! use ganem::emcore::{update_prior, SoftAssignment};
//!
//! let w = SoftAssignment::one_hot(&[0, 0, 1, 0], 2)?;
//! assert_eq!(update_prior(&w)?.probs(), &[0.75, 0.25]);
//! # Ok::<(), ganem::Error>(())
//! ```

mod assignment;
mod config;
pub mod loss;
mod trace;
mod train;

pub use assignment::{argmax, update_prior, MixturePrior, SoftAssignment};
pub use config::{EmConfig, REFERENCE_E_ITERATIONS, REFERENCE_SAMPLES};
pub use loss::{
    discriminator_loss, discriminator_loss_value, enet_loss, enet_loss_value, generator_loss, generator_loss_value,
    probabilities, realfake_loss, LOGIT_CAP, PROB_FLOOR,
};
pub use trace::{IterationMetrics, MetricsTrace};
pub use train::{run_gan_em, EStepStats, GanEm, LabeledSubset, MStepStats, RunOutput, SuperviseStats, ThetaState};
