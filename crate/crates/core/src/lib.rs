//! GAN-EM: clustering by expectation maximization where the M-step trains a
//! class-conditional GAN under soft labels and the E-step trains an inverse
//! network that produces those labels.
//!
//! Module map:
//!
//! * [`autodiff`]: tensors and reverse-mode differentiation.
//! * [`nn`]: dense layers, RMSprop, weight clipping, checkpoints.
//! * [`models`]: generator, discriminator and E-net.
//! * [`emcore`]: losses, prior update, M-step, E-step and the EM driver.
//! * [`oracles`]: exact discrete checks of the theory, GMM and K-means baselines.
//! * [`data`]: synthetic mixtures, IDX loading, labeled subsets.
//! * [`eval`]: clustering error and embedding export.

pub mod autodiff;
pub mod data;
pub mod emcore;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod oracles;
pub mod rng;

pub use error::{Error, Result};

// The guide's listings run as doctests so they cannot drift from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/em-loop.md")]
    mod em_loop {}
    #[doc = include_str!("../../../book/src/theory.md")]
    mod theory {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
}
