//! Closed-form checks of the theory on finite supports, and the classical
//! GMM and K-means baselines. Nothing here trains a neural network.

mod discrete;
mod gmm;
mod kmeans;
mod verify;

pub use discrete::{
    brute_force_discriminator, exact_q, game_value_identity, jensen_shannon, kl_divergence, maximize_pointwise,
    optimal_discriminator, q2_value, DiscreteDistribution, DiscreteEm, DiscreteGameInstance, GameIdentity,
    OptimalDiscriminator, QValue,
};
pub use gmm::{gmm_em_fit, Covariance, CovarianceKind, GmmConfig, GmmFit, GmmModel};
pub use kmeans::{kmeans_fit, KmeansConfig, KmeansFit};
pub use verify::{random_instance, random_simplex, verify_theory, TheoryReport};
