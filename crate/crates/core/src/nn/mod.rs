//! Dense layers, RMSprop, Lipschitz weight clipping and parameter checkpoints.

mod checkpoint;
mod layer;
mod optim;

pub use checkpoint::{load_params_into, load_tensors, save_params, save_tensors, MAGIC, VERSION};
pub use layer::{bind, Activation, DenseLayer, Mlp, Parameterized};
pub use optim::{clip_weights, DecayMode, RmsProp};
