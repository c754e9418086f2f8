//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Build a [`Graph`] per minibatch, register inputs with [`Graph::param`] or
//! [`Graph::constant`], compose operations, and call [`Graph::backward`] on a
//! scalar loss:
//!
//! ```
//! use ganem::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x)?;
//! let grads = g.backward(y)?;
//! assert_eq!(grads.wrt(x).item(), Some(6.0));
//! # Ok::<(), ganem::Error>(())
//! ```

mod check;
mod graph;
mod init;
mod tensor;

pub use check::{check_gradients, GradCheck, FD_STEP};
pub use graph::{Gradients, Graph, Var};
pub use init::{init_params, init_with, InitScheme};
pub use tensor::Tensor;
