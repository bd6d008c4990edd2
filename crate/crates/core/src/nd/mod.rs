//! Dense tensors, a reverse-mode tape and the layers built on it.
//!
//! Values are plain [`Tensor`]s. Differentiable computation happens on
//! [`Var`] handles recorded on a [`Tape`]; calling [`Var::backward`] on a
//! scalar returns gradients for every leaf.
//!
//! ```
//! use icessm::nd::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::new(vec![2], vec![3.0, -1.0]).unwrap());
//! let loss = x.square().sum_all();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.get(&x).unwrap().data(), &[6.0, -2.0]);
//! ```

mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod ops;
mod params;
mod tape;
mod tensor;

pub use layers::Padding;
pub use ops::concat;
#[cfg(test)]
pub(crate) use ops::softplus;
pub use params::{Bound, Init, ParamStore, Scope};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
