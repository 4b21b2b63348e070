//! Dense `f64` tensors and a reverse-mode autodiff tape.
//!
//! Values are plain [`Tensor`]s. A forward pass records operations on a
//! [`Tape`], which hands out [`Var`] handles; model weights live in a
//! [`ParamStore`] and are bound to the tape with [`Tape::param`]. After
//! [`Tape::backward`] the store holds accumulated gradients.
//!
//! ```
//! use vidpose_tensor::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! let w = store.add("w", Tensor::new(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
//! let mut tape = Tape::new();
//! let wv = tape.param(&store, w);
//! let sq = tape.square(wv);
//! let loss = tape.sum(sq);
//! tape.backward(loss, &mut store).unwrap();
//! assert_eq!(store.get(w).grad.data(), &[2.0, 4.0]);
//! ```

mod checkpoint;
mod error;
mod kernels;
mod ops;
mod param;
mod tape;
mod tensor;

pub use checkpoint::{Container, MAGIC, VERSION};
pub use error::{Result, TensorError};
pub use ops::norm::{BatchNormMode, BatchStats, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM, LAYER_NORM_EPS};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
