//! Minimal dense tensors with define-by-run reverse-mode differentiation,
//! plus the layers and optimizer needed for recurrent text VAEs.
//!
//! All arithmetic is `f64`. A [`Tape`] is built per forward pass; parameters
//! live in a [`ParamStore`] and are bound to the tape on first use.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use error::{Error, Result};
pub use gradcheck::{grad_check, grad_check_params, relative_error, ParamCheck};
pub use layers::{softmax_cross_entropy, CellKind, CellState, Embedding, Linear, RecurrentCell};
pub use params::{ParamId, ParamStore};
pub use tape::{sigmoid, Elementwise, Tape, Var};
pub use tensor::Tensor;
