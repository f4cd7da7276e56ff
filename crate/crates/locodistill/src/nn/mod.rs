//! Neural-network building blocks: a small tape autodiff engine, dense
//! layers, and Adam. Everything is `f64` so analytic gradients can be
//! checked against central finite differences at tight tolerances.

pub mod adam;
pub mod mlp;
pub mod tape;

pub use adam::{clip_grad_norm, Adam};
pub use mlp::{Activation, Linear, Mlp};
pub use tape::{Arr, Tape, Var};
