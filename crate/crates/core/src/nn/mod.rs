//! Minimal dense-tensor and reverse-mode differentiation core. Static
//! per-architecture graphs only: layers cache what their backward pass
//! needs, and networks compose them by hand.

pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use optim::{Adam, Net, Sgd};
pub use tensor::{Element, Tensor};
