//! Minimal neural-network substrate: tensors, a fixed set of layers with
//! hand-written backward passes, losses, Adam, and a binary checkpoint format.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod layer;
pub mod loss;
mod network;
mod optim;
mod tensor;

pub use error::{NnError, Result};
pub use layer::{Conv2d, ConvGeometry, ConvTranspose2d, Dense, Layer};
pub use network::{Network, NetworkBuilder};
pub use optim::AdamState;
pub use tensor::Tensor;
