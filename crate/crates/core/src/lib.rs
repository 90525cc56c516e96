//! Memory-instrumented transducer (RNN-T) training core.
//!
//! The crate covers the part of transducer training that dominates memory:
//! the joint network, the output layer and the transducer loss with its
//! analytic gradients. Two execution engines drive them over a batch:
//!
//! * a batched reference that materializes the full `[B, T, U+1, ·]` tensors,
//! * a sample-wise engine that processes one sample at a time, optionally
//!   cropping padding and running several samples concurrently under a
//!   memory budget.
//!
//! Every tensor payload is registered with a [`MemoryTracker`], so peak
//! memory of each engine can be measured exactly.

pub mod bench;
pub mod compute;
pub mod engine;
mod error;
pub mod loss;
pub mod oracle;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Element, MemoryTracker, Precision, Tensor};
