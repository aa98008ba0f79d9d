//! Protecting quantized DNN weights with redundant high-order bits.
//!
//! The pipeline: quantize weights ([`quantizer`]), pack each value together
//! with copies of its top bits into a memory word ([`wordpack`]), flip bits in
//! those words and measure accuracy ([`faultsim`]), and sweep the
//! configuration space against user thresholds ([`explorer`]).

pub mod error;
pub mod exec;
pub mod explorer;
pub mod faultsim;
pub mod io;
pub mod quantizer;
pub mod tensor;
pub mod wordpack;

pub use error::{Error, Result};
pub use exec::Execution;
pub use quantizer::{quantize_model, quantized_accuracy, QuantSpec, QuantizedModel};
pub use tensor::{evaluate, forward, Dataset, Model, Tensor};
pub use wordpack::{ProtectedWord, ProtectionPolicy, WordLayout};
