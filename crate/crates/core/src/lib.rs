//! Cycle-level model of a row-stationary convolution accelerator: workload
//! descriptions, a reference evaluator, stream tiling, a clocked engine,
//! closed-form performance counts and an array-shape sweep.

pub mod dse;
pub mod engine;
pub mod error;
pub mod oracle;
pub mod perfmodel;
pub mod tiling;
pub mod verify;
pub mod workload;

pub use engine::{simulate_layer, simulate_layer_with, simulate_network, EngineConfig, SimOptions, SimReport};
pub use error::{Error, Result};
pub use oracle::{conv_reference, fc_reference, ArithmeticModel, Matrix, Tensor4};
pub use workload::{builtin_network, LayerDescriptor, LayerKind, Network};
