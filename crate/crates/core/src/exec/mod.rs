//! Execution: buffers, the reference interpreter, the native backend,
//! microkernels, result comparison and timing.

pub mod bench;
pub mod buffer;
pub mod compare;
pub mod interp;
pub mod mapping;
pub mod microkernel;
pub mod native;

use thiserror::Error;

pub use bench::{benchmark, BenchResult};
pub use buffer::{AlignedVec, TensorBuffer};
pub use compare::{compare, Comparison};
pub use interp::{interpret, Interpreter, NoObserver, Observer};
pub use mapping::map_to_microkernel;
pub use microkernel::{tiled_lhs_layout, KernelFn, KernelRegistry, Microkernel};
pub use native::{emit_native, NativeKernel, NativeOptions};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("out-of-bounds access at {location}: {memref}{index:?} outside shape {shape:?}")]
    OutOfBounds { location: String, memref: String, index: Vec<i64>, shape: Vec<i64> },
    #[error("access to freed buffer {memref} at {location}")]
    UseAfterFree { location: String, memref: String },
    #[error("type error: {0}")]
    Type(String),
    #[error("signature mismatch: {0}")]
    Signature(String),
    #[error("kernel error: {0}")]
    Kernel(String),
    #[error("unsupported by the native backend: {0}")]
    Unsupported(String),
    #[error("native toolchain failure: {0}")]
    Toolchain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("layout mismatch: {0}")]
    Layout(String),
}
