//! An affine loop-nest IR with a GEMM transformation pipeline: tiling
//! schedules, packing, unroll-and-jam, scalar replacement and outer-loop
//! vectorization, executed by a reference interpreter or compiled natively.

pub mod exec;
pub mod ir;
pub mod layout;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod schedule;
pub mod vect;
pub mod xform;

pub use scalar::Scalar;

pub type BufferF32 = exec::TensorBuffer<f32>;
pub type BufferF64 = exec::TensorBuffer<f64>;
pub type RegistryF32 = exec::KernelRegistry<f32>;
pub type RegistryF64 = exec::KernelRegistry<f64>;
pub type NativeKernelF32 = exec::NativeKernel<f32>;
pub type NativeKernelF64 = exec::NativeKernel<f64>;
