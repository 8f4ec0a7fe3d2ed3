use std::fmt::Debug;

use num_traits::Float;

use crate::ir::ScalarKind;

/// Floating-point element types supported by buffers, the interpreter and
/// the native backend.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    const KIND: ScalarKind;
    /// The matching C type.
    const C_TYPE: &'static str;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const KIND: ScalarKind = ScalarKind::F32;
    const C_TYPE: &'static str = "float";

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const KIND: ScalarKind = ScalarKind::F64;
    const C_TYPE: &'static str = "double";

    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(self) -> f64 {
        self
    }
}
