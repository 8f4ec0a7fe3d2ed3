use crate::scalar::Scalar;

use super::buffer::TensorBuffer;
use super::ExecError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Comparison {
    pub max_rel_err: f64,
    pub pass: bool,
}

/// `max |a - b| / max(|b|, eps)` over logical elements; passes iff the error
/// is at most `rel_tol`.
pub fn compare<T: Scalar>(a: &TensorBuffer<T>, b: &TensorBuffer<T>, rel_tol: f64) -> Result<Comparison, ExecError> {
    if a.ty().shape != b.ty().shape || a.ty().element != b.ty().element {
        return Err(ExecError::Shape(format!("{} vs {}", a.ty(), b.ty())));
    }
    Ok(compare_slices(&a.to_logical(), &b.to_logical(), rel_tol))
}

pub fn compare_slices<T: Scalar>(a: &[T], b: &[T], rel_tol: f64) -> Comparison {
    let eps = f64::MIN_POSITIVE;
    let mut max_diff = 0.0f64;
    let mut max_ref = 0.0f64;
    let mut nan = false;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (Scalar::to_f64(*x), Scalar::to_f64(*y));
        nan |= x.is_nan() || y.is_nan();
        max_diff = max_diff.max((x - y).abs());
        max_ref = max_ref.max(y.abs());
    }
    let max_rel_err = if nan { f64::INFINITY } else { max_diff / max_ref.max(eps) };
    Comparison { max_rel_err, pass: max_rel_err <= rel_tol }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_passes_and_perturbed_fails() {
        let a = vec![1.0f64, 2.0, 3.0];
        let c = compare_slices(&a, &a, 1e-10);
        assert_eq!(c, Comparison { max_rel_err: 0.0, pass: true });
        let mut b = a.clone();
        b[1] *= 1.0 + 1e-6;
        assert!(!compare_slices(&b, &a, 1e-10).pass);
    }

    #[test]
    fn nan_never_passes() {
        assert!(!compare_slices(&[f64::NAN], &[1.0], 1.0).pass);
    }
}
