#![allow(dead_code)]

use gemmforge::exec::TensorBuffer;
use gemmforge::ir::{ElementKind, Function, MemRefType, ScalarKind, TileParams};
use gemmforge::schedule::{build_matmul, expand_matmul};
use gemmforge::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn naive<T: Scalar>(m: i64, n: i64, k: i64) -> Function {
    expand_matmul(&build_matmul("mm", m, n, k, T::KIND, TileParams::new(4, 4, 2, 2, 1))).unwrap()
}

pub fn scalar_ty(kind: ScalarKind, shape: &[i64]) -> MemRefType {
    MemRefType::new(shape.to_vec(), ElementKind::Scalar(kind))
}

/// Random buffers for `A: m x k`, `B: k x n`, `C: m x n`.
pub fn gemm_args<T: Scalar>(m: i64, n: i64, k: i64, seed: u64) -> Vec<TensorBuffer<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [[m, k], [k, n], [m, n]]
        .iter()
        .map(|s| {
            TensorBuffer::from_fn(scalar_ty(T::KIND, s), |_| T::from_f64(rng.gen_range(-1.0..1.0))).unwrap()
        })
        .collect()
}

/// Small integers, so that every partial sum is exact.
pub fn integer_args<T: Scalar>(m: i64, n: i64, k: i64, seed: u64) -> Vec<TensorBuffer<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [[m, k], [k, n], [m, n]]
        .iter()
        .map(|s| TensorBuffer::from_fn(scalar_ty(T::KIND, s), |_| T::from_f64(rng.gen_range(-8..=8) as f64)).unwrap())
        .collect()
}

/// Independent `C += A * B` on row-major slices, accumulating over k in order
/// with fused multiply-adds.
pub fn oracle_gemm<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = c[i * n + j];
            for p in 0..k {
                acc = a[i * k + p].mul_add(b[p * n + j], acc);
            }
            c[i * n + j] = acc;
        }
    }
}

/// Iteration points `(i, j, k)` of a GEMM nest in execution order, recovered
/// from the `A[i, k]` and `B[k, j]` loads.
pub fn gemm_trace(f: &Function) -> Vec<[i64; 3]> {
    use gemmforge::exec::{Interpreter, Observer};
    use gemmforge::ir::ValueId;

    struct Trace {
        a: ValueId,
        b: ValueId,
        pending: Option<(i64, i64)>,
        points: Vec<[i64; 3]>,
    }
    impl Observer<f64> for Trace {
        fn on_load(&mut self, memref: ValueId, index: &[i64]) {
            if memref == self.a {
                self.pending = Some((index[0], index[1]));
            } else if memref == self.b {
                let (i, k) = self.pending.take().expect("A is loaded before B");
                assert_eq!(k, index[0]);
                self.points.push([i, index[1], k]);
            }
        }
    }
    let shape = |v: ValueId| f.memref_ty(v).unwrap().shape.clone();
    let (m, k) = (shape(f.args[0])[0], shape(f.args[0])[1]);
    let n = shape(f.args[1])[1];
    let mut bufs = gemm_args::<f64>(m, n, k, 0);
    let mut t = Trace { a: f.args[0], b: f.args[1], pending: None, points: Vec::new() };
    Interpreter::new().run_observed(f, &mut bufs, &mut t).unwrap();
    t.points
}

/// Every point of the `m x n x k` domain sorted by the timestamp
/// `(p[d] floordiv t)` over the schedule entries.
pub fn expected_order(extents: [i64; 3], entries: &[(usize, i64)]) -> Vec<[i64; 3]> {
    let mut pts = Vec::new();
    for i in 0..extents[0] {
        for j in 0..extents[1] {
            for k in 0..extents[2] {
                pts.push([i, j, k]);
            }
        }
    }
    pts.sort_by_key(|p| entries.iter().map(|&(d, t)| p[d] / t).collect::<Vec<_>>());
    pts
}
