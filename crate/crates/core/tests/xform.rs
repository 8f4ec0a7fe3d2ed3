mod common;

use common::{integer_args, naive};
use gemmforge::exec::{interpret, Interpreter, Observer, TensorBuffer};
use gemmforge::ir::{parse_function, ElementKind, ForOp, Function, MemRefType, Op, ScalarKind, TileParams, ValueId};
use gemmforge::pipeline::{lower, PipelineConfig, StageFlags};
use gemmforge::schedule::perfect_nest;
use gemmforge::xform::{
    promoted_accumulators, scalar_replace, unroll_full, unroll_jam, XformError, DEFAULT_UNROLL_CAP,
};
use proptest::prelude::*;

fn copy_loop(trip: i64) -> Function {
    parse_function(&format!(
        "func @copy(%0: memref<{trip}xf64>, %1: memref<{trip}xf64>) {{
  affine.for %2 = 0 to {trip} {{
    %3 = affine.load %0[%2] : f64
    affine.store %3, %1[%2] : f64
  }}
  return
}}"
    ))
    .unwrap()
}

struct Stores(ValueId, Vec<i64>);

impl Observer<f64> for Stores {
    fn on_store(&mut self, memref: ValueId, index: &[i64], _: &[f64]) {
        if memref == self.0 {
            self.1.push(index[0]);
        }
    }
}

/// Store indices into the second argument, in execution order.
fn store_trace(f: &Function, trip: i64) -> Vec<i64> {
    let ty = MemRefType::new(vec![trip], ElementKind::Scalar(ScalarKind::F64));
    let mut bufs = vec![
        TensorBuffer::from_fn(ty.clone(), |i| i[0] as f64).unwrap(),
        TensorBuffer::zeros(ty).unwrap(),
    ];
    let mut s = Stores(f.args[1], Vec::new());
    Interpreter::new().run_observed(f, &mut bufs, &mut s).unwrap();
    assert_eq!(bufs[1].as_slice(), bufs[0].as_slice());
    s.1
}

fn loops(f: &Function) -> Vec<&ForOp> {
    let mut out = Vec::new();
    f.walk(|op| {
        if let Op::For(l) = op {
            out.push(l);
        }
    });
    out
}

#[test]
fn divisible_trip_needs_no_cleanup() {
    let f = copy_loop(8);
    let (g, r) = unroll_jam(&f, f.loop_ivs()[0], 4).unwrap();
    assert!(r.cleanup.is_none());
    let main = g.find_loop(r.main).unwrap();
    assert_eq!(main.step, 4);
    assert_eq!(main.body.len(), 8);
    assert_eq!(store_trace(&g, 8), (0..8).collect::<Vec<_>>());
}

#[test]
fn ragged_trips_get_a_cleanup_loop() {
    for (trip, factor) in [(10, 4), (13, 4), (2090, 4), (2088, 5)] {
        let f = copy_loop(trip);
        let (g, r) = unroll_jam(&f, f.loop_ivs()[0], factor).unwrap();
        let cleanup = g.find_loop(r.cleanup.expect("ragged trip")).unwrap();
        assert_eq!(cleanup.const_trip_count(), Some(trip % factor));
        let mut t = store_trace(&g, trip);
        t.sort();
        assert_eq!(t, (0..trip).collect::<Vec<_>>(), "trip {trip} factor {factor}");
    }
}

#[test]
fn jammed_k_loop_preserves_gemm_results_exactly() {
    for k in [10, 13, 8] {
        let f = naive::<f64>(5, 6, k);
        let (levels, _) = perfect_nest(&f, 3).unwrap();
        let (g, _) = unroll_jam(&f, levels[2].0, 4).unwrap();
        let mut x = integer_args::<f64>(5, 6, k, k as u64);
        let mut y = x.clone();
        interpret(&f, &mut x).unwrap();
        interpret(&g, &mut y).unwrap();
        assert_eq!(x[2].as_slice(), y[2].as_slice());
    }
}

#[test]
fn bad_factors_and_unknown_loops() {
    let f = copy_loop(8);
    assert_eq!(unroll_jam(&f, f.loop_ivs()[0], 0).unwrap_err(), XformError::Factor(0));
    assert!(matches!(unroll_jam(&f, ValueId(99), 2), Err(XformError::NoSuchLoop(_))));
    assert!(matches!(unroll_full(&copy_loop(100), ValueId(2), DEFAULT_UNROLL_CAP), Err(XformError::TooLarge { .. })));
}

#[test]
fn full_unroll_of_single_and_four_iterations() {
    let f = copy_loop(1);
    let g = unroll_full(&f, f.loop_ivs()[0], DEFAULT_UNROLL_CAP).unwrap();
    assert!(g.loop_ivs().is_empty());
    assert_eq!(store_trace(&g, 1), [0]);

    let f = copy_loop(4);
    let g = unroll_full(&f, f.loop_ivs()[0], DEFAULT_UNROLL_CAP).unwrap();
    let mut idx = Vec::new();
    g.walk(|op| {
        if let Op::Store { index, .. } = op {
            idx.push(index.constants().unwrap()[0]);
        }
    });
    assert_eq!(idx, [0, 1, 2, 3]);
}

fn fma_count(ops: &[Op]) -> usize {
    let mut n = 0;
    for op in ops {
        op.walk(&mut |o| n += matches!(o, Op::Fma { .. }) as usize);
    }
    n
}

/// The loop with the most fmas directly in its body.
fn kernel_loop(f: &Function) -> &ForOp {
    loops(f).into_iter().max_by_key(|l| l.body.iter().filter(|o| matches!(o, Op::Fma { .. })).count()).unwrap()
}

fn lowered(m: i64, n: i64, k: i64, p: TileParams, flags: StageFlags) -> Function {
    let cfg = PipelineConfig::new(m, n, k, ScalarKind::F64, p, flags);
    lower::<f64>(&cfg, None).unwrap().output().clone()
}

const TILE_UNROLL: StageFlags =
    StageFlags { vect: false, tile: true, copy: false, unroll: true, scalrep: false, microkernel: false };

#[test]
fn register_tile_unrolls_to_mr_times_nr_fmas() {
    let f = lowered(16, 16, 16, TileParams::new(8, 8, 4, 8, 1), TILE_UNROLL);
    let k = kernel_loop(&f);
    assert_eq!(fma_count(&k.body), 32);
    assert!(k.body.iter().all(|o| !o.is_loop()));
}

#[test]
fn k_unroll_replicates_the_register_tile() {
    let f = lowered(16, 16, 16, TileParams::new(8, 8, 4, 8, 4), TILE_UNROLL);
    let k = kernel_loop(&f);
    assert_eq!(fma_count(&k.body), 4 * 32);
    assert_eq!(k.step, 4);
}

#[test]
fn scalar_replacement_keeps_c_out_of_the_k_loop() {
    let flags = StageFlags { vect: true, scalrep: true, ..TILE_UNROLL };
    let f = lowered(16, 32, 16, TileParams::new(8, 8, 4, 8, 2), flags);
    let k = kernel_loop(&f);
    let c = f.args[2];
    let cast_c: Vec<ValueId> = f
        .body
        .iter()
        .filter_map(|o| match o {
            Op::ShapeCast { result, source } if *source == c => Some(*result),
            _ => None,
        })
        .collect();
    let mut touches = 0;
    for op in &k.body {
        op.walk(&mut |o| {
            if let Op::Load { memref, .. } | Op::Store { memref, .. } = o {
                touches += (*memref == c || cast_c.contains(memref)) as usize;
            }
        });
    }
    assert_eq!(touches, 0);
    assert_eq!(promoted_accumulators(&f, k.iv), 4 * 8 / 4);

    let mut x = integer_args::<f64>(16, 32, 16, 5);
    let mut y = x.clone();
    interpret(&naive::<f64>(16, 32, 16), &mut x).unwrap();
    interpret(&f, &mut y).unwrap();
    assert_eq!(x[2].as_slice(), y[2].as_slice());
}

#[test]
fn iv_dependent_store_is_left_alone() {
    let f = copy_loop(6);
    assert!(scalar_replace(&f).structurally_eq(&f));
}

#[test]
fn duplicate_loads_are_merged() {
    let f = parse_function(
        "func @dup(%0: memref<6xf64>, %1: memref<6xf64>) {
  affine.for %2 = 0 to 6 {
    %3 = affine.load %0[%2] : f64
    %4 = affine.load %0[%2] : f64
    %5 = mulf %3, %4 : f64
    affine.store %5, %1[%2] : f64
  }
  return
}",
    )
    .unwrap();
    let g = scalar_replace(&f);
    let mut loads = 0;
    g.walk(|o| loads += matches!(o, Op::Load { .. }) as usize);
    assert_eq!(loads, 1);
    let ty = MemRefType::new(vec![6], ElementKind::Scalar(ScalarKind::F64));
    let input = TensorBuffer::from_fn(ty.clone(), |i| i[0] as f64 - 2.5).unwrap();
    let mut x = vec![input.clone(), TensorBuffer::zeros(ty.clone()).unwrap()];
    let mut y = x.clone();
    interpret(&f, &mut x).unwrap();
    interpret(&g, &mut y).unwrap();
    assert_eq!(x[1].as_slice(), y[1].as_slice());
}

#[test]
fn invariant_accumulator_is_promoted_across_the_loop() {
    let f = parse_function(
        "func @sum(%0: memref<9xf64>, %1: memref<1xf64>) {
  affine.for %2 = 0 to 9 {
    %3 = affine.load %0[%2] : f64
    %4 = affine.load %1[0] : f64
    %5 = addf %4, %3 : f64
    affine.store %5, %1[0] : f64
  }
  return
}",
    )
    .unwrap();
    let g = scalar_replace(&f);
    let l = g.find_loop(g.loop_ivs()[0]).unwrap();
    let mut touches = 0;
    for op in &l.body {
        op.walk(&mut |o| {
            if let Op::Load { memref, .. } | Op::Store { memref, .. } = o {
                touches += (*memref == f.args[1]) as usize;
            }
        });
    }
    assert_eq!(touches, 0);
    let ty = |n| MemRefType::new(vec![n], ElementKind::Scalar(ScalarKind::F64));
    let mut x = vec![TensorBuffer::from_fn(ty(9), |i| i[0] as f64).unwrap(), TensorBuffer::zeros(ty(1)).unwrap()];
    let mut y = x.clone();
    interpret(&f, &mut x).unwrap();
    interpret(&g, &mut y).unwrap();
    assert_eq!(x[1].as_slice(), y[1].as_slice());
    assert_eq!(y[1].as_slice(), [36.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn unroll_jam_preserves_results(
        m in 1i64..=9, n in 1i64..=9, k in 1i64..=9, level in 0usize..3, factor in 1i64..=6,
    ) {
        let f = naive::<f64>(m, n, k);
        let (levels, _) = perfect_nest(&f, 3).unwrap();
        let (g, _) = unroll_jam(&f, levels[level].0, factor).unwrap();
        let mut x = integer_args::<f64>(m, n, k, 11);
        let mut y = x.clone();
        interpret(&f, &mut x).unwrap();
        interpret(&g, &mut y).unwrap();
        prop_assert_eq!(x[2].as_slice(), y[2].as_slice());
        let h = scalar_replace(&g);
        let mut z = x.clone();
        let mut w = x.clone();
        interpret(&g, &mut z).unwrap();
        interpret(&h, &mut w).unwrap();
        prop_assert_eq!(z[2].as_slice(), w[2].as_slice());
    }
}
