mod common;

use common::{integer_args, naive, oracle_gemm, scalar_ty};
use gemmforge::exec::interpret;
use gemmforge::ir::{ElementKind, Op, ScalarKind, Type};
use gemmforge::schedule::perfect_nest;
use gemmforge::vect::{shape_cast, vectorize, vectorize_matmul, VectError};
use proptest::prelude::*;

fn vec_of(lanes: u32, scalar: ScalarKind) -> ElementKind {
    ElementKind::Vector { lanes, scalar }
}

#[test]
fn casts_divide_the_minor_extent() {
    let t = shape_cast(&scalar_ty(ScalarKind::F64, &[2048, 2048]), vec_of(4, ScalarKind::F64)).unwrap();
    assert_eq!(t.shape, [2048, 512]);
    let t = shape_cast(&scalar_ty(ScalarKind::F32, &[16, 16]), vec_of(8, ScalarKind::F32)).unwrap();
    assert_eq!(t.shape, [16, 2]);
    assert!(matches!(
        shape_cast(&scalar_ty(ScalarKind::F64, &[10, 10]), vec_of(4, ScalarKind::F64)),
        Err(VectError::ShapeCast(..))
    ));
    assert!(shape_cast(&scalar_ty(ScalarKind::F64, &[8, 8]), vec_of(4, ScalarKind::F32)).is_err());
}

#[test]
fn vectorized_gemm_uses_vector_memrefs() {
    let f = naive::<f64>(2048, 2048, 2048);
    let g = vectorize_matmul(&f, 4).unwrap();
    let casts: Vec<_> = g
        .body
        .iter()
        .filter_map(|o| match o {
            Op::ShapeCast { result, .. } => Some(g.memref_ty(*result).unwrap().clone()),
            _ => None,
        })
        .collect();
    assert_eq!(casts.len(), 2);
    for t in casts {
        assert_eq!(t.shape, [2048, 512]);
        assert_eq!(t.element, vec_of(4, ScalarKind::F64));
    }
    let j = g.loop_ivs()[1];
    assert_eq!(g.find_loop(j).unwrap().const_trip_count(), Some(512));
    let mut splats = 0;
    g.walk(|o| splats += matches!(o, Op::Splat { .. }) as usize);
    assert_eq!(splats, 1);
}

#[test]
fn single_lane_is_the_identity() {
    let f = naive::<f64>(6, 6, 6);
    assert!(vectorize_matmul(&f, 1).unwrap().structurally_eq(&f));
}

#[test]
fn f32_eight_lanes_match_the_scalar_oracle() {
    let f = naive::<f32>(8, 8, 8);
    let g = vectorize_matmul(&f, 8).unwrap();
    let mut bufs = integer_args::<f32>(8, 8, 8, 2);
    let (a, b) = (bufs[0].to_logical(), bufs[1].to_logical());
    let mut c = bufs[2].to_logical();
    oracle_gemm(&a, &b, &mut c, 8, 8, 8);
    interpret(&g, &mut bufs).unwrap();
    assert_eq!(bufs[2].to_logical(), c);
}

#[test]
fn indivisible_width_is_rejected() {
    let f = naive::<f64>(4, 6, 4);
    assert!(matches!(vectorize_matmul(&f, 4), Err(VectError::Trip(..))));
}

#[test]
fn loop_along_a_major_dimension_is_rejected() {
    let f = naive::<f64>(8, 8, 8);
    let (levels, _) = perfect_nest(&f, 3).unwrap();
    assert!(matches!(vectorize(&f, levels[0].0, 4), Err(VectError::Stride(_))));
}

#[test]
fn vector_values_are_typed_as_vectors() {
    let g = vectorize_matmul(&naive::<f64>(4, 8, 4), 4).unwrap();
    g.walk(|o| {
        if let Op::Fma { result, .. } = o {
            assert_eq!(g.ty(*result), &Type::Elem(vec_of(4, ScalarKind::F64)));
        }
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn vectorization_commutes_with_interpretation(
        m in 1i64..=6, nv in 1i64..=4, k in 1i64..=6, w in prop::sample::select(vec![2usize, 4, 8]),
    ) {
        let n = nv * w as i64;
        let f = naive::<f64>(m, n, k);
        let g = vectorize_matmul(&f, w).unwrap();
        let mut x = integer_args::<f64>(m, n, k, 9);
        let mut y = x.clone();
        interpret(&f, &mut x).unwrap();
        interpret(&g, &mut y).unwrap();
        prop_assert_eq!(x[2].as_slice(), y[2].as_slice());
    }
}
