mod common;

use std::fs;
use std::path::PathBuf;

use common::naive;
use gemmforge::ir::{
    parse_function, print_function, verify, AffineExpr, AffineMap, ElementKind, Function, MemRefType, Op,
    OperandMap, ScalarKind, TileParams,
};
use gemmforge::pipeline::{lower, PipelineConfig, Stage, StageFlags};
use proptest::prelude::*;

fn goldens() -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata");
    let mut out: Vec<(String, String)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "ir"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn every_golden_round_trips() {
    let files = goldens();
    assert!(files.len() >= 10);
    for (name, text) in files {
        let f = parse_function(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(verify(&f).is_empty(), "{name}: {:?}", verify(&f));
        let printed = print_function(&f);
        assert_eq!(printed, text, "{name}");
        assert!(parse_function(&printed).unwrap().structurally_eq(&f), "{name}");
    }
}

fn golden(name: &str) -> String {
    fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata").join(name)).unwrap()
}

fn stage_text(flags: StageFlags, stage: Stage) -> String {
    let cfg = PipelineConfig::new(24, 32, 16, ScalarKind::F64, TileParams::new(12, 8, 3, 8, 2), flags);
    print_function(lower::<f64>(&cfg, None).unwrap().get(stage).unwrap())
}

#[test]
fn pipeline_stages_match_their_goldens() {
    let f = StageFlags::default();
    let tile = StageFlags { tile: true, ..f };
    let copy = StageFlags { copy: true, ..tile };
    let unroll = StageFlags { unroll: true, ..copy };
    let scalrep = StageFlags { scalrep: true, ..unroll };
    assert_eq!(stage_text(f, Stage::Input), golden("matmul_hl.ir"));
    assert_eq!(stage_text(f, Stage::Naive), golden("naive.ir"));
    assert_eq!(stage_text(tile, Stage::Tile), golden("tiled.ir"));
    assert_eq!(stage_text(copy, Stage::Copy), golden("packed.ir"));
    assert_eq!(stage_text(unroll, Stage::Unroll), golden("unrolled.ir"));
    assert_eq!(stage_text(scalrep, Stage::Scalrep), golden("scalrep.ir"));
    assert_eq!(stage_text(StageFlags { vect: true, ..scalrep }, Stage::Scalrep), golden("full_vect.ir"));
}

#[test]
fn naive_nest_prints_three_loops_around_an_fma() {
    let text = print_function(&naive::<f64>(4, 5, 6));
    assert_eq!(text.matches("affine.for").count(), 3);
    assert_eq!(text.matches(" = fma ").count(), 1);
}

#[test]
fn empty_function_prints_header_and_return() {
    assert_eq!(print_function(&Function::new("empty")), "func @empty() {\n  return\n}\n");
}

#[test]
fn only_non_identity_layouts_are_printed() {
    let mut f = Function::new("layouts");
    let e = ElementKind::Scalar(ScalarKind::F64);
    let d = AffineExpr::dim;
    f.add_arg(MemRefType::new(vec![8, 4], e));
    f.add_arg(MemRefType::new(vec![8, 4], e).with_layout(AffineMap::new(
        2,
        0,
        vec![d(0).floordiv(4), d(1), d(0).modulo(4)],
    )));
    let text = print_function(&f);
    assert!(text.contains("memref<8x4xf64>,"), "{text}");
    assert!(text.contains("memref<8x4xf64, (d0, d1) -> (d0 floordiv 4, d1, d0 mod 4)>"), "{text}");
    assert!(parse_function(&text).unwrap().structurally_eq(&f));
}

#[test]
fn division_by_zero_does_not_parse() {
    let text = golden("naive.ir").replacen("%3, %5]", "%3 floordiv 0, %5]", 1);
    assert_ne!(text, golden("naive.ir"));
    assert!(parse_function(&text).is_err());
}

#[test]
fn hand_written_tiled_listing_parses_and_verifies() {
    let text = "func @tiled(%0: memref<2088x2048xf64>, %1: memref<2048x2048xf64>, %2: memref<2088x2048xf64>) {
  affine.for %3 = 0 to 8 {
    affine.for %4 = 0 to 33 {
      affine.for %5 = 0 to 256 {
        affine.for %6 = %4 * 16 to min(522, %4 * 16 + 16) {
          affine.for %7 = %3 * 256 to %3 * 256 + 256 {
            affine.for %8 = %5 * 8 to %5 * 8 + 8 {
              affine.for %9 = %6 * 4 to %6 * 4 + 4 {
                %10 = affine.load %0[%9, %7] : f64
                %11 = affine.load %1[%7, %8] : f64
                %12 = affine.load %2[%9, %8] : f64
                %13 = fma %10, %11, %12 : f64
                affine.store %13, %2[%9, %8] : f64
              }
            }
          }
        }
      }
    }
  }
  return
}
";
    let f = parse_function(text).unwrap();
    assert!(verify(&f).is_empty());
    assert_eq!(print_function(&f), text);
}

#[test]
fn wrong_access_arity_is_one_diagnostic() {
    let mut f = naive::<f64>(3, 3, 3);
    fn first_load(ops: &mut [Op]) -> Option<&mut OperandMap> {
        for op in ops {
            match op {
                Op::Load { index, .. } => return Some(index),
                Op::For(l) => {
                    if let Some(m) = first_load(&mut l.body) {
                        return Some(m);
                    }
                }
                _ => {}
            }
        }
        None
    }
    *first_load(&mut f.body).unwrap() = OperandMap::constant(&[0]);
    assert_eq!(verify(&f).len(), 1);
}

#[test]
fn mismatched_matmul_shapes_are_diagnosed() {
    let mut f = Function::new("bad");
    let e = ElementKind::Scalar(ScalarKind::F64);
    let a = f.add_arg(MemRefType::new(vec![4, 5], e));
    let b = f.add_arg(MemRefType::new(vec![6, 7], e));
    let c = f.add_arg(MemRefType::new(vec![4, 7], e));
    f.body.push(Op::Matmul { a, b, c, params: TileParams::new(4, 4, 2, 2, 1) });
    let d = verify(&f);
    assert_eq!(d.len(), 1);
    assert!(d[0].to_string().contains("matmul"), "{}", d[0]);
}

#[test]
fn expression_examples() {
    let d = AffineExpr::dim;
    assert_eq!(d(0).floordiv(4).eval(&[9], &[]), Ok(2));
    assert_eq!((d(0) * 258 + d(1)).eval(&[2, 5], &[]), Ok(521));
    assert_eq!(d(0).modulo(6).eval(&[11], &[]), Ok(5));
    assert_eq!((d(0) * 1 + 0).simplify(), d(0));
    assert_eq!(AffineExpr::constant(8).floordiv(4).simplify(), AffineExpr::constant(2));
    assert_eq!((d(0) * 4).floordiv(4).simplify(), d(0));
}

fn expr() -> impl Strategy<Value = AffineExpr> {
    let leaf = prop_oneof![
        (0usize..3).prop_map(AffineExpr::dim),
        (0usize..2).prop_map(AffineExpr::symbol),
        (-10i64..10).prop_map(AffineExpr::constant),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), -5i64..6).prop_map(|(a, k)| a * k),
            (inner.clone(), 1i64..9).prop_map(|(a, c)| a.floordiv(c)),
            (inner, 1i64..9).prop_map(|(a, c)| a.modulo(c)),
        ]
    })
}

proptest! {
    #[test]
    fn floordiv_and_mod_satisfy_the_euclidean_identity(x in -1000i64..1000, c in 1i64..50) {
        let d = AffineExpr::dim(0);
        let q = d.clone().floordiv(c).eval(&[x], &[]).unwrap();
        let r = d.modulo(c).eval(&[x], &[]).unwrap();
        prop_assert_eq!(q * c + r, x);
        prop_assert!((0..c).contains(&r));
    }

    #[test]
    fn simplify_preserves_values(e in expr(), samples in proptest::collection::vec(
        ([-50i64..50, -50i64..50, -50i64..50], [-50i64..50, -50i64..50]), 1000)
    ) {
        let s = e.simplify();
        for (dims, syms) in samples {
            prop_assert_eq!(e.eval(&dims, &syms), s.eval(&dims, &syms), "{} vs {}", e, s);
        }
    }

    #[test]
    fn maps_round_trip_through_text(es in proptest::collection::vec(expr(), 1..4)) {
        let m = AffineMap::new(3, 2, es);
        let back = gemmforge::ir::parse_affine_map(&m.to_string()).unwrap();
        for dims in [[0i64, 1, 2], [-7, 13, 5], [40, -3, 9]] {
            prop_assert_eq!(m.eval(&dims, &[3, -4]), back.eval(&dims, &[3, -4]));
        }
    }
}
