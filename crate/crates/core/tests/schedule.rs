mod common;

use common::{expected_order, gemm_trace, naive};
use gemmforge::ir::{AffineExpr, InnerPerm, Op, TileParams};
use gemmforge::schedule::{applied_schedule_for, apply_tiling_schedule, perfect_nest, TilingSchedule};
use proptest::prelude::*;

fn tiled(extents: [i64; 3], entries: &[(usize, i64)]) -> Vec<[i64; 3]> {
    let f = naive::<f64>(extents[0], extents[1], extents[2]);
    let s = TilingSchedule::new(3, entries.to_vec()).unwrap();
    gemm_trace(&apply_tiling_schedule(&f, &s).unwrap().0)
}

#[test]
fn naive_nest_has_the_problem_trip_counts() {
    let f = naive::<f64>(2088, 2048, 2048);
    let (levels, body) = perfect_nest(&f, 3).unwrap();
    assert_eq!(levels.iter().map(|l| l.1).collect::<Vec<_>>(), [2088, 2048, 2048]);
    assert!(body.iter().any(|op| matches!(op, Op::Fma { .. })));
}

#[test]
fn ragged_tile_is_clamped_by_the_extent() {
    let f = naive::<f64>(2090, 4, 4);
    let s = TilingSchedule::new(3, vec![(0, 16), (1, 1), (0, 1), (2, 1)]).unwrap();
    let (t, ivs) = apply_tiling_schedule(&f, &s).unwrap();
    let outer = t.find_loop(ivs[0]).unwrap();
    assert_eq!(outer.upper.constants(), Some(vec![131]));
    let point = t.find_loop(ivs[2]).unwrap();
    let tv = AffineExpr::Dim(ivs[0].index());
    let ub = point.upper.value_exprs();
    assert_eq!(ub.len(), 2);
    assert_eq!(ub[0].simplify().as_const(), Some(2090));
    assert_eq!(ub[1].simplify(), (tv * 16 + 16).simplify());
}

#[test]
fn divisible_tiles_need_no_clamp() {
    let f = naive::<f64>(2088, 4, 4);
    let s = TilingSchedule::new(3, vec![(0, 4), (1, 1), (0, 1), (2, 1)]).unwrap();
    let (t, ivs) = apply_tiling_schedule(&f, &s).unwrap();
    assert_eq!(t.find_loop(ivs[0]).unwrap().upper.constants(), Some(vec![522]));
    assert_eq!(t.find_loop(ivs[2]).unwrap().upper.len(), 1);
}

#[test]
fn identity_schedule_reproduces_the_nest() {
    let f = naive::<f64>(5, 6, 7);
    let (t, _) = apply_tiling_schedule(&f, &TilingSchedule::identity(3)).unwrap();
    assert!(t.canonicalize().structurally_eq(&f.canonicalize()));
}

#[test]
fn seven_five_six_trace_is_a_bijection_in_schedule_order() {
    let entries = [(2, 3), (0, 2), (1, 1), (0, 1), (2, 1)];
    let got = tiled([7, 5, 6], &entries);
    assert_eq!(got.len(), 7 * 5 * 6);
    assert_eq!(got, expected_order([7, 5, 6], &entries));
}

#[test]
fn applied_schedule_rejects_indivisible_register_tile() {
    assert!(applied_schedule_for(&TileParams::new(64, 256, 3, 8, 1), None).is_err());
    assert!(applied_schedule_for(&TileParams::new(64, 256, 4, 6, 1), Some(4)).is_err());
}

#[test]
fn applied_schedule_orders_cache_then_register_tiles() {
    let s = applied_schedule_for(&TileParams::new(64, 256, 4, 8, 1), None).unwrap();
    assert_eq!(s.entries, [(2, 256), (0, 64), (1, 8), (0, 4), (2, 1), (1, 1), (0, 1)]);
    let v = applied_schedule_for(&TileParams::new(64, 256, 4, 8, 1).with_perm(InnerPerm::IJ), Some(4)).unwrap();
    assert_eq!(v.entries, [(2, 256), (0, 64), (1, 2), (0, 4), (2, 1), (0, 1), (1, 1)]);
}

#[test]
fn invalid_chains_are_rejected() {
    assert!(TilingSchedule::new(3, vec![(0, 4), (0, 6), (0, 1), (1, 1), (2, 1)]).is_err());
    assert!(TilingSchedule::new(3, vec![(0, 6), (0, 4), (0, 1), (1, 1), (2, 1)]).is_err());
    assert!(TilingSchedule::new(3, vec![(0, 1), (1, 1)]).is_err());
    assert!(TilingSchedule::new(2, vec![(0, 1), (1, 1), (2, 1)]).is_err());
}

/// Divisor chains ending in 1 with leading divisors at most 6.
fn chain() -> impl Strategy<Value = Vec<i64>> {
    prop_oneof![
        Just(vec![1]),
        Just(vec![2, 1]),
        Just(vec![3, 1]),
        Just(vec![4, 1]),
        Just(vec![6, 1]),
        Just(vec![4, 2, 1]),
        Just(vec![6, 2, 1]),
        Just(vec![6, 3, 1]),
    ]
}

/// Interleaves per-dimension chains according to `picks`.
fn merge(chains: &[Vec<i64>; 3], picks: &[usize]) -> Vec<(usize, i64)> {
    let mut pos = [0usize; 3];
    let mut out = Vec::new();
    let mut p = picks.iter().cycle();
    while out.len() < chains.iter().map(Vec::len).sum() {
        let mut d = p.next().unwrap() % 3;
        while pos[d] == chains[d].len() {
            d = (d + 1) % 3;
        }
        out.push((d, chains[d][pos[d]]));
        pos[d] += 1;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn tiled_nest_visits_each_point_once_in_schedule_order(
        extents in [1i64..=9, 1i64..=9, 1i64..=9],
        chains in [chain(), chain(), chain()],
        picks in proptest::collection::vec(0usize..3, 9),
    ) {
        let entries = merge(&chains, &picks);
        prop_assert_eq!(tiled(extents, &entries), expected_order(extents, &entries));
    }
}
