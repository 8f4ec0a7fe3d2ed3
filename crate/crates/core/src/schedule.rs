//! Matmul expansion and restricted tiling schedules.
//!
//! A schedule is a list of `(dim, divisor)` entries over the loops of a
//! perfect nest. Entry `(d, T)` with `T > 1` iterates tile indices
//! `x_d floordiv T`; `(d, 1)` iterates the points of dimension `d`.

use std::fmt;

use thiserror::Error;

use crate::ir::expr::ceil_div;
use crate::ir::{AffineExpr, ElementKind, ForOp, Function, InnerPerm, MemRefType, Op, OperandMap, ScalarKind, TileParams, Type, ValueId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("nest is not a perfect rectangular nest of depth {0}: {1}")]
    NotPerfect(usize, String),
    #[error("{0}")]
    Params(String),
    #[error("matmul shape mismatch: {0}")]
    Shape(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TilingSchedule {
    pub num_dims: usize,
    pub entries: Vec<(usize, i64)>,
}

impl TilingSchedule {
    pub fn new(num_dims: usize, entries: Vec<(usize, i64)>) -> Result<Self, ScheduleError> {
        let s = TilingSchedule { num_dims, entries };
        s.check()?;
        Ok(s)
    }

    pub fn identity(num_dims: usize) -> Self {
        TilingSchedule { num_dims, entries: (0..num_dims).map(|d| (d, 1)).collect() }
    }

    pub fn check(&self) -> Result<(), ScheduleError> {
        let bad = |m: String| Err(ScheduleError::InvalidSchedule(m));
        for d in 0..self.num_dims {
            let chain: Vec<i64> = self.entries.iter().filter(|e| e.0 == d).map(|e| e.1).collect();
            if chain.last() != Some(&1) {
                return bad(format!("d{d} must end with a point entry (divisor 1)"));
            }
            for w in chain.windows(2) {
                if w[1] >= w[0] || w[0] % w[1] != 0 {
                    return bad(format!("d{d} divisors {} then {} do not form a divisor chain", w[0], w[1]));
                }
            }
            if chain.iter().any(|&t| t < 1) {
                return bad(format!("d{d} has a non-positive divisor"));
            }
        }
        if let Some(e) = self.entries.iter().find(|e| e.0 >= self.num_dims) {
            return bad(format!("entry refers to d{} in a {}-d schedule", e.0, self.num_dims));
        }
        Ok(())
    }

    /// Position of the entry `(dim, divisor)`, if present.
    pub fn position(&self, dim: usize, divisor: i64) -> Option<usize> {
        self.entries.iter().position(|&e| e == (dim, divisor))
    }

    /// Position of the innermost (point) entry of `dim`.
    pub fn point_position(&self, dim: usize) -> Option<usize> {
        self.position(dim, 1)
    }

    /// Timestamp of a domain point under the schedule.
    pub fn timestamp(&self, point: &[i64]) -> Vec<i64> {
        self.entries.iter().map(|&(d, t)| point[d].div_euclid(t)).collect()
    }
}

impl fmt::Display for TilingSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = (0..self.num_dims).map(|d| format!("d{d}")).collect();
        let res: Vec<String> = self
            .entries
            .iter()
            .map(|&(d, t)| if t == 1 { format!("d{d}") } else { format!("d{d} floordiv {t}") })
            .collect();
        write!(f, "({}) -> ({})", dims.join(", "), res.join(", "))
    }
}

/// A function `@name(A: MxK, B: KxN, C: MxN)` whose body is one high-level matmul.
pub fn build_matmul(name: &str, m: i64, n: i64, k: i64, elem: ScalarKind, params: TileParams) -> Function {
    let mut f = Function::new(name);
    let e = ElementKind::Scalar(elem);
    let a = f.add_arg(MemRefType::new(vec![m, k], e));
    let b = f.add_arg(MemRefType::new(vec![k, n], e));
    let c = f.add_arg(MemRefType::new(vec![m, n], e));
    f.body.push(Op::Matmul { a, b, c, params });
    f
}

/// Constant-bound loop `[lb, ub)` with unit step.
pub fn const_loop(iv: ValueId, lb: i64, ub: i64, body: Vec<Op>) -> Op {
    Op::For(ForOp { iv, lower: OperandMap::constant(&[lb]), upper: OperandMap::constant(&[ub]), step: 1, body })
}

pub fn access(ivs: &[ValueId]) -> OperandMap {
    OperandMap::from_value_exprs(&ivs.iter().map(|v| AffineExpr::Dim(v.index())).collect::<Vec<_>>())
}

/// Replaces every matmul op by the canonical i-j-k nest computing
/// `C[i,j] = fma(A[i,k], B[k,j], C[i,j])`.
pub fn expand_matmul(func: &Function) -> Result<Function, ScheduleError> {
    let mut f = func.clone();
    let body = std::mem::take(&mut f.body);
    let mut out = Vec::with_capacity(body.len());
    for op in body {
        match op {
            Op::Matmul { a, b, c, .. } => out.push(expand_one(&mut f, a, b, c)?),
            other => out.push(other),
        }
    }
    f.body = out;
    Ok(f)
}

fn expand_one(f: &mut Function, a: ValueId, b: ValueId, c: ValueId) -> Result<Op, ScheduleError> {
    let shape = |v: ValueId| f.memref_ty(v).map(|t| (t.shape.clone(), t.element));
    let (Some((sa, ea)), Some((sb, eb)), Some((sc, ec))) = (shape(a), shape(b), shape(c)) else {
        return Err(ScheduleError::Shape("operands must be memrefs".into()));
    };
    if sa.len() != 2 || sb.len() != 2 || sc.len() != 2 {
        return Err(ScheduleError::Shape("operands must be rank 2".into()));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    if sb[0] != k || sc != vec![m, n] {
        return Err(ScheduleError::Shape(format!(
            "A {}x{}, B {}x{}, C {}x{}",
            sa[0], sa[1], sb[0], sb[1], sc[0], sc[1]
        )));
    }
    if ea != eb || eb != ec {
        return Err(ScheduleError::Shape("element types differ".into()));
    }
    let (i, j, kk) = (f.new_value(Type::Index), f.new_value(Type::Index), f.new_value(Type::Index));
    let va = f.new_value(Type::Elem(ea));
    let vb = f.new_value(Type::Elem(ea));
    let vc = f.new_value(Type::Elem(ea));
    let r = f.new_value(Type::Elem(ea));
    let body = vec![
        Op::Load { result: va, memref: a, index: access(&[i, kk]) },
        Op::Load { result: vb, memref: b, index: access(&[kk, j]) },
        Op::Load { result: vc, memref: c, index: access(&[i, j]) },
        Op::Fma { result: r, a: va, b: vb, c: vc },
        Op::Store { value: r, memref: c, index: access(&[i, j]) },
    ];
    Ok(const_loop(i, 0, m, vec![const_loop(j, 0, n, vec![const_loop(kk, 0, k, body)])]))
}

/// The BLIS-style schedule `(k/K_C, i/M_C, j/N_R, i/M_R, k, j, i)`, with the
/// last two entries swapped for the `ij` permutation. With `lanes`, the `j`
/// extent is counted in vectors, so `N_R` is divided by the lane count.
///
/// Entries whose divisor would repeat the enclosing divisor of the same
/// dimension (for example `N_R` equal to the lane count) are omitted.
pub fn applied_schedule_for(params: &TileParams, lanes: Option<usize>) -> Result<TilingSchedule, ScheduleError> {
    params.check().map_err(ScheduleError::Params)?;
    let nr = match lanes {
        Some(w) if w > 1 => {
            let w = w as i64;
            if params.nr % w != 0 {
                return Err(ScheduleError::Params(format!(
                    "vector width {w} does not divide N_R = {}",
                    params.nr
                )));
            }
            params.nr / w
        }
        _ => params.nr,
    };
    let mut entries = Vec::new();
    let mut push = |d: usize, t: i64| {
        if t > 1 {
            entries.push((d, t));
        }
    };
    push(2, params.kc);
    push(0, params.mc);
    push(1, nr);
    if params.mr != params.mc {
        push(0, params.mr);
    }
    entries.push((2, 1));
    match params.perm {
        InnerPerm::JI => entries.extend([(1, 1), (0, 1)]),
        InnerPerm::IJ => entries.extend([(0, 1), (1, 1)]),
    }
    TilingSchedule::new(3, entries)
}

/// `(iv, extent)` of each loop in a perfect nest, outermost first.
pub type NestLevels = Vec<(ValueId, i64)>;

/// Number of leading `shape_cast` ops in the function body.
fn prologue_len(func: &Function) -> usize {
    func.body.iter().take_while(|op| matches!(op, Op::ShapeCast { .. })).count()
}

/// The loops of a perfect nest: `(iv, extent)` per level plus the innermost body.
pub fn perfect_nest(func: &Function, depth: usize) -> Result<(NestLevels, &[Op]), ScheduleError> {
    let err = |m: &str| ScheduleError::NotPerfect(depth, m.to_string());
    let pro = prologue_len(func);
    if func.body.len() != pro + 1 {
        return Err(err("function body must be a single loop after its shape casts"));
    }
    let mut levels = Vec::new();
    let mut region: &[Op] = &func.body[pro..];
    for level in 0..depth {
        let [Op::For(fo)] = region else {
            return Err(err(&format!("level {level} is not a single loop")));
        };
        let (Some(lb), Some(ub)) = (fo.lower.constants(), fo.upper.constants()) else {
            return Err(err("bounds must be constant"));
        };
        if lb != [0] || ub.len() != 1 || fo.step != 1 {
            return Err(err("loops must run from 0 with unit step"));
        }
        levels.push((fo.iv, ub[0]));
        region = &fo.body;
    }
    if region.iter().any(Op::is_loop) {
        return Err(err("innermost body contains a loop"));
    }
    Ok((levels, region))
}

/// Rewrites a perfect nest according to `sched`. Returns the new function and
/// the induction variable created for each schedule entry.
pub fn apply_tiling_schedule(func: &Function, sched: &TilingSchedule) -> Result<(Function, Vec<ValueId>), ScheduleError> {
    sched.check()?;
    let (levels, body) = perfect_nest(func, sched.num_dims)?;
    let body = body.to_vec();
    let mut f = func.clone();
    let ivs: Vec<ValueId> = sched.entries.iter().map(|_| f.new_value(Type::Index)).collect();

    let mut bounds = Vec::new();
    for (p, &(d, t)) in sched.entries.iter().enumerate() {
        let extent = levels[d].1;
        let parent = sched.entries[..p].iter().rposition(|e| e.0 == d);
        let (lower, upper) = match parent {
            None => (vec![AffineExpr::Const(0)], vec![AffineExpr::Const(ceil_div(extent, t))]),
            Some(q) => {
                let tp = sched.entries[q].1;
                let r = tp / t;
                let pv = AffineExpr::Dim(ivs[q].index());
                let lb = pv.clone() * r;
                let ub = (pv + 1) * r;
                let full = ceil_div(extent, t);
                // The clamp is redundant when the parent's tiles never overrun.
                if r * ceil_div(extent, tp) <= full {
                    (vec![lb], vec![ub])
                } else {
                    (vec![lb], vec![AffineExpr::Const(full), ub])
                }
            }
        };
        bounds.push((OperandMap::from_value_exprs(&lower), OperandMap::from_value_exprs(&upper)));
    }

    let mut inner = body;
    for (d, &(old, _)) in levels.iter().enumerate() {
        let p = sched.point_position(d).expect("checked");
        let with = AffineExpr::Dim(ivs[p].index());
        for op in &mut inner {
            op.substitute_index(old, &with);
        }
    }
    for (p, (lower, upper)) in bounds.into_iter().enumerate().rev() {
        inner = vec![Op::For(ForOp { iv: ivs[p], lower, upper, step: 1, body: inner })];
    }
    f.body.truncate(prologue_len(func));
    f.body.extend(inner);
    Ok((f, ivs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{print_function, verify};

    fn naive(m: i64, n: i64, k: i64) -> Function {
        expand_matmul(&build_matmul("mm", m, n, k, ScalarKind::F64, TileParams::new(4, 4, 2, 2, 1))).unwrap()
    }

    #[test]
    fn paper_schedule_shape() {
        let s = applied_schedule_for(&TileParams::new(64, 256, 4, 8, 1), None).unwrap();
        assert_eq!(s.entries, vec![(2, 256), (0, 64), (1, 8), (0, 4), (2, 1), (1, 1), (0, 1)]);
        assert_eq!(
            s.to_string(),
            "(d0, d1, d2) -> (d2 floordiv 256, d0 floordiv 64, d1 floordiv 8, d0 floordiv 4, d2, d1, d0)"
        );
        let ij = applied_schedule_for(&TileParams::new(64, 256, 4, 8, 1).with_perm(InnerPerm::IJ), None).unwrap();
        assert_eq!(&ij.entries[5..], &[(0, 1), (1, 1)]);
    }

    #[test]
    fn schedule_rejects_bad_params() {
        assert!(applied_schedule_for(&TileParams::new(64, 256, 3, 8, 1), None).is_err());
        assert!(applied_schedule_for(&TileParams::new(64, 256, 4, 6, 1), Some(4)).is_err());
        assert!(TilingSchedule::new(1, vec![(0, 4), (0, 3), (0, 1)]).is_err());
        assert!(TilingSchedule::new(1, vec![(0, 4)]).is_err());
    }

    #[test]
    fn naive_nest_trip_counts() {
        let f = naive(2088, 2048, 2048);
        assert!(verify(&f).is_empty());
        let (levels, body) = perfect_nest(&f, 3).unwrap();
        assert_eq!(levels.iter().map(|l| l.1).collect::<Vec<_>>(), vec![2088, 2048, 2048]);
        assert_eq!(body.len(), 5);
    }

    #[test]
    fn partial_tile_bound_keeps_min() {
        let f = naive(2088, 8, 8);
        let s = TilingSchedule::new(3, vec![(0, 64), (0, 4), (1, 1), (2, 1), (0, 1)]).unwrap();
        let (t, _) = apply_tiling_schedule(&f, &s).unwrap();
        assert!(verify(&t).is_empty());
        let text = print_function(&t);
        assert!(text.contains("affine.for %4 = %3 * 16 to min(522, %3 * 16 + 16)"), "{text}");
        // 4 divides 2088, so the point loop carries no clamp.
        assert!(text.contains("affine.for %7 = %4 * 4 to %4 * 4 + 4"), "{text}");
    }

    #[test]
    fn identity_schedule_is_structural_identity() {
        let f = naive(3, 4, 5);
        let (t, _) = apply_tiling_schedule(&f, &TilingSchedule::identity(3)).unwrap();
        assert!(t.structurally_eq(&f));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut f = Function::new("bad");
        let e = ElementKind::Scalar(ScalarKind::F64);
        let a = f.add_arg(MemRefType::new(vec![4, 5], e));
        let b = f.add_arg(MemRefType::new(vec![6, 7], e));
        let c = f.add_arg(MemRefType::new(vec![4, 7], e));
        f.body.push(Op::Matmul { a, b, c, params: TileParams::new(4, 4, 2, 2, 1) });
        assert!(matches!(expand_matmul(&f), Err(ScheduleError::Shape(_))));
        assert_eq!(verify(&f).len(), 1);
    }
}
