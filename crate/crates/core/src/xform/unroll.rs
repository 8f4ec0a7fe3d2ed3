use std::collections::HashMap;

use crate::ir::{AffineExpr, ForOp, Function, Op, OperandMap, ValueId};

use super::XformError;

pub const DEFAULT_UNROLL_CAP: i64 = 64;

/// Loops produced by [`unroll_jam`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnrollResult {
    pub main: ValueId,
    pub cleanup: Option<ValueId>,
}

fn expr(v: ValueId) -> AffineExpr {
    AffineExpr::Dim(v.index())
}

/// `body` with fresh definitions and `iv` replaced by `with`.
fn replica(f: &mut Function, body: &[Op], iv: ValueId, with: &AffineExpr) -> Vec<Op> {
    let mut ops = f.clone_ops(body, &HashMap::new());
    for op in &mut ops {
        op.substitute_index(iv, with);
    }
    ops
}

fn single_lower(fo: &ForOp) -> Result<AffineExpr, XformError> {
    let lows = fo.lower.value_exprs();
    match &lows[..] {
        [l] => Ok(l.clone()),
        _ => {
            let consts: Option<Vec<i64>> = lows.iter().map(AffineExpr::as_const).collect();
            consts
                .and_then(|c| c.into_iter().max())
                .map(AffineExpr::Const)
                .ok_or_else(|| XformError::Bounds(fo.iv.to_string(), "lower bound has several terms".into()))
        }
    }
}

/// Replaces the loop by one copy of its body per iteration.
pub fn unroll_full(func: &Function, iv: ValueId, cap: i64) -> Result<Function, XformError> {
    let fo = func.find_loop(iv).ok_or_else(|| XformError::NoSuchLoop(iv.to_string()))?;
    let trip = fo.const_trip_count().ok_or_else(|| XformError::NonConstantTrip(iv.to_string()))?;
    if trip > cap {
        return Err(XformError::TooLarge { iv: iv.to_string(), trip, cap });
    }
    let lb = single_lower(fo)?;
    let (step, body) = (fo.step, fo.body.clone());
    let mut f = func.clone();
    let mut ops = Vec::new();
    for u in 0..trip {
        ops.extend(replica(&mut f, &body, iv, &(lb.clone() + step * u)));
    }
    f.with_loop_region(iv, |region, pos| {
        region.splice(pos..=pos, ops);
    });
    Ok(f)
}

/// Inlines every loop that runs exactly once.
pub fn promote_single_iteration(func: &Function) -> Function {
    let mut f = func.clone();
    loop {
        let next = f.loop_ivs().into_iter().find(|&iv| f.find_loop(iv).and_then(ForOp::const_trip_count) == Some(1));
        match next {
            Some(iv) => f = unroll_full(&f, iv, 1).expect("single-iteration loop"),
            None => return f,
        }
    }
}

/// Unrolls the loop by `factor`, jamming copies of a perfectly nested inner
/// loop, and adds a cleanup loop for the remaining iterations when the trip
/// count is not provably a multiple of `factor`.
///
/// The cleanup loop starts where the main loop stops. At most one upper
/// bound term may leave a remainder; terms whose distance from the lower
/// bound is a constant multiple of `factor * step` are exact.
pub fn unroll_jam(func: &Function, iv: ValueId, factor: i64) -> Result<(Function, UnrollResult), XformError> {
    if factor < 1 {
        return Err(XformError::Factor(factor));
    }
    let fo = func.find_loop(iv).ok_or_else(|| XformError::NoSuchLoop(iv.to_string()))?.clone();
    if factor == 1 {
        return Ok((func.clone(), UnrollResult { main: iv, cleanup: None }));
    }
    if fo.lower.len() != 1 {
        return Err(XformError::Bounds(iv.to_string(), "lower bound has several terms".into()));
    }
    let lb = fo.lower.value_expr(0);
    let s = fo.step;
    let block = s * factor;
    let uppers = fo.upper.value_exprs();

    let mut main_upper = Vec::new();
    let mut ragged = Vec::new();
    for u in &uppers {
        let span = (u.clone() - lb.clone()).simplify().as_const();
        let exact = matches!(span, Some(d) if d <= 0 || crate::ir::ceil_div(d, s) % factor == 0);
        if exact {
            main_upper.push(u.clone());
        } else {
            main_upper.push(u.clone() - s * (factor - 1));
            ragged.push(u.clone());
        }
    }
    let cleanup_lower = match &ragged[..] {
        [] => None,
        [u] => {
            let q = (u.clone() - lb.clone() + (s - 1)).floordiv(block);
            Some(lb.clone() + q * block)
        }
        _ => {
            return Err(XformError::Bounds(
                iv.to_string(),
                "more than one upper bound term leaves a remainder".into(),
            ))
        }
    };

    let mut f = func.clone();
    let replicas: Vec<Vec<Op>> = (0..factor)
        .map(|u| replica(&mut f, &fo.body, iv, &(expr(iv) + s * u)))
        .collect();
    check_jam_safety(&f, &replicas, iv)?;
    let main_body = jam(replicas);
    let main = Op::For(ForOp {
        iv,
        lower: fo.lower.clone(),
        upper: OperandMap::from_value_exprs(&main_upper),
        step: block,
        body: main_body,
    });
    let mut new_ops = vec![main];
    let mut cleanup_iv = None;
    if let Some(cl) = cleanup_lower {
        let civ = f.new_value(crate::ir::Type::Index);
        let body = replica(&mut f, &fo.body, iv, &expr(civ));
        new_ops.push(Op::For(ForOp {
            iv: civ,
            lower: OperandMap::from_value_exprs(&[cl]),
            upper: fo.upper.clone(),
            step: s,
            body,
        }));
        cleanup_iv = Some(civ);
    }
    f.with_loop_region(iv, |region, pos| {
        region.splice(pos..=pos, new_ops);
    });
    Ok((f, UnrollResult { main: iv, cleanup: cleanup_iv }))
}

/// Fuses replicas that each consist of one loop with identical bounds;
/// otherwise concatenates them in order.
fn jam(replicas: Vec<Vec<Op>>) -> Vec<Op> {
    let loops: Option<Vec<&ForOp>> = replicas
        .iter()
        .map(|r| match &r[..] {
            [Op::For(fo)] => Some(fo),
            _ => None,
        })
        .collect();
    let fusable = match &loops {
        Some(ls) => ls.iter().all(|l| l.lower == ls[0].lower && l.upper == ls[0].upper && l.step == ls[0].step),
        None => false,
    };
    if !fusable {
        return replicas.into_iter().flatten().collect();
    }
    let ls = loops.unwrap();
    let first = ls[0].clone();
    let bodies: Vec<Vec<Op>> = ls
        .iter()
        .map(|l| {
            let mut body = l.body.clone();
            for op in &mut body {
                op.rename_all(&|v| if v == l.iv { first.iv } else { v });
            }
            body
        })
        .collect();
    let body = jam(bodies);
    vec![Op::For(ForOp { body, ..first })]
}

/// Jamming interleaves replicas inside inner loops. Every store of one
/// replica must provably miss every access of another replica.
fn check_jam_safety(f: &Function, replicas: &[Vec<Op>], iv: ValueId) -> Result<(), XformError> {
    let nested = replicas.iter().all(|r| matches!(&r[..], [Op::For(_)]));
    if !nested {
        return Ok(());
    }
    let accesses: Vec<Vec<(ValueId, Vec<AffineExpr>, bool)>> = replicas
        .iter()
        .map(|r| {
            let mut out = Vec::new();
            for op in r {
                op.walk(&mut |o| match o {
                    Op::Load { memref, index, .. } => out.push((*memref, index.value_exprs(), false)),
                    Op::Store { memref, index, .. } => out.push((*memref, index.value_exprs(), true)),
                    Op::Call { .. } => {
                        for v in o.value_operands() {
                            if f.memref_ty(v).is_some() {
                                out.push((v, vec![], true));
                            }
                        }
                    }
                    _ => {}
                });
            }
            out
        })
        .collect();
    for (u, au) in accesses.iter().enumerate() {
        for (v, av) in accesses.iter().enumerate() {
            if u == v {
                continue;
            }
            for (m1, i1, w1) in au {
                if !w1 {
                    continue;
                }
                for (m2, i2, _) in av {
                    if m1 == m2 && !provably_distinct(i1, i2) {
                        return Err(XformError::Unsafe(iv.to_string(), m1.to_string()));
                    }
                }
            }
        }
    }
    Ok(())
}

/// True when the two index tuples differ by a non-zero constant in some
/// dimension.
pub(crate) fn provably_distinct(a: &[AffineExpr], b: &[AffineExpr]) -> bool {
    a.len() == b.len()
        && !a.is_empty()
        && a.iter()
            .zip(b)
            .any(|(x, y)| matches!((x.clone() - y.clone()).simplify().as_const(), Some(c) if c != 0))
}
