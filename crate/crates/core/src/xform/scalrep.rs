use std::collections::{HashMap, HashSet};

use crate::ir::{AffineExpr, ForOp, Function, MemRefType, Op, OperandMap, Type, ValueId};

use super::unroll::provably_distinct;

type Key = (ValueId, Vec<AffineExpr>);

/// Promotes loop-invariant read-modify-write locations to single-element
/// buffers, forwards stored values to later loads, removes redundant loads
/// and overwritten stores, and hoists loop-invariant loads.
pub fn scalar_replace(func: &Function) -> Function {
    let mut f = func.clone();
    for iv in f.loop_ivs().into_iter().rev() {
        promote_in_loop(&mut f, iv);
    }
    let mut repl = HashMap::new();
    forward_block(&mut f.body, &mut repl);
    if !repl.is_empty() {
        let resolve = |mut v: ValueId| {
            while let Some(&n) = repl.get(&v) {
                v = n;
            }
            v
        };
        for op in &mut f.body {
            op.replace_uses(&resolve);
        }
    }
    eliminate_dead_stores(&mut f.body);
    for iv in f.loop_ivs().into_iter().rev() {
        hoist_invariant_loads(&mut f, iv);
    }
    f
}

/// Values defined anywhere inside `ops`, loop ivs included.
fn defined_in(ops: &[Op]) -> HashSet<ValueId> {
    let mut out = HashSet::new();
    for op in ops {
        op.walk(&mut |o| {
            if let Some(r) = o.result() {
                out.insert(r);
            }
            if let Op::For(fo) = o {
                out.insert(fo.iv);
            }
        });
    }
    out
}

/// Memrefs written (or passed to calls) anywhere inside `ops`.
fn written_in(ops: &[Op]) -> HashSet<ValueId> {
    let mut out = HashSet::new();
    for op in ops {
        op.walk(&mut |o| match o {
            Op::Store { memref, .. } => {
                out.insert(*memref);
            }
            Op::Call { .. } | Op::Matmul { .. } | Op::Dealloc { .. } => out.extend(o.value_operands()),
            _ => {}
        });
    }
    out
}

fn promote_in_loop(f: &mut Function, iv: ValueId) {
    let Some(fo) = f.find_loop(iv) else { return };
    let mut inner = defined_in(&fo.body);
    inner.insert(iv);
    let invariant = |m: &OperandMap| m.operands.iter().all(|v| !inner.contains(v));

    // Every access to each memref anywhere in the loop.
    let mut all: HashMap<ValueId, Vec<Vec<AffineExpr>>> = HashMap::new();
    let mut opaque: HashSet<ValueId> = HashSet::new();
    for op in &fo.body {
        op.walk(&mut |o| match o {
            Op::Load { memref, index, .. } | Op::Store { memref, index, .. } => {
                all.entry(*memref).or_default().push(index.value_exprs());
            }
            Op::Call { .. } | Op::Matmul { .. } | Op::Dealloc { .. } | Op::ShapeCast { .. } => {
                opaque.extend(o.value_operands());
            }
            _ => {}
        });
    }
    // Candidates: top-level load and store pairs at an invariant index.
    let mut loads: Vec<Key> = Vec::new();
    let mut stores: Vec<Key> = Vec::new();
    for op in &fo.body {
        match op {
            Op::Load { memref, index, .. } if invariant(index) => loads.push((*memref, index.value_exprs())),
            Op::Store { memref, index, .. } if invariant(index) => stores.push((*memref, index.value_exprs())),
            _ => {}
        }
    }
    let mut cands: Vec<(Key, OperandMap)> = Vec::new();
    for key in &stores {
        let (m, idx) = key;
        if inner.contains(m) || opaque.contains(m) || !loads.contains(key) || cands.iter().any(|(k, _)| k == key) {
            continue;
        }
        let isolated = all[m].iter().all(|other| other == idx || provably_distinct(other, idx));
        if isolated {
            cands.push((key.clone(), OperandMap::from_value_exprs(idx)));
        }
    }
    if cands.is_empty() {
        return;
    }

    let mut before = Vec::new();
    let mut after = Vec::new();
    let mut swaps: Vec<(Key, ValueId)> = Vec::new();
    for ((m, idx), index) in cands {
        let elem = f.memref_ty(m).unwrap().element;
        let buf = f.new_value(Type::MemRef(MemRefType::new(vec![1], elem).with_alignment(elem.bytes())));
        let v0 = f.new_value(Type::Elem(elem));
        let v1 = f.new_value(Type::Elem(elem));
        let zero = OperandMap::constant(&[0]);
        before.push(Op::Alloc { result: buf });
        before.push(Op::Load { result: v0, memref: m, index: index.clone() });
        before.push(Op::Store { value: v0, memref: buf, index: zero.clone() });
        after.push(Op::Load { result: v1, memref: buf, index: zero.clone() });
        after.push(Op::Store { value: v1, memref: m, index });
        after.push(Op::Dealloc { memref: buf });
        swaps.push(((m, idx), buf));
    }
    let fo = f.find_loop_mut(iv).unwrap();
    for op in &mut fo.body {
        let target = match op {
            Op::Load { memref, index, .. } | Op::Store { memref, index, .. } => {
                let key = (*memref, index.value_exprs());
                swaps.iter().find(|(k, _)| *k == key).map(|(_, b)| (memref, index, *b))
            }
            _ => None,
        };
        if let Some((memref, index, buf)) = target {
            *memref = buf;
            *index = OperandMap::constant(&[0]);
        }
    }
    f.with_loop_region(iv, |region, pos| {
        let n = before.len();
        region.splice(pos..pos, before);
        region.splice(pos + n + 1..pos + n + 1, after);
    });
}

fn may_alias(a: &Key, b: &Key) -> bool {
    a.0 == b.0 && !provably_distinct(&a.1, &b.1)
}

/// Straight-line forwarding inside each block: a load of a location whose
/// value is known (from an earlier load or store) is replaced by that value.
fn forward_block(block: &mut Vec<Op>, repl: &mut HashMap<ValueId, ValueId>) {
    let mut known: Vec<(Key, ValueId)> = Vec::new();
    let mut out = Vec::with_capacity(block.len());
    for mut op in std::mem::take(block) {
        match &op {
            Op::Load { result, memref, index } => {
                let key = (*memref, index.value_exprs());
                if let Some((_, v)) = known.iter().find(|(k, _)| *k == key) {
                    repl.insert(*result, *v);
                    continue;
                }
                known.push((key, *result));
            }
            Op::Store { value, memref, index } => {
                let key = (*memref, index.value_exprs());
                known.retain(|(k, _)| !may_alias(k, &key));
                known.push((key, *value));
            }
            Op::For(_) | Op::Call { .. } | Op::Matmul { .. } | Op::Dealloc { .. } => {
                let w = written_in(std::slice::from_ref(&op));
                known.retain(|((m, _), _)| !w.contains(m));
            }
            _ => {}
        }
        if let Op::For(fo) = &mut op {
            forward_block(&mut fo.body, repl);
        }
        out.push(op);
    }
    *block = out;
}

/// Removes a store when a later store in the same block overwrites the same
/// location with no possible read in between.
fn eliminate_dead_stores(block: &mut Vec<Op>) {
    let mut pending: Vec<(Key, usize)> = Vec::new();
    let mut dead = HashSet::new();
    for (pos, op) in block.iter_mut().enumerate() {
        match &*op {
            Op::Load { memref, index, .. } => {
                let key = (*memref, index.value_exprs());
                pending.retain(|(k, _)| !may_alias(k, &key));
            }
            Op::Store { memref, index, .. } => {
                let key = (*memref, index.value_exprs());
                if let Some(i) = pending.iter().position(|(k, _)| *k == key) {
                    dead.insert(pending.remove(i).1);
                }
                pending.push((key, pos));
            }
            Op::For(_) | Op::Call { .. } | Op::Matmul { .. } | Op::Dealloc { .. } | Op::ShapeCast { .. } => {
                let touched: HashSet<ValueId> = {
                    let mut t = HashSet::new();
                    op.walk(&mut |o| match o {
                        Op::Load { memref, .. } | Op::Store { memref, .. } => {
                            t.insert(*memref);
                        }
                        _ => t.extend(o.value_operands()),
                    });
                    t
                };
                pending.retain(|((m, _), _)| !touched.contains(m));
            }
            _ => {}
        }
        if let Op::For(fo) = op {
            eliminate_dead_stores(&mut fo.body);
        }
    }
    if !dead.is_empty() {
        let mut pos = 0;
        block.retain(|_| {
            let keep = !dead.contains(&pos);
            pos += 1;
            keep
        });
    }
}

fn hoist_invariant_loads(f: &mut Function, iv: ValueId) {
    let Some(fo) = f.find_loop(iv) else { return };
    let mut inner = defined_in(&fo.body);
    inner.insert(iv);
    let written = written_in(&fo.body);
    let hoistable = |op: &Op| match op {
        Op::Load { memref, index, .. } => {
            !inner.contains(memref) && !written.contains(memref) && index.operands.iter().all(|v| !inner.contains(v))
        }
        _ => false,
    };
    if !fo.body.iter().any(hoistable) {
        return;
    }
    let moved: Vec<bool> = fo.body.iter().map(hoistable).collect();
    let fo: &mut ForOp = f.find_loop_mut(iv).unwrap();
    let mut hoisted = Vec::new();
    let mut keep = Vec::new();
    for (op, m) in std::mem::take(&mut fo.body).into_iter().zip(moved) {
        if m {
            hoisted.push(op);
        } else {
            keep.push(op);
        }
    }
    fo.body = keep;
    f.with_loop_region(iv, |region, pos| {
        region.splice(pos..pos, hoisted);
    });
}

/// Number of single-element buffers allocated directly around loop `iv`.
pub fn promoted_accumulators(f: &Function, iv: ValueId) -> usize {
    let mut count = 0;
    let is_acc = |v: ValueId| matches!(f.memref_ty(v), Some(t) if t.shape == [1]);
    f.clone().with_loop_region(iv, |region, _| {
        for op in region.iter() {
            if let Op::Alloc { result } = op {
                if is_acc(*result) {
                    count += 1;
                }
            }
        }
    });
    count
}
