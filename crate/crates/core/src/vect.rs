//! Outer-loop vectorization along a data-parallel loop: memrefs indexed by
//! the loop in their minor dimension are viewed as memrefs of vectors, and
//! uniform operands are broadcast with `splat`.

use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

use crate::ir::{AffineExpr, Atom, ElementKind, ForOp, Function, MemRefType, Op, OperandMap, Type, ValueId};
use crate::schedule::perfect_nest;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VectError {
    #[error("no loop with induction variable {0}")]
    NoSuchLoop(String),
    #[error("{0} is not accessed with unit stride along the vectorized loop")]
    Stride(String),
    #[error("trip count of loop {0} is not a multiple of {1}")]
    Trip(String, usize),
    #[error("cannot cast {0} to {1}")]
    ShapeCast(String, String),
    #[error("unsupported for vectorization: {0}")]
    Unsupported(String),
}

/// `ty` reinterpreted with element kind `elem`; the minor extent scales by
/// the ratio of lane counts.
pub fn shape_cast(ty: &MemRefType, elem: ElementKind) -> Result<MemRefType, VectError> {
    let err = || VectError::ShapeCast(ty.to_string(), elem.to_string());
    if !ty.has_identity_layout() || ty.element.scalar_kind() != elem.scalar_kind() || ty.rank() == 0 {
        return Err(err());
    }
    let minor = *ty.shape.last().unwrap() * ty.element.lanes() as i64;
    let lanes = elem.lanes() as i64;
    if minor % lanes != 0 {
        return Err(err());
    }
    let mut shape = ty.shape.clone();
    *shape.last_mut().unwrap() = minor / lanes;
    Ok(MemRefType::new(shape, elem).with_alignment(ty.alignment.max(elem.bytes())))
}

fn from_linear(terms: &BTreeMap<Atom, i64>, c: i64) -> AffineExpr {
    let mut e = AffineExpr::Const(c);
    for (atom, &k) in terms {
        let a = match atom {
            Atom::Dim(d) => AffineExpr::Dim(*d),
            Atom::Symbol(s) => AffineExpr::Symbol(*s),
            Atom::Term(t) => t.clone(),
        };
        e = e + a * k;
    }
    e.simplify()
}

/// `e / w` when every coefficient and the constant are multiples of `w`.
fn exact_div(e: &AffineExpr, w: i64) -> Option<AffineExpr> {
    let (terms, c) = e.as_linear_with_terms()?;
    if c % w != 0 || terms.values().any(|k| k % w != 0) {
        return None;
    }
    let divided = terms.into_iter().map(|(a, k)| (a, k / w)).collect();
    Some(from_linear(&divided, c / w))
}

/// Vectorizes the nest of a naive matmul along `j` (its second loop).
pub fn vectorize_matmul(func: &Function, w: usize) -> Result<Function, VectError> {
    let (levels, _) = perfect_nest(func, 3).map_err(|e| VectError::Unsupported(e.to_string()))?;
    vectorize(func, levels[1].0, w)
}

/// Vectorizes loop `iv` by `w` lanes.
pub fn vectorize(func: &Function, iv: ValueId, w: usize) -> Result<Function, VectError> {
    if w == 1 {
        return Ok(func.clone());
    }
    let wi = w as i64;
    let fo = func.find_loop(iv).ok_or_else(|| VectError::NoSuchLoop(iv.to_string()))?.clone();
    if fo.step != 1 {
        return Err(VectError::Unsupported(format!("loop {iv} has step {}", fo.step)));
    }
    let divide = |m: &OperandMap| -> Result<OperandMap, VectError> {
        let es: Option<Vec<AffineExpr>> = m.value_exprs().iter().map(|e| exact_div(e, wi)).collect();
        es.map(|es| OperandMap::from_value_exprs(&es)).ok_or_else(|| VectError::Trip(iv.to_string(), w))
    };
    let lower = divide(&fo.lower)?;
    let upper = divide(&fo.upper)?;
    for op in &fo.body {
        let mut bad = false;
        op.walk(&mut |o| {
            if let Op::For(inner) = o {
                bad |= inner.lower.uses(iv) || inner.upper.uses(iv);
            }
        });
        if bad {
            return Err(VectError::Unsupported(format!("inner loop bounds depend on {iv}")));
        }
    }

    // Memrefs indexed by the loop, and the accesses to them.
    let mut vec_memrefs: Vec<ValueId> = Vec::new();
    let mut scalar_memrefs: HashSet<ValueId> = HashSet::new();
    for op in &fo.body {
        let mut res = Ok(());
        op.walk(&mut |o| match o {
            Op::Load { memref, index, .. } | Op::Store { memref, index, .. } => {
                if index.uses(iv) {
                    if !vec_memrefs.contains(memref) {
                        vec_memrefs.push(*memref);
                    }
                } else {
                    scalar_memrefs.insert(*memref);
                }
            }
            Op::Call { .. } | Op::Matmul { .. } => {
                res = Err(VectError::Unsupported("calls inside the vectorized loop".into()));
            }
            _ => {}
        });
        res?;
    }
    if let Some(m) = vec_memrefs.iter().find(|m| scalar_memrefs.contains(m)) {
        return Err(VectError::Stride(format!("{m} (accessed both with and without the loop index)")));
    }
    let count = |ops: &[Op]| {
        let mut n = 0usize;
        for op in ops {
            op.walk(&mut |o| {
                if let Op::Load { memref, .. } | Op::Store { memref, .. } = o {
                    n += vec_memrefs.contains(memref) as usize;
                }
            });
        }
        n
    };
    if count(&func.body) != count(&fo.body) {
        return Err(VectError::Unsupported("vectorized memref accessed outside the loop".into()));
    }

    let mut f = func.clone();
    let mut casts: HashMap<ValueId, ValueId> = HashMap::new();
    let mut prologue = Vec::new();
    for &m in &vec_memrefs {
        if !f.args.contains(&m) {
            return Err(VectError::Unsupported(format!("{m} is not a function argument")));
        }
        let ty = f.memref_ty(m).unwrap().clone();
        let vty = shape_cast(&ty, ElementKind::Vector { lanes: w as u32, scalar: ty.element.scalar_kind() })?;
        let cast = f.new_value(Type::MemRef(vty));
        prologue.push(Op::ShapeCast { result: cast, source: m });
        casts.insert(m, cast);
    }

    let mut cx = Cx { f: &mut f, iv, w: wi, casts: &casts, vectors: HashSet::new() };
    let body = cx.block(fo.body)?;
    let loop_op = f.find_loop_mut(iv).unwrap();
    *loop_op = ForOp { iv, lower, upper, step: 1, body };
    f.body.splice(0..0, prologue);
    Ok(f)
}

struct Cx<'a> {
    f: &'a mut Function,
    iv: ValueId,
    w: i64,
    casts: &'a HashMap<ValueId, ValueId>,
    vectors: HashSet<ValueId>,
}

impl Cx<'_> {
    fn vec_ty(&self, v: ValueId) -> ElementKind {
        let e = self.f.ty(v).as_elem().expect("element value");
        ElementKind::Vector { lanes: self.w as u32, scalar: e.scalar_kind() }
    }

    /// The vector form of `v`, splatting it first when it is uniform.
    fn widen(&mut self, v: ValueId, out: &mut Vec<Op>) -> ValueId {
        if self.vectors.contains(&v) {
            return v;
        }
        let ty = self.vec_ty(v);
        let s = self.f.new_value(Type::Elem(ty));
        out.push(Op::Splat { result: s, scalar: v });
        self.vectors.insert(s);
        s
    }

    fn index(&self, memref: ValueId, index: &OperandMap) -> Result<OperandMap, VectError> {
        let mut es = index.value_exprs();
        let last = es.len() - 1;
        for e in &es[..last] {
            if e.uses_dim(self.iv.index()) {
                return Err(VectError::Stride(memref.to_string()));
            }
        }
        let minor = es[last].clone();
        let (terms, _) = minor.as_linear_with_terms().ok_or_else(|| VectError::Stride(memref.to_string()))?;
        if terms.get(&Atom::Dim(self.iv.index())) != Some(&1)
            || terms.keys().any(|a| matches!(a, Atom::Term(t) if t.uses_dim(self.iv.index())))
        {
            return Err(VectError::Stride(memref.to_string()));
        }
        let rest = (minor - AffineExpr::Dim(self.iv.index())).simplify();
        let rest = exact_div(&rest, self.w).ok_or_else(|| VectError::Stride(memref.to_string()))?;
        es[last] = AffineExpr::Dim(self.iv.index()) + rest;
        Ok(OperandMap::from_value_exprs(&es))
    }

    fn block(&mut self, ops: Vec<Op>) -> Result<Vec<Op>, VectError> {
        let mut out = Vec::with_capacity(ops.len());
        for op in ops {
            match op {
                Op::Load { result, memref, index } => {
                    if let Some(&cast) = self.casts.get(&memref) {
                        let ty = self.vec_ty(result);
                        self.f.values[result.index()] = Type::Elem(ty);
                        self.vectors.insert(result);
                        out.push(Op::Load { result, memref: cast, index: self.index(memref, &index)? });
                    } else {
                        out.push(Op::Load { result, memref, index });
                    }
                }
                Op::Store { value, memref, index } => {
                    if let Some(&cast) = self.casts.get(&memref) {
                        let value = self.widen(value, &mut out);
                        out.push(Op::Store { value, memref: cast, index: self.index(memref, &index)? });
                    } else if self.vectors.contains(&value) {
                        return Err(VectError::Unsupported(format!("store of a vector into scalar memref {memref}")));
                    } else {
                        out.push(Op::Store { value, memref, index });
                    }
                }
                Op::Binary { result, kind, lhs, rhs } => {
                    if self.vectors.contains(&lhs) || self.vectors.contains(&rhs) {
                        let lhs = self.widen(lhs, &mut out);
                        let rhs = self.widen(rhs, &mut out);
                        let ty = self.vec_ty(result);
                        self.f.values[result.index()] = Type::Elem(ty);
                        self.vectors.insert(result);
                        out.push(Op::Binary { result, kind, lhs, rhs });
                    } else {
                        out.push(Op::Binary { result, kind, lhs, rhs });
                    }
                }
                Op::Fma { result, a, b, c } => {
                    if [a, b, c].iter().any(|v| self.vectors.contains(v)) {
                        let a = self.widen(a, &mut out);
                        let b = self.widen(b, &mut out);
                        let c = self.widen(c, &mut out);
                        let ty = self.vec_ty(result);
                        self.f.values[result.index()] = Type::Elem(ty);
                        self.vectors.insert(result);
                        out.push(Op::Fma { result, a, b, c });
                    } else {
                        out.push(Op::Fma { result, a, b, c });
                    }
                }
                Op::For(mut fo) => {
                    fo.body = self.block(fo.body)?;
                    out.push(Op::For(fo));
                }
                Op::Splat { .. } => {
                    return Err(VectError::Unsupported("loop is already vectorized".into()));
                }
                other => out.push(other),
            }
        }
        Ok(out)
    }
}
