//! Replacing the innermost register-tile nest of a tiled, packed GEMM by a
//! call to a registered microkernel.

use crate::ir::{AffineExpr, CallArg, ElementKind, ForOp, Function, Op, OperandMap, ValueId};
use crate::scalar::Scalar;

use super::microkernel::KernelRegistry;
use super::ExecError;

/// The three innermost loops `k { x { y { body } } }` of a GEMM nest.
struct KernelNest<'a> {
    k: &'a ForOp,
    i: &'a ForOp,
    j: &'a ForOp,
    a: (ValueId, &'a OperandMap),
    b: (ValueId, &'a OperandMap),
    c: (ValueId, &'a OperandMap),
}

fn match_nest(k: &ForOp) -> Option<KernelNest<'_>> {
    let [Op::For(x)] = &k.body[..] else { return None };
    let [Op::For(y)] = &x.body[..] else { return None };
    let mut loads = Vec::new();
    let mut fma = None;
    let mut store = None;
    for op in &y.body {
        match op {
            Op::Load { result, memref, index } => loads.push((*result, *memref, index)),
            Op::Fma { a, b, c, result } if fma.is_none() => fma = Some((*a, *b, *c, *result)),
            Op::Store { value, memref, index } if store.is_none() => store = Some((*value, *memref, index)),
            _ => return None,
        }
    }
    let (fa, fb, fc, fr) = fma?;
    let (sv, sm, si) = store?;
    if loads.len() != 3 || sv != fr {
        return None;
    }
    let find = |v: ValueId| loads.iter().find(|l| l.0 == v).map(|l| (l.1, l.2));
    let (am, ai) = find(fa)?;
    let (bm, bi) = find(fb)?;
    let (cm, ci) = find(fc)?;
    if cm != sm || ci != si {
        return None;
    }
    let exprs = ci.value_exprs();
    let uses = |l: &ForOp, d: usize| exprs.get(d).is_some_and(|e| e.uses_dim(l.iv.index()));
    let (i, j) = if uses(x, 0) && uses(y, 1) {
        (x, y)
    } else if uses(y, 0) && uses(x, 1) {
        (y, x)
    } else {
        return None;
    };
    Some(KernelNest { k, i, j, a: (am, ai), b: (bm, bi), c: (cm, ci) })
}

fn lower_of(l: &ForOp) -> Result<AffineExpr, ExecError> {
    match &l.lower.value_exprs()[..] {
        [e] => Ok(e.clone()),
        _ => Err(ExecError::Unsupported(format!("loop {} has a compound lower bound", l.iv))),
    }
}

/// Index of an access with the kernel loops at their first iteration.
fn at_origin(index: &OperandMap, n: &KernelNest<'_>) -> Result<Vec<AffineExpr>, ExecError> {
    let mut m = index.clone();
    for l in [n.k, n.i, n.j] {
        m = m.substitute(l.iv, &lower_of(l)?);
    }
    Ok(m.value_exprs())
}

/// Replaces each `K_C x M_R x N_R` nest whose packed operands match a
/// registered kernel's layouts with a call to that kernel.
pub fn map_to_microkernel<T: Scalar>(func: &Function, registry: &KernelRegistry<T>) -> Result<Function, ExecError> {
    let mut sites: Vec<(ValueId, Op)> = Vec::new();
    let mut error = None;
    func.walk(|op| {
        let Op::For(k) = op else { return };
        let Some(n) = match_nest(k) else { return };
        match build_call(func, registry, &n) {
            Ok(call) => sites.push((k.iv, call)),
            Err(e) => error = error.take().or(Some(e)),
        }
    });
    if let Some(e) = error {
        return Err(e);
    }
    if sites.is_empty() {
        return Err(ExecError::Unsupported("no register-tile nest to map onto a microkernel".into()));
    }
    let mut f = func.clone();
    for (iv, call) in sites {
        f.with_loop_region(iv, |region, pos| region[pos] = call);
    }
    Ok(f)
}

fn build_call<T: Scalar>(func: &Function, registry: &KernelRegistry<T>, n: &KernelNest<'_>) -> Result<Op, ExecError> {
    let trip = |l: &ForOp| {
        l.const_trip_count()
            .filter(|_| l.step == 1)
            .ok_or_else(|| ExecError::Unsupported(format!("loop {} has no constant unit-step trip count", l.iv)))
    };
    let (kc, mr, nr) = (trip(n.k)?, trip(n.i)?, trip(n.j)?);
    let kernel = registry
        .find(mr, nr, kc)
        .ok_or_else(|| ExecError::Kernel(format!("no kernel registered for M_R = {mr}, N_R = {nr}, K_C = {kc}")))?;
    let ty = |v: ValueId| func.memref_ty(v).expect("memref operand");
    let (a_ty, b_ty, c_ty) = (ty(n.a.0), ty(n.b.0), ty(n.c.0));
    for t in [a_ty, b_ty, c_ty] {
        if t.element != ElementKind::Scalar(T::KIND) || t.rank() != 2 {
            return Err(ExecError::Type(format!("kernel {} cannot take {t}", kernel.name)));
        }
    }
    if a_ty.layout != kernel.lhs_layout() || a_ty.shape[1] != kc {
        return Err(ExecError::Layout(format!("LHS buffer {a_ty} is not a packed {mr}-row panel of depth {kc}")));
    }
    if !b_ty.has_identity_layout() || b_ty.shape[1] != nr {
        return Err(ExecError::Layout(format!("RHS buffer {b_ty} is not a row-major {kc}x{nr} panel")));
    }
    if !c_ty.has_identity_layout() {
        return Err(ExecError::Layout(format!("output {c_ty} must have an identity layout")));
    }
    let a0 = at_origin(n.a.1, n)?;
    let b0 = at_origin(n.b.1, n)?;
    let c0 = at_origin(n.c.1, n)?;
    let zero = |e: &AffineExpr| e.simplify().as_const() == Some(0);
    if !zero(&a0[1]) || !zero(&b0[1]) || !zero(&b0[0]) {
        return Err(ExecError::Layout("kernel panels must start at the first packed row and column".into()));
    }
    let unit = |idx: &OperandMap, d: usize, l: &ForOp| {
        let e = idx.value_exprs()[d].clone();
        let moved = e.substitute_dim(l.iv.index(), &(AffineExpr::Dim(l.iv.index()) + 1));
        (moved - e).simplify().as_const() == Some(1)
    };
    if !(unit(n.a.1, 0, n.i) && unit(n.a.1, 1, n.k) && unit(n.b.1, 0, n.k) && unit(n.b.1, 1, n.j)) {
        return Err(ExecError::Layout("panel accesses must advance by one element per iteration".into()));
    }
    Ok(Op::Call {
        callee: kernel.name.clone(),
        args: vec![
            CallArg::Element { memref: n.a.0, index: OperandMap::from_value_exprs(&a0) },
            CallArg::Element { memref: n.b.0, index: OperandMap::from_value_exprs(&b0) },
            CallArg::Element { memref: n.c.0, index: OperandMap::constant(&[0, 0]) },
            CallArg::Index(OperandMap::from_value_exprs(&c0[..1])),
            CallArg::Index(OperandMap::from_value_exprs(&c0[1..])),
            CallArg::Index(OperandMap::constant(&[c_ty.shape[1]])),
        ],
    })
}
