use std::collections::HashMap;
use std::fmt;

use super::expr::AffineExpr;
use super::map::AffineMap;
use super::types::{MemRefType, Type};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub u32);

impl ValueId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

/// An affine map applied to index-typed SSA operands: `Dim(i)` of the map
/// refers to `operands[i]`.
///
/// Maps built through [`OperandMap::from_value_exprs`] are canonical: results
/// are simplified and operands appear once each, in order of first use.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OperandMap {
    pub map: AffineMap,
    pub operands: Vec<ValueId>,
}

impl OperandMap {
    pub fn constant(values: &[i64]) -> Self {
        OperandMap { map: AffineMap::constant(values), operands: vec![] }
    }

    /// Builds from expressions whose `Dim(n)` denotes `ValueId(n)`.
    pub fn from_value_exprs(exprs: &[AffineExpr]) -> Self {
        let simplified: Vec<AffineExpr> = exprs.iter().map(AffineExpr::simplify).collect();
        let mut order = Vec::new();
        for e in &simplified {
            e.dims_in_order(&mut order);
        }
        let pos: HashMap<usize, usize> = order.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let results = simplified.iter().map(|e| e.replace_dims(&|v| AffineExpr::Dim(pos[&v]))).collect();
        OperandMap {
            map: AffineMap::new(order.len(), 0, results),
            operands: order.into_iter().map(|v| ValueId(v as u32)).collect(),
        }
    }

    /// Expressions whose `Dim(n)` denotes `ValueId(n)`.
    pub fn value_exprs(&self) -> Vec<AffineExpr> {
        self.map
            .results
            .iter()
            .map(|e| e.replace_dims(&|i| AffineExpr::Dim(self.operands[i].index())))
            .collect()
    }

    pub fn value_expr(&self, i: usize) -> AffineExpr {
        self.map.results[i].replace_dims(&|d| AffineExpr::Dim(self.operands[d].index()))
    }

    pub fn len(&self) -> usize {
        self.map.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.results.is_empty()
    }

    pub fn uses(&self, v: ValueId) -> bool {
        self.operands.contains(&v)
    }

    /// Replaces operand `v` by the value-expression `with`.
    pub fn substitute(&self, v: ValueId, with: &AffineExpr) -> OperandMap {
        if !self.uses(v) {
            return self.clone();
        }
        let exprs: Vec<AffineExpr> = self
            .value_exprs()
            .iter()
            .map(|e| e.substitute_dim(v.index(), with))
            .collect();
        OperandMap::from_value_exprs(&exprs)
    }

    pub fn rename(&self, f: &impl Fn(ValueId) -> ValueId) -> OperandMap {
        OperandMap { map: self.map.clone(), operands: self.operands.iter().map(|&v| f(v)).collect() }
    }

    /// Constant results, when every result is constant.
    pub fn constants(&self) -> Option<Vec<i64>> {
        self.map.results.iter().map(|e| e.simplify().as_const()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryKind {
    Add,
    Mul,
}

impl BinaryKind {
    pub fn mnemonic(self) -> &'static str {
        match self {
            BinaryKind::Add => "addf",
            BinaryKind::Mul => "mulf",
        }
    }
}

/// Intra-register-tile loop order: `JI` keeps `i` innermost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum InnerPerm {
    #[default]
    JI,
    IJ,
}

impl fmt::Display for InnerPerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InnerPerm::JI => "ji",
            InnerPerm::IJ => "ij",
        })
    }
}

impl std::str::FromStr for InnerPerm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ji" => Ok(InnerPerm::JI),
            "ij" => Ok(InnerPerm::IJ),
            _ => Err(format!("unknown permutation `{s}` (expected ji or ij)")),
        }
    }
}

/// Cache and register tile sizes carried by the high-level matmul.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TileParams {
    pub mc: i64,
    pub kc: i64,
    pub mr: i64,
    pub nr: i64,
    pub ku: i64,
    pub perm: InnerPerm,
}

impl TileParams {
    pub fn new(mc: i64, kc: i64, mr: i64, nr: i64, ku: i64) -> Self {
        TileParams { mc, kc, mr, nr, ku, perm: InnerPerm::JI }
    }

    pub fn with_perm(mut self, perm: InnerPerm) -> Self {
        self.perm = perm;
        self
    }

    /// Basic invariants: positive sizes and `mr | mc`.
    pub fn check(&self) -> Result<(), String> {
        for (name, v) in [("M_C", self.mc), ("K_C", self.kc), ("M_R", self.mr), ("N_R", self.nr), ("K_U", self.ku)] {
            if v < 1 {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.mc % self.mr != 0 {
            return Err(format!("M_R = {} does not divide M_C = {}", self.mr, self.mc));
        }
        Ok(())
    }
}

impl fmt::Display for TileParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{mc = {}, kc = {}, mr = {}, nr = {}, ku = {}, perm = {}}}",
            self.mc, self.kc, self.mr, self.nr, self.ku, self.perm
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForOp {
    pub iv: ValueId,
    /// Lower bound is the max of these results.
    pub lower: OperandMap,
    /// Upper bound (exclusive) is the min of these results.
    pub upper: OperandMap,
    pub step: i64,
    pub body: Vec<Op>,
}

/// An argument of an external kernel call.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CallArg {
    /// Pointer to the element at a logical index.
    Element { memref: ValueId, index: OperandMap },
    /// An integer computed from enclosing induction variables.
    Index(OperandMap),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    For(ForOp),
    Load { result: ValueId, memref: ValueId, index: OperandMap },
    Store { value: ValueId, memref: ValueId, index: OperandMap },
    Binary { result: ValueId, kind: BinaryKind, lhs: ValueId, rhs: ValueId },
    /// `a * b + c`
    Fma { result: ValueId, a: ValueId, b: ValueId, c: ValueId },
    Splat { result: ValueId, scalar: ValueId },
    ShapeCast { result: ValueId, source: ValueId },
    Alloc { result: ValueId },
    Dealloc { memref: ValueId },
    Constant { result: ValueId, value: f64 },
    Call { callee: String, args: Vec<CallArg> },
    Matmul { a: ValueId, b: ValueId, c: ValueId, params: TileParams },
}

impl Op {
    pub fn result(&self) -> Option<ValueId> {
        match self {
            Op::Load { result, .. }
            | Op::Binary { result, .. }
            | Op::Fma { result, .. }
            | Op::Splat { result, .. }
            | Op::ShapeCast { result, .. }
            | Op::Alloc { result }
            | Op::Constant { result, .. } => Some(*result),
            _ => None,
        }
    }

    /// Non-index SSA operands (values and memrefs).
    pub fn value_operands(&self) -> Vec<ValueId> {
        match self {
            Op::For(_) => vec![],
            Op::Load { memref, .. } => vec![*memref],
            Op::Store { value, memref, .. } => vec![*value, *memref],
            Op::Binary { lhs, rhs, .. } => vec![*lhs, *rhs],
            Op::Fma { a, b, c, .. } => vec![*a, *b, *c],
            Op::Splat { scalar, .. } => vec![*scalar],
            Op::ShapeCast { source, .. } => vec![*source],
            Op::Alloc { .. } | Op::Constant { .. } => vec![],
            Op::Dealloc { memref } => vec![*memref],
            Op::Call { args, .. } => args
                .iter()
                .filter_map(|a| match a {
                    CallArg::Element { memref, .. } => Some(*memref),
                    CallArg::Index(_) => None,
                })
                .collect(),
            Op::Matmul { a, b, c, .. } => vec![*a, *b, *c],
        }
    }

    /// Affine operand maps attached to the op (not including nested regions).
    pub fn operand_maps(&self) -> Vec<&OperandMap> {
        match self {
            Op::For(f) => vec![&f.lower, &f.upper],
            Op::Load { index, .. } | Op::Store { index, .. } => vec![index],
            Op::Call { args, .. } => args
                .iter()
                .map(|a| match a {
                    CallArg::Element { index, .. } => index,
                    CallArg::Index(m) => m,
                })
                .collect(),
            _ => vec![],
        }
    }

    pub fn operand_maps_mut(&mut self) -> Vec<&mut OperandMap> {
        match self {
            Op::For(f) => vec![&mut f.lower, &mut f.upper],
            Op::Load { index, .. } | Op::Store { index, .. } => vec![index],
            Op::Call { args, .. } => args
                .iter_mut()
                .map(|a| match a {
                    CallArg::Element { index, .. } => index,
                    CallArg::Index(m) => m,
                })
                .collect(),
            _ => vec![],
        }
    }

    /// Renames every value reference and definition in the op (recursively).
    pub fn rename_all(&mut self, f: &impl Fn(ValueId) -> ValueId) {
        match self {
            Op::For(fo) => {
                fo.iv = f(fo.iv);
                fo.lower = fo.lower.rename(f);
                fo.upper = fo.upper.rename(f);
                for op in &mut fo.body {
                    op.rename_all(f);
                }
            }
            Op::Load { result, memref, index } => {
                *result = f(*result);
                *memref = f(*memref);
                *index = index.rename(f);
            }
            Op::Store { value, memref, index } => {
                *value = f(*value);
                *memref = f(*memref);
                *index = index.rename(f);
            }
            Op::Binary { result, lhs, rhs, .. } => {
                *result = f(*result);
                *lhs = f(*lhs);
                *rhs = f(*rhs);
            }
            Op::Fma { result, a, b, c } => {
                *result = f(*result);
                *a = f(*a);
                *b = f(*b);
                *c = f(*c);
            }
            Op::Splat { result, scalar } => {
                *result = f(*result);
                *scalar = f(*scalar);
            }
            Op::ShapeCast { result, source } => {
                *result = f(*result);
                *source = f(*source);
            }
            Op::Alloc { result } | Op::Constant { result, .. } => *result = f(*result),
            Op::Dealloc { memref } => *memref = f(*memref),
            Op::Call { args, .. } => {
                for a in args {
                    match a {
                        CallArg::Element { memref, index } => {
                            *memref = f(*memref);
                            *index = index.rename(f);
                        }
                        CallArg::Index(m) => *m = m.rename(f),
                    }
                }
            }
            Op::Matmul { a, b, c, .. } => {
                *a = f(*a);
                *b = f(*b);
                *c = f(*c);
            }
        }
    }

    /// Renames value uses (not definitions), including nested regions.
    pub fn replace_uses(&mut self, f: &impl Fn(ValueId) -> ValueId) {
        match self {
            Op::For(fo) => {
                fo.lower = fo.lower.rename(f);
                fo.upper = fo.upper.rename(f);
                for op in &mut fo.body {
                    op.replace_uses(f);
                }
            }
            Op::Load { memref, index, .. } => {
                *memref = f(*memref);
                *index = index.rename(f);
            }
            Op::Store { value, memref, index } => {
                *value = f(*value);
                *memref = f(*memref);
                *index = index.rename(f);
            }
            Op::Binary { lhs, rhs, .. } => {
                *lhs = f(*lhs);
                *rhs = f(*rhs);
            }
            Op::Fma { a, b, c, .. } => {
                *a = f(*a);
                *b = f(*b);
                *c = f(*c);
            }
            Op::Splat { scalar, .. } => *scalar = f(*scalar),
            Op::ShapeCast { source, .. } => *source = f(*source),
            Op::Alloc { .. } | Op::Constant { .. } => {}
            Op::Dealloc { memref } => *memref = f(*memref),
            Op::Call { args, .. } => {
                for a in args {
                    match a {
                        CallArg::Element { memref, index } => {
                            *memref = f(*memref);
                            *index = index.rename(f);
                        }
                        CallArg::Index(m) => *m = m.rename(f),
                    }
                }
            }
            Op::Matmul { a, b, c, .. } => {
                *a = f(*a);
                *b = f(*b);
                *c = f(*c);
            }
        }
    }

    /// Substitutes an index value by an expression in every affine map, recursively.
    pub fn substitute_index(&mut self, v: ValueId, with: &AffineExpr) {
        for m in self.operand_maps_mut() {
            *m = m.substitute(v, with);
        }
        if let Op::For(fo) = self {
            for op in &mut fo.body {
                op.substitute_index(v, with);
            }
        }
    }

    pub fn is_loop(&self) -> bool {
        matches!(self, Op::For(_))
    }

    pub fn as_for(&self) -> Option<&ForOp> {
        match self {
            Op::For(f) => Some(f),
            _ => None,
        }
    }

    pub fn as_for_mut(&mut self) -> Option<&mut ForOp> {
        match self {
            Op::For(f) => Some(f),
            _ => None,
        }
    }

    /// Pre-order walk over this op and nested ops.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Op)) {
        f(self);
        if let Op::For(fo) = self {
            for op in &fo.body {
                op.walk(f);
            }
        }
    }

    /// True if the op or any nested op touches `memref`.
    pub fn accesses(&self, memref: ValueId) -> bool {
        let mut hit = false;
        self.walk(&mut |op| match op {
            Op::Load { memref: m, .. } | Op::Store { memref: m, .. } => hit |= *m == memref,
            Op::Call { .. } => hit |= op.value_operands().contains(&memref),
            _ => {}
        });
        hit
    }
}

/// A function: memref arguments, a value-type table and a body.
#[derive(Clone, Debug, PartialEq)]
pub struct Function {
    pub name: String,
    pub args: Vec<ValueId>,
    /// Types indexed by `ValueId`.
    pub values: Vec<Type>,
    pub body: Vec<Op>,
}

impl Function {
    pub fn new(name: impl Into<String>) -> Self {
        Function { name: name.into(), args: vec![], values: vec![], body: vec![] }
    }

    pub fn new_value(&mut self, ty: Type) -> ValueId {
        self.values.push(ty);
        ValueId(self.values.len() as u32 - 1)
    }

    pub fn add_arg(&mut self, ty: MemRefType) -> ValueId {
        let v = self.new_value(Type::MemRef(ty));
        self.args.push(v);
        v
    }

    pub fn ty(&self, v: ValueId) -> &Type {
        &self.values[v.index()]
    }

    pub fn memref_ty(&self, v: ValueId) -> Option<&MemRefType> {
        self.values.get(v.index()).and_then(Type::as_memref)
    }

    pub fn walk<'a>(&'a self, mut f: impl FnMut(&'a Op)) {
        for op in &self.body {
            op.walk(&mut f);
        }
    }

    /// Renumbers values in definition order (arguments first, then a
    /// pre-order walk) and drops unused type entries.
    pub fn canonicalize(&self) -> Function {
        let mut map: HashMap<ValueId, ValueId> = HashMap::new();
        let mut values = Vec::new();
        let mut define = |v: ValueId, map: &mut HashMap<ValueId, ValueId>| {
            if let std::collections::hash_map::Entry::Vacant(e) = map.entry(v) {
                e.insert(ValueId(values.len() as u32));
                values.push(self.values[v.index()].clone());
            }
        };
        for &a in &self.args {
            define(a, &mut map);
        }
        self.walk(|op| {
            if let Some(r) = op.result() {
                define(r, &mut map);
            }
            if let Op::For(f) = op {
                define(f.iv, &mut map);
            }
        });
        let rename = |v: ValueId| *map.get(&v).unwrap_or(&v);
        let mut body = self.body.clone();
        for op in &mut body {
            op.rename_all(&rename);
        }
        Function {
            name: self.name.clone(),
            args: self.args.iter().map(|&a| rename(a)).collect(),
            values,
            body,
        }
    }

    /// Equality up to renaming of SSA values.
    pub fn structurally_eq(&self, other: &Function) -> bool {
        self.canonicalize() == other.canonicalize()
    }

    /// Clones `ops` with fresh definitions for every value defined inside,
    /// applying `remap` to uses of values defined outside.
    pub fn clone_ops(&mut self, ops: &[Op], remap: &HashMap<ValueId, ValueId>) -> Vec<Op> {
        let mut local = remap.clone();
        let mut defs = Vec::new();
        for op in ops {
            op.walk(&mut |o| {
                if let Some(r) = o.result() {
                    defs.push(r);
                }
                if let Op::For(f) = o {
                    defs.push(f.iv);
                }
            });
        }
        for d in defs {
            let ty = self.ty(d).clone();
            let nv = self.new_value(ty);
            local.insert(d, nv);
        }
        let f = |v: ValueId| *local.get(&v).unwrap_or(&v);
        ops.iter()
            .map(|op| {
                let mut op = op.clone();
                op.rename_all(&f);
                op
            })
            .collect()
    }

    /// Iv of every loop, in pre-order.
    pub fn loop_ivs(&self) -> Vec<ValueId> {
        let mut out = Vec::new();
        self.walk(|op| {
            if let Op::For(f) = op {
                out.push(f.iv);
            }
        });
        out
    }

    pub fn find_loop(&self, iv: ValueId) -> Option<&ForOp> {
        let mut found = None;
        self.walk(|op| {
            if let Op::For(f) = op {
                if f.iv == iv {
                    found = Some(f);
                }
            }
        });
        found
    }

    pub fn find_loop_mut(&mut self, iv: ValueId) -> Option<&mut ForOp> {
        fn go(region: &mut [Op], iv: ValueId) -> Option<&mut ForOp> {
            for op in region {
                if let Op::For(f) = op {
                    if f.iv == iv {
                        return Some(f);
                    }
                    if let Some(r) = go(&mut f.body, iv) {
                        return Some(r);
                    }
                }
            }
            None
        }
        go(&mut self.body, iv)
    }

    /// Applies `f` to the region (op list) that directly contains the loop
    /// with induction variable `iv`, passing the loop's position.
    pub fn with_loop_region<R>(
        &mut self,
        iv: ValueId,
        f: impl FnOnce(&mut Vec<Op>, usize) -> R,
    ) -> Option<R> {
        fn go<R>(
            region: &mut Vec<Op>,
            iv: ValueId,
            f: &mut Option<impl FnOnce(&mut Vec<Op>, usize) -> R>,
        ) -> Option<R> {
            if let Some(pos) = region.iter().position(|op| matches!(op, Op::For(fo) if fo.iv == iv)) {
                return Some((f.take().unwrap())(region, pos));
            }
            for op in region.iter_mut() {
                if let Op::For(fo) = op {
                    if let Some(r) = go(&mut fo.body, iv, f) {
                        return Some(r);
                    }
                }
            }
            None
        }
        let mut f = Some(f);
        go(&mut self.body, iv, &mut f)
    }

    /// Ivs of the loops enclosing the loop `iv`, outermost first.
    pub fn enclosing_ivs(&self, iv: ValueId) -> Option<Vec<ValueId>> {
        fn go(region: &[Op], iv: ValueId, stack: &mut Vec<ValueId>) -> bool {
            for op in region {
                if let Op::For(f) = op {
                    if f.iv == iv {
                        return true;
                    }
                    stack.push(f.iv);
                    if go(&f.body, iv, stack) {
                        return true;
                    }
                    stack.pop();
                }
            }
            false
        }
        let mut stack = vec![];
        go(&self.body, iv, &mut stack).then_some(stack)
    }
}

impl ForOp {
    /// Constant trip count when `upper - lower` is constant for every pair of
    /// bound results.
    pub fn const_trip_count(&self) -> Option<i64> {
        let lows = self.lower.value_exprs();
        let ups = self.upper.value_exprs();
        if lows.len() != 1 {
            let lo: Option<Vec<i64>> = lows.iter().map(|e| e.simplify().as_const()).collect();
            let hi: Option<Vec<i64>> = ups.iter().map(|e| e.simplify().as_const()).collect();
            let (lo, hi) = (lo?.into_iter().max()?, hi?.into_iter().min()?);
            return Some(super::expr::ceil_div((hi - lo).max(0), self.step));
        }
        let mut span: Option<i64> = None;
        for u in &ups {
            let d = (u.clone() - lows[0].clone()).simplify().as_const()?;
            span = Some(span.map_or(d, |s| s.min(d)));
        }
        Some(super::expr::ceil_div(span?.max(0), self.step))
    }
}
