use std::collections::HashSet;
use std::fmt;

use super::map::check_expr;
use super::ops::{CallArg, Function, Op, OperandMap, ValueId};
use super::print::op_summary;
use super::types::{ElementKind, MemRefType, Type};

/// A verification failure located at an op.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    /// Position path such as `2.0.1` (index of the op in each nested region).
    pub path: String,
    pub op: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "op {} `{}`: {}", self.path, self.op, self.message)
        }
    }
}

/// Checks structural and type invariants. An empty result means the
/// function is well formed.
pub fn verify(func: &Function) -> Vec<Diagnostic> {
    let mut v = Verifier {
        f: func,
        out: Vec::new(),
        defined: HashSet::new(),
        visible: HashSet::new(),
        scopes: vec![Vec::new()],
    };
    for &a in &func.args {
        if a.index() >= func.values.len() {
            v.global(format!("argument {a} has no type"));
            continue;
        }
        match func.ty(a) {
            Type::MemRef(t) => v.check_memref_type(t, &format!("argument {a}")),
            t => v.global(format!("argument {a} has non-memref type {t}")),
        }
        v.define(a, "");
    }
    v.region(&func.body, "");
    v.out
}

struct Verifier<'a> {
    f: &'a Function,
    out: Vec<Diagnostic>,
    defined: HashSet<ValueId>,
    visible: HashSet<ValueId>,
    scopes: Vec<Vec<ValueId>>,
}

impl Verifier<'_> {
    fn global(&mut self, message: String) {
        self.out.push(Diagnostic { path: String::new(), op: String::new(), message });
    }

    fn diag(&mut self, path: &str, op: &Op, message: String) {
        let summary = op_summary(self.f, op);
        self.out.push(Diagnostic { path: path.to_string(), op: summary, message });
    }

    fn define(&mut self, v: ValueId, path: &str) {
        if !self.defined.insert(v) {
            self.out.push(Diagnostic {
                path: path.to_string(),
                op: String::new(),
                message: format!("{v} defined more than once"),
            });
        }
        self.scopes.last_mut().unwrap().push(v);
        self.visible.insert(v);
    }

    fn visible(&self, v: ValueId) -> bool {
        self.visible.contains(&v)
    }

    fn ty(&self, v: ValueId) -> Option<&Type> {
        self.f.values.get(v.index())
    }

    fn region(&mut self, ops: &[Op], prefix: &str) {
        for (i, op) in ops.iter().enumerate() {
            let path = if prefix.is_empty() { i.to_string() } else { format!("{prefix}.{i}") };
            self.op(op, &path);
        }
    }

    fn check_map(&mut self, path: &str, op: &Op, m: &OperandMap, what: &str) {
        let mut msgs = Vec::new();
        for e in &m.map.results {
            check_expr(e, m.operands.len(), 0, &mut msgs);
        }
        if m.map.num_dims != m.operands.len() {
            msgs.push(format!("map has {} dims for {} operands", m.map.num_dims, m.operands.len()));
        }
        for &o in &m.operands {
            match self.ty(o) {
                Some(Type::Index) => {}
                Some(t) => msgs.push(format!("operand {o} of type {t} used as index")),
                None => msgs.push(format!("operand {o} is undefined")),
            }
            if !self.visible(o) {
                msgs.push(format!("operand {o} does not dominate its use"));
            }
        }
        for m in msgs {
            self.diag(path, op, format!("{what}: {m}"));
        }
    }

    fn use_memref(&mut self, path: &str, op: &Op, v: ValueId) -> Option<MemRefType> {
        match self.ty(v) {
            Some(Type::MemRef(t)) => Some(t.clone()),
            Some(t) => {
                self.diag(path, op, format!("{v} has type {t}, expected a memref"));
                None
            }
            None => None,
        }
    }

    fn elem_of(&self, v: ValueId) -> Option<ElementKind> {
        self.ty(v).and_then(Type::as_elem)
    }

    fn check_memref_type(&mut self, t: &MemRefType, what: &str) {
        let mut msgs = Vec::new();
        if t.layout.num_dims != t.rank() {
            msgs.push(format!("layout has {} dims for rank {}", t.layout.num_dims, t.rank()));
        }
        if t.layout.num_symbols != 0 {
            msgs.push("layout maps may not use symbols".to_string());
        }
        if t.shape.iter().any(|&s| s < 1) {
            msgs.push("extents must be positive".to_string());
        }
        if !t.alignment.is_power_of_two() {
            msgs.push(format!("alignment {} is not a power of two", t.alignment));
        }
        msgs.extend(t.layout.check());
        if msgs.is_empty() {
            if let Err(e) = t.physical_shape() {
                msgs.push(e);
            } else if t.layout_is_injective() == Some(false) {
                msgs.push(format!("layout {} is not injective", t.layout));
            }
        }
        for m in msgs {
            self.global(format!("{what} {t}: {m}"));
        }
    }

    fn op(&mut self, op: &Op, path: &str) {
        for v in op.value_operands() {
            if self.ty(v).is_none() {
                self.diag(path, op, format!("{v} is undefined"));
            } else if !self.visible(v) {
                self.diag(path, op, format!("{v} does not dominate its use"));
            }
        }
        if let Some(r) = op.result() {
            if self.ty(r).is_none() {
                self.diag(path, op, format!("result {r} has no type"));
                return;
            }
        }
        match op {
            Op::For(fo) => {
                self.check_map(path, op, &fo.lower, "lower bound");
                self.check_map(path, op, &fo.upper, "upper bound");
                if fo.lower.is_empty() || fo.upper.is_empty() {
                    self.diag(path, op, "loop bounds must have at least one expression".into());
                }
                if fo.step < 1 {
                    self.diag(path, op, format!("step {} must be at least 1", fo.step));
                }
                if fo.lower.uses(fo.iv) || fo.upper.uses(fo.iv) {
                    self.diag(path, op, "loop bounds reference the loop's own induction variable".into());
                }
                if self.ty(fo.iv) != Some(&Type::Index) {
                    self.diag(path, op, format!("induction variable {} is not index-typed", fo.iv));
                }
                self.scopes.push(Vec::new());
                self.define(fo.iv, path);
                self.region(&fo.body, path);
                for v in self.scopes.pop().unwrap() {
                    self.visible.remove(&v);
                }
                return;
            }
            Op::Load { result, memref, index } => {
                self.check_map(path, op, index, "access");
                if let Some(t) = self.use_memref(path, op, *memref) {
                    if index.len() != t.rank() {
                        self.diag(path, op, format!("access has {} indices for rank-{} memref", index.len(), t.rank()));
                    }
                    if self.elem_of(*result) != Some(t.element) {
                        self.diag(path, op, format!("result type {} differs from element type {}", self.f.ty(*result), t.element));
                    }
                }
            }
            Op::Store { value, memref, index } => {
                self.check_map(path, op, index, "access");
                if let Some(t) = self.use_memref(path, op, *memref) {
                    if index.len() != t.rank() {
                        self.diag(path, op, format!("access has {} indices for rank-{} memref", index.len(), t.rank()));
                    }
                    if self.elem_of(*value) != Some(t.element) {
                        self.diag(path, op, format!("stored value type differs from element type {}", t.element));
                    }
                }
            }
            Op::Binary { result, lhs, rhs, .. } => self.same_elem(path, op, &[*result, *lhs, *rhs]),
            Op::Fma { result, a, b, c } => self.same_elem(path, op, &[*result, *a, *b, *c]),
            Op::Splat { result, scalar } => match (self.elem_of(*scalar), self.elem_of(*result)) {
                (Some(ElementKind::Scalar(s)), Some(ElementKind::Vector { scalar, .. })) if s == scalar => {}
                _ => self.diag(path, op, "splat must broadcast a scalar into a vector of the same kind".into()),
            },
            Op::ShapeCast { result, source } => {
                let (src, dst) = (self.use_memref(path, op, *source), self.use_memref(path, op, *result));
                if let (Some(s), Some(d)) = (src, dst) {
                    if !s.has_identity_layout() || !d.has_identity_layout() {
                        self.diag(path, op, "shape cast requires identity layouts".into());
                    }
                    if s.element.scalar_kind() != d.element.scalar_kind() {
                        self.diag(path, op, "shape cast changes the scalar kind".into());
                    }
                    let count = |t: &MemRefType| t.num_elements() * t.element.lanes() as i64;
                    if count(&s) != count(&d) {
                        self.diag(path, op, format!("shape cast changes the scalar count ({} vs {})", count(&s), count(&d)));
                    }
                }
            }
            Op::Alloc { result } => {
                if let Some(t) = self.use_memref(path, op, *result) {
                    self.check_memref_type(&t, &format!("alloc {result}"));
                }
            }
            Op::Dealloc { memref } => {
                self.use_memref(path, op, *memref);
            }
            Op::Constant { result, .. } => {
                if !matches!(self.elem_of(*result), Some(ElementKind::Scalar(_))) {
                    self.diag(path, op, "constant must have a scalar type".into());
                }
            }
            Op::Call { args, .. } => {
                for a in args {
                    match a {
                        CallArg::Element { memref, index } => {
                            self.check_map(path, op, index, "call argument");
                            if let Some(t) = self.use_memref(path, op, *memref) {
                                if index.len() != t.rank() {
                                    self.diag(path, op, format!("call argument has {} indices for rank-{} memref", index.len(), t.rank()));
                                }
                            }
                        }
                        CallArg::Index(m) => {
                            self.check_map(path, op, m, "call argument");
                            if m.len() != 1 {
                                self.diag(path, op, "index call argument must have one expression".into());
                            }
                        }
                    }
                }
            }
            Op::Matmul { a, b, c, params } => {
                if let Err(e) = params.check() {
                    self.diag(path, op, e);
                }
                let ts = [*a, *b, *c].map(|v| self.use_memref(path, op, v));
                if let [Some(ta), Some(tb), Some(tc)] = ts {
                    if ta.rank() != 2 || tb.rank() != 2 || tc.rank() != 2 {
                        self.diag(path, op, "matmul operands must be rank 2".into());
                    } else if ta.shape[1] != tb.shape[0] || tc.shape[0] != ta.shape[0] || tc.shape[1] != tb.shape[1] {
                        self.diag(
                            path,
                            op,
                            format!(
                                "shape mismatch: A {}x{}, B {}x{}, C {}x{}",
                                ta.shape[0], ta.shape[1], tb.shape[0], tb.shape[1], tc.shape[0], tc.shape[1]
                            ),
                        );
                    }
                    if ta.element != tb.element || tb.element != tc.element {
                        self.diag(path, op, "matmul operands must share an element type".into());
                    }
                }
            }
        }
        if let Some(r) = op.result() {
            self.define(r, path);
        }
    }

    fn same_elem(&mut self, path: &str, op: &Op, vals: &[ValueId]) {
        let kinds: Vec<Option<ElementKind>> = vals.iter().map(|&v| self.elem_of(v)).collect();
        if kinds.iter().any(Option::is_none) || kinds.windows(2).any(|w| w[0] != w[1]) {
            self.diag(path, op, "operands and result must share one element type".into());
        }
    }
}
