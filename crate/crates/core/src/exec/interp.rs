//! Reference interpreter.
//!
//! The function is first lowered to a slot-addressed instruction tree, then
//! executed. Every memory access is bounds-checked against the logical shape
//! and the physical storage, and reported with the location of the op.

use crate::ir::print::op_summary;
use crate::ir::{AffineExpr, BinaryKind, CallArg, Function, MemRefType, Op, OperandMap, Type, ValueId};
use crate::scalar::Scalar;

use super::buffer::{AlignedVec, TensorBuffer};
use super::microkernel::{KernelFn, KernelRegistry};
use super::ExecError;

const MAX_RANK: usize = 8;
const MAX_LANES: usize = 64;

/// Hooks invoked during interpretation.
pub trait Observer<T> {
    fn on_load(&mut self, _memref: ValueId, _index: &[i64]) {}
    fn on_store(&mut self, _memref: ValueId, _index: &[i64], _value: &[T]) {}
    /// Called with the contents of a buffer just before it is freed.
    fn on_dealloc(&mut self, _memref: ValueId, _ty: &MemRefType, _data: &[T]) {}
}

pub struct NoObserver;

impl<T> Observer<T> for NoObserver {}

/// Runs `func` on `buffers` (one per argument, in order).
pub fn interpret<T: Scalar>(func: &Function, buffers: &mut [TensorBuffer<T>]) -> Result<(), ExecError> {
    Interpreter::new().run(func, buffers)
}

#[derive(Default)]
pub struct Interpreter<'k, T: Scalar> {
    kernels: Option<&'k KernelRegistry<T>>,
}

impl<'k, T: Scalar> Interpreter<'k, T> {
    pub fn new() -> Self {
        Interpreter { kernels: None }
    }

    pub fn with_kernels(mut self, kernels: &'k KernelRegistry<T>) -> Self {
        self.kernels = Some(kernels);
        self
    }

    pub fn run(&self, func: &Function, buffers: &mut [TensorBuffer<T>]) -> Result<(), ExecError> {
        self.run_observed(func, buffers, &mut NoObserver)
    }

    pub fn run_observed(
        &self,
        func: &Function,
        buffers: &mut [TensorBuffer<T>],
        obs: &mut impl Observer<T>,
    ) -> Result<(), ExecError> {
        let mut c = Compiler::<T> { f: func, slots: Vec::new(), n_idx: 0, n_reg: 0, n_mem: 0, kernels: self.kernels, locs: Vec::new() };
        c.assign_slots()?;
        let program = c.block(&func.body, "")?;
        if buffers.len() != func.args.len() {
            return Err(ExecError::Signature(format!(
                "function takes {} buffers, got {}",
                func.args.len(),
                buffers.len()
            )));
        }
        let mut m = Machine::<T> {
            idx: vec![0; c.n_idx],
            regs: vec![T::zero(); c.n_reg],
            mems: (0..c.n_mem).map(|_| Mem::dead()).collect(),
            locs: &c.locs,
            func,
        };
        for (i, (&a, buf)) in func.args.iter().zip(buffers.iter_mut()).enumerate() {
            let want = func.memref_ty(a).expect("verified argument");
            let have = buf.ty();
            if have.shape != want.shape || have.element != want.element || have.layout != want.layout {
                return Err(ExecError::Signature(format!("argument {i} expects {want}, got {have}")));
            }
            let Slot::Mem(s) = c.slots[a.index()].unwrap() else { unreachable!() };
            m.mems[s] = Mem::view(want, buf.as_mut_ptr(), buf.len(), a)?;
        }
        m.block(&program, obs)
    }
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Index(usize),
    Reg { off: usize, lanes: usize },
    Mem(usize),
}

#[derive(Clone, Debug)]
enum Node {
    Const(i64),
    Var(usize),
    Add(Box<Node>, Box<Node>),
    Mul(Box<Node>, i64),
    FloorDiv(Box<Node>, i64),
    Mod(Box<Node>, i64),
}

impl Node {
    #[inline]
    fn eval(&self, vars: &[i64]) -> i64 {
        match self {
            Node::Const(c) => *c,
            Node::Var(v) => vars[*v],
            Node::Add(l, r) => l.eval(vars) + r.eval(vars),
            Node::Mul(l, c) => l.eval(vars) * c,
            Node::FloorDiv(l, c) => l.eval(vars).div_euclid(*c),
            Node::Mod(l, c) => l.eval(vars).rem_euclid(*c),
        }
    }
}

/// An integer expression over index slots, with a fast linear form.
#[derive(Clone, Debug)]
enum IExpr {
    Lin(i64, Vec<(usize, i64)>),
    Tree(Node),
}

impl IExpr {
    #[inline]
    fn eval(&self, vars: &[i64]) -> i64 {
        match self {
            IExpr::Lin(c, terms) => terms.iter().fold(*c, |acc, &(v, k)| acc + vars[v] * k),
            IExpr::Tree(n) => n.eval(vars),
        }
    }
}

fn to_node(e: &AffineExpr, var: &impl Fn(usize) -> usize) -> Result<Node, String> {
    Ok(match e {
        AffineExpr::Dim(d) => Node::Var(var(*d)),
        AffineExpr::Symbol(s) => return Err(format!("unbound symbol s{s}")),
        AffineExpr::Const(c) => Node::Const(*c),
        AffineExpr::Add(l, r) => Node::Add(Box::new(to_node(l, var)?), Box::new(to_node(r, var)?)),
        AffineExpr::Mul(l, r) => {
            let (x, k) = match (l.simplify().as_const(), r.simplify().as_const()) {
                (_, Some(k)) => (l, k),
                (Some(k), None) => (r, k),
                _ => return Err(format!("non-affine product `{e}`")),
            };
            Node::Mul(Box::new(to_node(x, var)?), k)
        }
        AffineExpr::FloorDiv(l, c) => Node::FloorDiv(Box::new(to_node(l, var)?), *c),
        AffineExpr::Mod(l, c) => Node::Mod(Box::new(to_node(l, var)?), *c),
    })
}

struct Access {
    mem: usize,
    memref: ValueId,
    dims: Vec<IExpr>,
    loc: usize,
}

enum Instr<T> {
    For { iv: usize, lower: Vec<IExpr>, upper: Vec<IExpr>, step: i64, body: Vec<Instr<T>> },
    Load { dst: usize, lanes: usize, acc: Access },
    Store { src: usize, lanes: usize, acc: Access },
    Bin { kind: BinaryKind, dst: usize, a: usize, b: usize, lanes: usize },
    Fma { dst: usize, a: usize, b: usize, c: usize, lanes: usize },
    Splat { dst: usize, src: usize, lanes: usize },
    Cast { dst: usize, src: usize, ty: MemRefType, id: ValueId, loc: usize },
    Alloc { mem: usize, ty: MemRefType, id: ValueId, loc: usize },
    Dealloc { mem: usize, loc: usize },
    Const { dst: usize, value: T },
    Call { func: KernelFn<T>, fp: (i64, i64, i64), a: Access, b: Access, c: Access, row: IExpr, col: IExpr, ldc: IExpr },
    Matmul { a: usize, b: usize, c: usize, loc: usize },
}

struct Compiler<'a, 'k, T: Scalar> {
    f: &'a Function,
    slots: Vec<Option<Slot>>,
    n_idx: usize,
    n_reg: usize,
    n_mem: usize,
    kernels: Option<&'k KernelRegistry<T>>,
    locs: Vec<(String, &'a Op)>,
}

impl<'a, T: Scalar> Compiler<'a, '_, T> {
    fn assign_slots(&mut self) -> Result<(), ExecError> {
        for ty in &self.f.values {
            let slot = match ty {
                Type::Index => {
                    self.n_idx += 1;
                    Slot::Index(self.n_idx - 1)
                }
                Type::Elem(e) => {
                    if e.scalar_kind() != T::KIND {
                        return Err(ExecError::Type(format!("{e} value in a {} run", T::KIND)));
                    }
                    let lanes = e.lanes();
                    if lanes > MAX_LANES {
                        return Err(ExecError::Type(format!("vectors wider than {MAX_LANES} lanes")));
                    }
                    self.n_reg += lanes;
                    Slot::Reg { off: self.n_reg - lanes, lanes }
                }
                Type::MemRef(t) => {
                    if t.element.scalar_kind() != T::KIND {
                        return Err(ExecError::Type(format!("{t} in a {} run", T::KIND)));
                    }
                    if t.rank() > MAX_RANK {
                        return Err(ExecError::Type(format!("rank above {MAX_RANK} in {t}")));
                    }
                    self.n_mem += 1;
                    Slot::Mem(self.n_mem - 1)
                }
            };
            self.slots.push(Some(slot));
        }
        Ok(())
    }

    fn idx_slot(&self, v: ValueId) -> usize {
        match self.slots[v.index()] {
            Some(Slot::Index(s)) => s,
            _ => panic!("{v} is not an index value"),
        }
    }

    fn reg(&self, v: ValueId) -> (usize, usize) {
        match self.slots[v.index()] {
            Some(Slot::Reg { off, lanes }) => (off, lanes),
            _ => panic!("{v} is not an arithmetic value"),
        }
    }

    fn mem(&self, v: ValueId) -> usize {
        match self.slots[v.index()] {
            Some(Slot::Mem(s)) => s,
            _ => panic!("{v} is not a memref"),
        }
    }

    fn iexpr(&self, m: &OperandMap, i: usize) -> Result<IExpr, ExecError> {
        let e = &m.map.results[i];
        if let Some((terms, c)) = e.as_linear() {
            let mut lin = Vec::new();
            let mut ok = true;
            for (atom, k) in terms {
                match atom {
                    crate::ir::expr::Atom::Dim(d) => lin.push((self.idx_slot(m.operands[d]), k)),
                    _ => ok = false,
                }
            }
            if ok {
                return Ok(IExpr::Lin(c, lin));
            }
        }
        to_node(e, &|d| self.idx_slot(m.operands[d])).map(IExpr::Tree).map_err(ExecError::Type)
    }

    fn iexprs(&self, m: &OperandMap) -> Result<Vec<IExpr>, ExecError> {
        (0..m.len()).map(|i| self.iexpr(m, i)).collect()
    }

    fn access(&self, memref: ValueId, index: &OperandMap, loc: usize) -> Result<Access, ExecError> {
        Ok(Access { mem: self.mem(memref), memref, dims: self.iexprs(index)?, loc })
    }

    fn block(&mut self, ops: &'a [Op], prefix: &str) -> Result<Vec<Instr<T>>, ExecError> {
        let mut out = Vec::with_capacity(ops.len());
        for (i, op) in ops.iter().enumerate() {
            let path = if prefix.is_empty() { i.to_string() } else { format!("{prefix}.{i}") };
            let loc = self.locs.len();
            self.locs.push((path.clone(), op));
            out.push(self.op(op, &path, loc)?);
        }
        Ok(out)
    }

    fn op(&mut self, op: &'a Op, path: &str, loc: usize) -> Result<Instr<T>, ExecError> {
        Ok(match op {
            Op::For(fo) => Instr::For {
                iv: self.idx_slot(fo.iv),
                lower: self.iexprs(&fo.lower)?,
                upper: self.iexprs(&fo.upper)?,
                step: fo.step,
                body: self.block(&fo.body, path)?,
            },
            Op::Load { result, memref, index } => {
                let (dst, lanes) = self.reg(*result);
                Instr::Load { dst, lanes, acc: self.access(*memref, index, loc)? }
            }
            Op::Store { value, memref, index } => {
                let (src, lanes) = self.reg(*value);
                Instr::Store { src, lanes, acc: self.access(*memref, index, loc)? }
            }
            Op::Binary { result, kind, lhs, rhs } => {
                let (dst, lanes) = self.reg(*result);
                Instr::Bin { kind: *kind, dst, a: self.reg(*lhs).0, b: self.reg(*rhs).0, lanes }
            }
            Op::Fma { result, a, b, c } => {
                let (dst, lanes) = self.reg(*result);
                Instr::Fma { dst, a: self.reg(*a).0, b: self.reg(*b).0, c: self.reg(*c).0, lanes }
            }
            Op::Splat { result, scalar } => {
                let (dst, lanes) = self.reg(*result);
                Instr::Splat { dst, src: self.reg(*scalar).0, lanes }
            }
            Op::ShapeCast { result, source } => Instr::Cast {
                dst: self.mem(*result),
                src: self.mem(*source),
                ty: self.f.memref_ty(*result).unwrap().clone(),
                id: *result,
                loc,
            },
            Op::Alloc { result } => {
                Instr::Alloc { mem: self.mem(*result), ty: self.f.memref_ty(*result).unwrap().clone(), id: *result, loc }
            }
            Op::Dealloc { memref } => Instr::Dealloc { mem: self.mem(*memref), loc },
            Op::Constant { result, value } => Instr::Const { dst: self.reg(*result).0, value: T::from_f64(*value) },
            Op::Call { callee, args } => self.call(callee, args, loc)?,
            Op::Matmul { a, b, c, .. } => Instr::Matmul { a: self.mem(*a), b: self.mem(*b), c: self.mem(*c), loc },
        })
    }

    fn call(&self, callee: &str, args: &[CallArg], loc: usize) -> Result<Instr<T>, ExecError> {
        let k = self
            .kernels
            .and_then(|r| r.get(callee))
            .ok_or_else(|| ExecError::Kernel(format!("no kernel registered as @{callee}")))?;
        let shape_err = || ExecError::Kernel(format!("call @{callee} must pass (A[..], B[..], C[..], row, col, ldc)"));
        let [CallArg::Element { memref: a, index: ia }, CallArg::Element { memref: b, index: ib }, CallArg::Element { memref: c, index: ic }, CallArg::Index(row), CallArg::Index(col), CallArg::Index(ldc)] =
            args
        else {
            return Err(shape_err());
        };
        Ok(Instr::Call {
            func: k.func,
            fp: (k.mr, k.nr, k.kc),
            a: self.access(*a, ia, loc)?,
            b: self.access(*b, ib, loc)?,
            c: self.access(*c, ic, loc)?,
            row: self.iexpr(row, 0)?,
            col: self.iexpr(col, 0)?,
            ldc: self.iexpr(ldc, 0)?,
        })
    }
}

struct Mem<T: Scalar> {
    ptr: *mut T,
    len: usize,
    shape: Vec<i64>,
    lanes: usize,
    strides: Vec<i64>,
    layout: Option<Vec<Node>>,
    owned: Option<AlignedVec<T>>,
    live: bool,
    ty: Option<MemRefType>,
    id: ValueId,
}

impl<T: Scalar> Mem<T> {
    fn dead() -> Self {
        Mem {
            ptr: std::ptr::null_mut(),
            len: 0,
            shape: vec![],
            lanes: 1,
            strides: vec![],
            layout: None,
            owned: None,
            live: false,
            ty: None,
            id: ValueId(u32::MAX),
        }
    }

    fn view(ty: &MemRefType, ptr: *mut T, len: usize, id: ValueId) -> Result<Self, ExecError> {
        let layout = if ty.has_identity_layout() {
            None
        } else {
            Some(
                ty.layout
                    .results
                    .iter()
                    .map(|e| to_node(e, &|d| d))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(ExecError::Type)?,
            )
        };
        let need = ty.storage_scalars().map_err(ExecError::Type)?;
        if need > len {
            return Err(ExecError::Type(format!("{ty} needs {need} scalars, buffer has {len}")));
        }
        Ok(Mem {
            ptr,
            len,
            shape: ty.shape.clone(),
            lanes: ty.element.lanes(),
            strides: ty.physical_strides().map_err(ExecError::Type)?,
            layout,
            owned: None,
            live: true,
            ty: Some(ty.clone()),
            id,
        })
    }
}

struct Machine<'a, T: Scalar> {
    idx: Vec<i64>,
    regs: Vec<T>,
    mems: Vec<Mem<T>>,
    locs: &'a [(String, &'a Op)],
    func: &'a Function,
}

impl<T: Scalar> Machine<'_, T> {
    fn location(&self, loc: usize) -> String {
        let (path, op) = &self.locs[loc];
        format!("op {path} `{}`", op_summary(self.func, op))
    }

    /// Scalar offset of the accessed element, after bounds checks.
    #[inline]
    fn locate(&self, acc: &Access, logical: &mut [i64; MAX_RANK]) -> Result<usize, ExecError> {
        let mem = &self.mems[acc.mem];
        if !mem.live {
            return Err(ExecError::UseAfterFree { location: self.location(acc.loc), memref: acc.memref.to_string() });
        }
        let rank = acc.dims.len();
        let mut oob = false;
        for (d, e) in acc.dims.iter().enumerate() {
            let x = e.eval(&self.idx);
            logical[d] = x;
            oob |= x < 0 || x >= mem.shape[d];
        }
        let lin = if oob {
            -1
        } else if let Some(layout) = &mem.layout {
            layout.iter().zip(&mem.strides).map(|(n, s)| n.eval(&logical[..rank]) * s).sum::<i64>()
        } else {
            logical[..rank].iter().zip(&mem.strides).map(|(x, s)| x * s).sum::<i64>()
        };
        let off = lin * mem.lanes as i64;
        if lin < 0 || off as usize + mem.lanes > mem.len {
            return Err(ExecError::OutOfBounds {
                location: self.location(acc.loc),
                memref: acc.memref.to_string(),
                index: logical[..rank].to_vec(),
                shape: mem.shape.clone(),
            });
        }
        Ok(off as usize)
    }

    fn block(&mut self, prog: &[Instr<T>], obs: &mut impl Observer<T>) -> Result<(), ExecError> {
        let mut logical = [0i64; MAX_RANK];
        for ins in prog {
            match ins {
                Instr::For { iv, lower, upper, step, body } => {
                    let lb = lower.iter().map(|e| e.eval(&self.idx)).max().unwrap();
                    let ub = upper.iter().map(|e| e.eval(&self.idx)).min().unwrap();
                    let mut x = lb;
                    while x < ub {
                        self.idx[*iv] = x;
                        self.block(body, obs)?;
                        x += step;
                    }
                }
                Instr::Load { dst, lanes, acc } => {
                    let off = self.locate(acc, &mut logical)?;
                    let mem = &self.mems[acc.mem];
                    // SAFETY: `locate` checked `off + lanes <= len`.
                    let src = unsafe { std::slice::from_raw_parts(mem.ptr.add(off), *lanes) };
                    self.regs[*dst..dst + lanes].copy_from_slice(src);
                    obs.on_load(acc.memref, &logical[..acc.dims.len()]);
                }
                Instr::Store { src, lanes, acc } => {
                    let off = self.locate(acc, &mut logical)?;
                    let mem = &self.mems[acc.mem];
                    // SAFETY: as for loads.
                    let dst = unsafe { std::slice::from_raw_parts_mut(mem.ptr.add(off), *lanes) };
                    dst.copy_from_slice(&self.regs[*src..src + lanes]);
                    obs.on_store(acc.memref, &logical[..acc.dims.len()], &self.regs[*src..src + lanes]);
                }
                Instr::Bin { kind, dst, a, b, lanes } => {
                    for l in 0..*lanes {
                        let (x, y) = (self.regs[a + l], self.regs[b + l]);
                        self.regs[dst + l] = match kind {
                            BinaryKind::Add => x + y,
                            BinaryKind::Mul => x * y,
                        };
                    }
                }
                Instr::Fma { dst, a, b, c, lanes } => {
                    for l in 0..*lanes {
                        self.regs[dst + l] = self.regs[a + l].mul_add(self.regs[b + l], self.regs[c + l]);
                    }
                }
                Instr::Splat { dst, src, lanes } => {
                    let v = self.regs[*src];
                    self.regs[*dst..dst + lanes].fill(v);
                }
                Instr::Const { dst, value } => self.regs[*dst] = *value,
                Instr::Cast { dst, src, ty, id, loc } => {
                    let s = &self.mems[*src];
                    if !s.live {
                        return Err(ExecError::UseAfterFree { location: self.location(*loc), memref: s.id.to_string() });
                    }
                    let (ptr, len) = (s.ptr, s.len);
                    self.mems[*dst] = Mem::view(ty, ptr, len, *id)?;
                }
                Instr::Alloc { mem, ty, id, loc } => {
                    if self.mems[*mem].live {
                        return Err(ExecError::Type(format!("{}: buffer allocated twice without dealloc", self.location(*loc))));
                    }
                    let len = ty.storage_scalars().map_err(ExecError::Type)?;
                    let mut storage = AlignedVec::<T>::zeroed(len, ty.alignment.max(16));
                    storage.fill(T::nan());
                    let mut m = Mem::view(ty, storage.as_mut_ptr(), len, *id)?;
                    m.owned = Some(storage);
                    self.mems[*mem] = m;
                }
                Instr::Dealloc { mem, loc } => {
                    let m = &mut self.mems[*mem];
                    if !m.live || m.owned.is_none() {
                        let id = m.id.to_string();
                        return Err(ExecError::UseAfterFree { location: self.location(*loc), memref: id });
                    }
                    if let (Some(data), Some(ty)) = (&m.owned, &m.ty) {
                        obs.on_dealloc(m.id, ty, data);
                    }
                    *m = Mem::dead();
                }
                Instr::Call { func, fp, a, b, c, row, col, ldc } => {
                    let (mr, nr, kc) = *fp;
                    let (row, col, ldc) = (row.eval(&self.idx), col.eval(&self.idx), ldc.eval(&self.idx));
                    let oa = self.locate(a, &mut logical)?;
                    let ob = self.locate(b, &mut logical)?;
                    let oc = self.locate(c, &mut logical)?;
                    let (ma, mb, mc) = (&self.mems[a.mem], &self.mems[b.mem], &self.mems[c.mem]);
                    let c_lo = oc as i64 + row * ldc + col;
                    let c_hi = c_lo + (mr - 1) * ldc + nr;
                    if oa + (mr * kc) as usize > ma.len
                        || ob + (kc * nr) as usize > mb.len
                        || c_lo < 0
                        || c_hi as usize > mc.len
                        || ldc < nr
                    {
                        return Err(ExecError::OutOfBounds {
                            location: self.location(a.loc),
                            memref: "kernel panel".into(),
                            index: vec![row, col, ldc],
                            shape: mc.shape.clone(),
                        });
                    }
                    // SAFETY: panel and block extents were checked above.
                    unsafe { func(ma.ptr.add(oa), mb.ptr.add(ob), mc.ptr.add(oc), row, col, ldc) };
                }
                Instr::Matmul { a, b, c, loc } => self.matmul(*a, *b, *c, *loc)?,
            }
        }
        Ok(())
    }

    fn matmul(&mut self, a: usize, b: usize, c: usize, loc: usize) -> Result<(), ExecError> {
        let (m, k, n) = (self.mems[a].shape[0], self.mems[a].shape[1], self.mems[b].shape[1]);
        let ptr = |mm: &Mem<T>, i: i64, j: i64| -> Result<*mut T, ExecError> {
            if !mm.live {
                return Err(ExecError::UseAfterFree { location: self.location(loc), memref: mm.id.to_string() });
            }
            let idx = [i, j];
            let lin: i64 = match &mm.layout {
                Some(l) => l.iter().zip(&mm.strides).map(|(n, s)| n.eval(&idx) * s).sum(),
                None => i * mm.strides[0] + j * mm.strides[1],
            };
            // SAFETY: indices are within the verified shapes.
            Ok(unsafe { mm.ptr.add(lin as usize * mm.lanes) })
        };
        for i in 0..m {
            for j in 0..n {
                let pc = ptr(&self.mems[c], i, j)?;
                for kk in 0..k {
                    let (pa, pb) = (ptr(&self.mems[a], i, kk)?, ptr(&self.mems[b], kk, j)?);
                    // SAFETY: see `ptr`.
                    unsafe { *pc = (*pa).mul_add(*pb, *pc) };
                }
            }
        }
        Ok(())
    }
}
