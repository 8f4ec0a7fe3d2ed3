//! Native backend: lowers a function to C, compiles it into a shared object
//! with the system C compiler and loads the entry point.

use std::collections::HashMap;
use std::ffi::c_void;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use crate::ir::{AffineExpr, BinaryKind, CallArg, ElementKind, Function, MemRefType, Op, OperandMap, Type, ValueId};
use crate::layout::normalize_memrefs;
use crate::scalar::Scalar;

use super::buffer::TensorBuffer;
use super::microkernel::{KernelFn, KernelRegistry};
use super::ExecError;

/// Allocations up to this many bytes live on the stack.
const STACK_ALLOC_LIMIT: usize = 4096;

type EntryFn = unsafe extern "C" fn(*const *mut c_void, *const *const c_void);

#[derive(Clone, Debug)]
pub struct NativeOptions {
    pub cc: String,
    pub flags: Vec<String>,
    /// Keeps the generated source and object in this directory.
    pub keep_dir: Option<PathBuf>,
}

impl Default for NativeOptions {
    fn default() -> Self {
        let cc = std::env::var("GEMMFORGE_CC").unwrap_or_else(|_| "cc".to_string());
        let flags = match std::env::var("GEMMFORGE_CFLAGS") {
            Ok(s) => s.split_whitespace().map(String::from).collect(),
            Err(_) => ["-O2", "-march=native", "-ffp-contract=fast", "-fno-strict-aliasing"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        };
        NativeOptions { cc, flags, keep_dir: None }
    }
}

/// A loaded, callable compilation of a function.
pub struct NativeKernel<T: Scalar> {
    entry: EntryFn,
    args: Vec<MemRefType>,
    table: Vec<KernelFn<T>>,
    compile_seconds: f64,
    source: String,
    _lib: libloading::Library,
    _dir: Option<tempfile::TempDir>,
}

impl<T: Scalar> NativeKernel<T> {
    /// Seconds spent lowering, compiling and loading.
    pub fn compile_seconds(&self) -> f64 {
        self.compile_seconds
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn arg_types(&self) -> &[MemRefType] {
        &self.args
    }

    pub fn run(&self, buffers: &mut [TensorBuffer<T>]) -> Result<(), ExecError> {
        if buffers.len() != self.args.len() {
            return Err(ExecError::Signature(format!("expected {} buffers, got {}", self.args.len(), buffers.len())));
        }
        for (i, (b, t)) in buffers.iter().zip(&self.args).enumerate() {
            let have = b.ty();
            if have.shape != t.shape || have.element != t.element || have.layout != t.layout {
                return Err(ExecError::Signature(format!("argument {i} expects {t}, got {have}")));
            }
        }
        let ptrs: Vec<*mut c_void> = buffers.iter_mut().map(|b| b.as_mut_ptr() as *mut c_void).collect();
        let table: Vec<*const c_void> = self.table.iter().map(|&f| f as *const c_void).collect();
        // SAFETY: buffer types were checked against the compiled signature,
        // and generated code only touches in-bounds elements of verified
        // accesses.
        unsafe { (self.entry)(ptrs.as_ptr(), table.as_ptr()) };
        Ok(())
    }
}

/// Compiles `func` to native code. Memrefs are normalized first; calls are
/// resolved against `kernels`.
pub fn emit_native<T: Scalar>(
    func: &Function,
    kernels: Option<&KernelRegistry<T>>,
    opts: &NativeOptions,
) -> Result<NativeKernel<T>, ExecError> {
    let start = Instant::now();
    let args: Vec<MemRefType> = func.args.iter().map(|&a| func.memref_ty(a).unwrap().clone()).collect();
    let normalized = normalize_memrefs(func).map_err(|e| ExecError::Type(e.to_string()))?;
    let (source, callees) = emit_c::<T>(&normalized)?;
    let mut table = Vec::new();
    for name in &callees {
        let k = kernels
            .and_then(|r| r.get(name))
            .ok_or_else(|| ExecError::Kernel(format!("no kernel registered as @{name}")))?;
        table.push(k.func);
    }

    let (dir, tmp) = match &opts.keep_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| ExecError::Toolchain(e.to_string()))?;
            (d.clone(), None)
        }
        None => {
            let t = tempfile::Builder::new()
                .prefix("gemmforge-")
                .tempdir()
                .map_err(|e| ExecError::Toolchain(e.to_string()))?;
            (t.path().to_path_buf(), Some(t))
        }
    };
    let src_path = dir.join(format!("{}.c", func.name));
    let so_path = dir.join(format!("lib{}.so", func.name));
    std::fs::write(&src_path, &source).map_err(|e| ExecError::Toolchain(e.to_string()))?;
    let out = Command::new(&opts.cc)
        .args(&opts.flags)
        .args(["-fPIC", "-shared", "-o"])
        .arg(&so_path)
        .arg(&src_path)
        .output()
        .map_err(|e| ExecError::Toolchain(format!("cannot run `{}`: {e}", opts.cc)))?;
    if !out.status.success() {
        return Err(ExecError::Toolchain(String::from_utf8_lossy(&out.stderr).into_owned()));
    }
    // SAFETY: the library was just built from generated code that exports
    // `gemmforge_entry` with the `EntryFn` signature.
    let (lib, entry) = unsafe {
        let lib = libloading::Library::new(&so_path).map_err(|e| ExecError::Toolchain(e.to_string()))?;
        let sym: libloading::Symbol<EntryFn> =
            lib.get(b"gemmforge_entry\0").map_err(|e| ExecError::Toolchain(e.to_string()))?;
        let entry = *sym;
        (lib, entry)
    };
    Ok(NativeKernel {
        entry,
        args,
        table,
        compile_seconds: start.elapsed().as_secs_f64(),
        source,
        _lib: lib,
        _dir: tmp,
    })
}

/// C source for a function with identity-layout memrefs, plus the callee
/// names in kernel-table order.
pub fn emit_c<T: Scalar>(func: &Function) -> Result<(String, Vec<String>), ExecError> {
    let mut e = Emitter::<T> { f: func, out: String::new(), callees: Vec::new(), vtypes: HashMap::new(), marker: std::marker::PhantomData };
    for ty in &func.values {
        match ty {
            Type::Elem(ElementKind::Vector { lanes, .. }) => {
                e.vtypes.insert(*lanes as usize, ());
            }
            Type::MemRef(t) => {
                if !t.has_identity_layout() {
                    return Err(ExecError::Unsupported(format!("non-normalized memref {t}")));
                }
                if t.element.scalar_kind() != T::KIND {
                    return Err(ExecError::Type(format!("{t} in a {} kernel", T::KIND)));
                }
                if let ElementKind::Vector { lanes, .. } = t.element {
                    e.vtypes.insert(lanes as usize, ());
                }
            }
            _ => {}
        }
    }
    let mut body = String::new();
    for (i, &a) in func.args.iter().enumerate() {
        let t = func.memref_ty(a).unwrap();
        let et = e.elem_c(t.element);
        writeln!(body, "  {et} *m{} = ({et} *)args[{i}];", a.0).unwrap();
    }
    e.out = body;
    e.block(&func.body, 1)?;

    let mut src = String::new();
    src.push_str("#include <stdlib.h>\n\n");
    writeln!(src, "typedef {} T;", T::C_TYPE).unwrap();
    let mut lanes: Vec<usize> = e.vtypes.keys().copied().collect();
    lanes.sort();
    for l in lanes {
        let bytes = l * std::mem::size_of::<T>();
        writeln!(
            src,
            "typedef T vec{l} __attribute__((vector_size({bytes}), aligned({}), may_alias));",
            std::mem::size_of::<T>()
        )
        .unwrap();
    }
    src.push_str(
        "typedef void (*kernel_fn)(const T *, const T *, T *, long, long, long);\n\n\
         static inline long fd(long a, long b) { long q = a / b; return (a % b < 0) ? q - 1 : q; }\n\
         static inline long md(long a, long b) { long r = a % b; return r < 0 ? r + b : r; }\n\
         static inline long mn(long a, long b) { return a < b ? a : b; }\n\
         static inline long mx(long a, long b) { return a > b ? a : b; }\n\n",
    );
    src.push_str("void gemmforge_entry(void *const *args, const void *const *kt) {\n");
    src.push_str("  (void)kt;\n");
    src.push_str(&e.out);
    src.push_str("}\n");
    Ok((src, e.callees))
}

struct Emitter<'a, T> {
    f: &'a Function,
    out: String,
    callees: Vec<String>,
    vtypes: HashMap<usize, ()>,
    marker: std::marker::PhantomData<T>,
}

fn c_expr(e: &AffineExpr, name: &impl Fn(usize) -> String) -> String {
    match e {
        AffineExpr::Dim(d) => name(*d),
        AffineExpr::Symbol(s) => format!("s{s}"),
        AffineExpr::Const(c) => format!("{c}L"),
        AffineExpr::Add(l, r) => format!("({} + {})", c_expr(l, name), c_expr(r, name)),
        AffineExpr::Mul(l, r) => format!("({} * {})", c_expr(l, name), c_expr(r, name)),
        AffineExpr::FloorDiv(l, c) => format!("fd({}, {c}L)", c_expr(l, name)),
        AffineExpr::Mod(l, c) => format!("md({}, {c}L)", c_expr(l, name)),
    }
}

impl<T: Scalar> Emitter<'_, T> {
    fn elem_c(&self, e: ElementKind) -> String {
        match e {
            ElementKind::Scalar(_) => "T".to_string(),
            ElementKind::Vector { lanes, .. } => format!("vec{lanes}"),
        }
    }

    fn name(&self, v: ValueId) -> String {
        match self.f.ty(v) {
            Type::Index => format!("i{}", v.0),
            Type::Elem(_) => format!("v{}", v.0),
            Type::MemRef(_) => format!("m{}", v.0),
        }
    }

    fn expr(&self, m: &OperandMap, i: usize) -> String {
        let e = m.map.results[i].simplify();
        c_expr(&e, &|d| self.name(m.operands[d]))
    }

    fn fold(&self, m: &OperandMap, f: &str) -> String {
        let mut acc = self.expr(m, 0);
        for i in 1..m.len() {
            acc = format!("{f}({acc}, {})", self.expr(m, i));
        }
        acc
    }

    /// Linear element offset of an access into an identity-layout memref.
    fn offset(&self, memref: ValueId, index: &OperandMap) -> String {
        let t = self.f.memref_ty(memref).unwrap();
        let strides = crate::ir::row_major_strides(&t.shape);
        let mut lin = AffineExpr::Const(0);
        for (d, s) in strides.iter().enumerate() {
            lin = lin + index.map.results[d].clone() * *s;
        }
        c_expr(&lin.simplify(), &|d| self.name(index.operands[d]))
    }

    fn line(&mut self, depth: usize, s: &str) {
        for _ in 0..depth {
            self.out.push_str("  ");
        }
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn block(&mut self, ops: &[Op], depth: usize) -> Result<(), ExecError> {
        for op in ops {
            self.op(op, depth)?;
        }
        Ok(())
    }

    fn elem_ty(&self, v: ValueId) -> String {
        self.elem_c(self.f.ty(v).as_elem().unwrap())
    }

    fn op(&mut self, op: &Op, depth: usize) -> Result<(), ExecError> {
        match op {
            Op::For(fo) => {
                let iv = self.name(fo.iv);
                let lb = self.fold(&fo.lower, "mx");
                let ub = self.fold(&fo.upper, "mn");
                self.line(depth, &format!("for (long {iv} = {lb}, {iv}_ub = {ub}; {iv} < {iv}_ub; {iv} += {}) {{", fo.step));
                self.block(&fo.body, depth + 1)?;
                self.line(depth, "}");
            }
            Op::Load { result, memref, index } => {
                let s = format!("{} {} = {}[{}];", self.elem_ty(*result), self.name(*result), self.name(*memref), self.offset(*memref, index));
                self.line(depth, &s);
            }
            Op::Store { value, memref, index } => {
                let s = format!("{}[{}] = {};", self.name(*memref), self.offset(*memref, index), self.name(*value));
                self.line(depth, &s);
            }
            Op::Binary { result, kind, lhs, rhs } => {
                let sym = match kind {
                    BinaryKind::Add => "+",
                    BinaryKind::Mul => "*",
                };
                let s = format!("{} {} = {} {sym} {};", self.elem_ty(*result), self.name(*result), self.name(*lhs), self.name(*rhs));
                self.line(depth, &s);
            }
            Op::Fma { result, a, b, c } => {
                let s = format!(
                    "{} {} = {} * {} + {};",
                    self.elem_ty(*result),
                    self.name(*result),
                    self.name(*a),
                    self.name(*b),
                    self.name(*c)
                );
                self.line(depth, &s);
            }
            Op::Splat { result, scalar } => {
                let lanes = self.f.ty(*result).as_elem().unwrap().lanes();
                let x = self.name(*scalar);
                let list = vec![x; lanes].join(", ");
                let s = format!("{} {} = ({}){{{list}}};", self.elem_ty(*result), self.name(*result), self.elem_ty(*result));
                self.line(depth, &s);
            }
            Op::ShapeCast { result, source } => {
                let t = self.elem_c(self.f.memref_ty(*result).unwrap().element);
                let s = format!("{t} *{} = ({t} *){};", self.name(*result), self.name(*source));
                self.line(depth, &s);
            }
            Op::Alloc { result } => {
                let t = self.f.memref_ty(*result).unwrap();
                let et = self.elem_c(t.element);
                let n = t.num_elements() as usize;
                let bytes = n * t.element.bytes();
                let align = t.alignment.max(t.element.bytes());
                let name = self.name(*result);
                if bytes <= STACK_ALLOC_LIMIT {
                    self.line(depth, &format!("{et} {name}_s[{n}] __attribute__((aligned({align})));"));
                    self.line(depth, &format!("{et} *{name} = {name}_s;"));
                } else {
                    let rounded = bytes.div_ceil(align) * align;
                    self.line(depth, &format!("{et} *{name} = ({et} *)aligned_alloc({align}, {rounded});"));
                }
            }
            Op::Dealloc { memref } => {
                let t = self.f.memref_ty(*memref).unwrap();
                let bytes = t.num_elements() as usize * t.element.bytes();
                let is_arg = self.f.args.contains(memref);
                if bytes > STACK_ALLOC_LIMIT && !is_arg {
                    let s = format!("free({});", self.name(*memref));
                    self.line(depth, &s);
                }
            }
            Op::Constant { result, value } => {
                let lit = if value.is_finite() {
                    format!("{value:e}")
                } else if value.is_nan() {
                    "__builtin_nan(\"\")".to_string()
                } else if *value > 0.0 {
                    "__builtin_inf()".to_string()
                } else {
                    "-__builtin_inf()".to_string()
                };
                let s = format!("T {} = {lit};", self.name(*result));
                self.line(depth, &s);
            }
            Op::Call { callee, args } => {
                let slot = match self.callees.iter().position(|c| c == callee) {
                    Some(p) => p,
                    None => {
                        self.callees.push(callee.clone());
                        self.callees.len() - 1
                    }
                };
                let rendered: Vec<String> = args
                    .iter()
                    .map(|a| match a {
                        CallArg::Element { memref, index } => {
                            format!("(T *)&{}[{}]", self.name(*memref), self.offset(*memref, index))
                        }
                        CallArg::Index(m) => self.expr(m, 0),
                    })
                    .collect();
                let s = format!("((kernel_fn)kt[{slot}])({});", rendered.join(", "));
                self.line(depth, &s);
            }
            Op::Matmul { .. } => {
                return Err(ExecError::Unsupported("high-level matmul must be expanded first".into()));
            }
        }
        Ok(())
    }
}
