use std::fmt::Write;

use super::map::display_with_names;
use super::ops::{CallArg, Function, Op, OperandMap};

/// Renders a function in the textual IR format. Values are renumbered in
/// definition order, so structurally equal functions print identically.
pub fn print_function(func: &Function) -> String {
    let f = func.canonicalize();
    let mut out = String::new();
    write!(out, "func @{}(", f.name).unwrap();
    for (i, a) in f.args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write!(out, "{a}: {}", f.ty(*a)).unwrap();
    }
    out.push_str(") {\n");
    for op in &f.body {
        print_op(&f, op, 1, &mut out);
    }
    out.push_str("  return\n}\n");
    out
}

fn names(m: &OperandMap) -> Vec<String> {
    m.operands.iter().map(|v| v.to_string()).collect()
}

fn exprs(m: &OperandMap) -> String {
    let n = names(m);
    m.map
        .results
        .iter()
        .map(|e| display_with_names(e, &n).to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn bound(m: &OperandMap, kw: &str) -> String {
    if m.len() == 1 {
        exprs(m)
    } else {
        format!("{kw}({})", exprs(m))
    }
}

fn print_op(f: &Function, op: &Op, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    out.push_str(&pad);
    match op {
        Op::For(fo) => {
            write!(out, "affine.for {} = {} to {}", fo.iv, bound(&fo.lower, "max"), bound(&fo.upper, "min"))
                .unwrap();
            if fo.step != 1 {
                write!(out, " step {}", fo.step).unwrap();
            }
            out.push_str(" {\n");
            for inner in &fo.body {
                print_op(f, inner, depth + 1, out);
            }
            writeln!(out, "{pad}}}").unwrap();
            return;
        }
        Op::Load { result, memref, index } => {
            write!(out, "{result} = affine.load {memref}[{}] : {}", exprs(index), f.ty(*result)).unwrap()
        }
        Op::Store { value, memref, index } => {
            write!(out, "affine.store {value}, {memref}[{}] : {}", exprs(index), f.ty(*value)).unwrap()
        }
        Op::Binary { result, kind, lhs, rhs } => {
            write!(out, "{result} = {} {lhs}, {rhs} : {}", kind.mnemonic(), f.ty(*result)).unwrap()
        }
        Op::Fma { result, a, b, c } => write!(out, "{result} = fma {a}, {b}, {c} : {}", f.ty(*result)).unwrap(),
        Op::Splat { result, scalar } => write!(out, "{result} = splat {scalar} : {}", f.ty(*result)).unwrap(),
        Op::ShapeCast { result, source } => {
            write!(out, "{result} = memref_shape_cast {source} : {}", f.ty(*result)).unwrap()
        }
        Op::Alloc { result } => write!(out, "{result} = alloc() : {}", f.ty(*result)).unwrap(),
        Op::Dealloc { memref } => write!(out, "dealloc {memref}").unwrap(),
        Op::Constant { result, value } => write!(out, "{result} = constant {value:?} : {}", f.ty(*result)).unwrap(),
        Op::Call { callee, args } => {
            let rendered: Vec<String> = args
                .iter()
                .map(|a| match a {
                    CallArg::Element { memref, index } => format!("{memref}[{}]", exprs(index)),
                    CallArg::Index(m) => exprs(m),
                })
                .collect();
            write!(out, "call @{callee}({})", rendered.join(", ")).unwrap()
        }
        Op::Matmul { a, b, c, params } => write!(out, "matmul {a}, {b}, {c} {params}").unwrap(),
    }
    out.push('\n');
}

/// Short one-line description of an op, used in diagnostics.
pub(crate) fn op_summary(f: &Function, op: &Op) -> String {
    match op {
        Op::For(fo) => format!("affine.for {}", fo.iv),
        _ => {
            let mut s = String::new();
            print_op(f, op, 0, &mut s);
            s.trim_end().to_string()
        }
    }
}

impl std::fmt::Display for Function {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&print_function(self))
    }
}
