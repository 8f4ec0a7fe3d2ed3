use std::collections::HashMap;

use thiserror::Error;

use super::expr::AffineExpr;
use super::map::AffineMap;
use super::ops::{BinaryKind, CallArg, ForOp, Function, InnerPerm, Op, OperandMap, TileParams, ValueId};
use super::types::{ElementKind, MemRefType, ScalarKind, Type};
use super::verify::{verify, Diagnostic};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("verification failed: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

/// Parses the textual IR and verifies the result.
pub fn parse_function(text: &str) -> Result<Function, ParseError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0, names: HashMap::new(), func: Function::new("") };
    p.function()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("trailing input after function"));
    }
    let diags = verify(&p.func);
    if diags.is_empty() {
        Ok(p.func)
    } else {
        Err(ParseError::Invalid(diags))
    }
}

/// Parses a standalone affine map such as `(d0, d1) -> (d0 floordiv 4, d1)`.
pub fn parse_affine_map(text: &str) -> Result<AffineMap, ParseError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0, names: HashMap::new(), func: Function::new("") };
    let m = p.affine_map()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("trailing input after map"));
    }
    Ok(m)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    names: HashMap<String, ValueId>,
    func: Function,
}

type PResult<T> = Result<T, ParseError>;

impl<'a> Parser<'a> {
    fn err(&self, msg: impl Into<String>) -> ParseError {
        let before = &self.src[..self.pos.min(self.src.len())];
        let line = before.iter().filter(|&&c| c == b'\n').count() + 1;
        let col = before.iter().rev().take_while(|&&c| c != b'\n').count() + 1;
        ParseError::Syntax { line, col, msg: msg.into() }
    }

    fn skip_ws(&mut self) {
        loop {
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.src[self.pos..].starts_with(b"//") {
                while self.pos < self.src.len() && self.src[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, s: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(s.as_bytes()) {
            let is_word = s.bytes().all(|c| c.is_ascii_alphanumeric() || c == b'_' || c == b'.');
            let next = self.src.get(self.pos + s.len()).copied();
            if is_word && next.is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_') {
                return false;
            }
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> PResult<()> {
        if self.eat(s) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{s}`")))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || matches!(self.src[self.pos], b'_' | b'.'))
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected identifier"));
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn int(&mut self) -> PResult<i64> {
        self.skip_ws();
        let start = self.pos;
        if self.src.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse().map_err(|_| {
            self.pos = start;
            self.err("expected integer")
        })
    }

    fn float(&mut self) -> PResult<f64> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || matches!(self.src[self.pos], b'.' | b'-' | b'+'))
        {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse().map_err(|_| {
            self.pos = start;
            self.err("expected floating-point literal")
        })
    }

    fn value_name(&mut self) -> PResult<String> {
        self.skip_ws();
        if self.src.get(self.pos) != Some(&b'%') {
            return Err(self.err("expected `%` value name"));
        }
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("empty value name"));
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn use_value(&mut self) -> PResult<ValueId> {
        let at = self.pos;
        let name = self.value_name()?;
        self.names.get(&name).copied().ok_or_else(|| {
            self.pos = at;
            self.err(format!("use of undefined value %{name}"))
        })
    }

    fn define(&mut self, name: String, ty: Type) -> PResult<ValueId> {
        if self.names.contains_key(&name) {
            return Err(self.err(format!("redefinition of %{name}")));
        }
        let v = self.func.new_value(ty);
        self.names.insert(name, v);
        Ok(v)
    }

    /// The `x` separating extents in shaped types.
    fn times(&mut self) -> PResult<()> {
        if self.src.get(self.pos) != Some(&b'x') {
            return Err(self.err("expected `x` after extent"));
        }
        self.pos += 1;
        Ok(())
    }

    fn scalar_kind(&mut self) -> PResult<ScalarKind> {
        let at = self.pos;
        let id = self.ident()?;
        id.parse().map_err(|e: String| {
            self.pos = at;
            self.err(e)
        })
    }

    fn element(&mut self) -> PResult<ElementKind> {
        if self.eat("vector") {
            self.expect("<")?;
            let lanes = self.int()?;
            self.times()?;
            let scalar = self.scalar_kind()?;
            self.expect(">")?;
            if lanes < 1 {
                return Err(self.err("vector lane count must be positive"));
            }
            return Ok(ElementKind::Vector { lanes: lanes as u32, scalar });
        }
        Ok(ElementKind::Scalar(self.scalar_kind()?))
    }

    fn ty(&mut self) -> PResult<Type> {
        if self.eat("index") {
            return Ok(Type::Index);
        }
        if self.eat("memref") {
            return Ok(Type::MemRef(self.memref_body()?));
        }
        Ok(Type::Elem(self.element()?))
    }

    fn memref_body(&mut self) -> PResult<MemRefType> {
        self.expect("<")?;
        let mut shape = Vec::new();
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            let s = self.int()?;
            if s < 1 {
                return Err(self.err("memref extents must be positive"));
            }
            shape.push(s);
            self.times()?;
        }
        let element = self.element()?;
        let mut t = MemRefType::new(shape, element);
        while self.eat(",") {
            if self.eat("align") {
                let a = self.int()?;
                if a < 1 || (a as u64).count_ones() != 1 {
                    return Err(self.err("alignment must be a power of two"));
                }
                t.alignment = a as usize;
            } else {
                t.layout = self.affine_map()?;
            }
        }
        self.expect(">")?;
        Ok(t)
    }

    fn affine_map(&mut self) -> PResult<AffineMap> {
        let mut names: HashMap<String, AffineExpr> = HashMap::new();
        self.expect("(")?;
        let mut nd = 0;
        if !self.eat(")") {
            loop {
                let n = self.ident()?;
                names.insert(n, AffineExpr::Dim(nd));
                nd += 1;
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        let mut ns = 0;
        if self.eat("[") {
            loop {
                let n = self.ident()?;
                names.insert(n, AffineExpr::Symbol(ns));
                ns += 1;
                if self.eat("]") {
                    break;
                }
                self.expect(",")?;
            }
        }
        self.expect("->")?;
        self.expect("(")?;
        let mut results = Vec::new();
        if !self.eat(")") {
            loop {
                results.push(self.expr(&mut |p| {
                    let at = p.pos;
                    let n = p.ident()?;
                    names.get(&n).cloned().ok_or_else(|| {
                        p.pos = at;
                        p.err(format!("unknown map identifier `{n}`"))
                    })
                })?);
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        Ok(AffineMap::new(nd, ns, results))
    }

    /// Expression whose named atoms are produced by `atom`.
    fn expr(&mut self, atom: &mut dyn FnMut(&mut Self) -> PResult<AffineExpr>) -> PResult<AffineExpr> {
        let mut lhs = self.term(atom)?;
        loop {
            if self.eat("+") {
                let r = self.term(atom)?;
                lhs = lhs + r;
            } else if self.peek() == Some(b'-') && self.src.get(self.pos + 1) != Some(&b'>') {
                self.pos += 1;
                let r = self.term(atom)?;
                lhs = match r {
                    AffineExpr::Const(c) => lhs + AffineExpr::Const(-c),
                    other => lhs + other * -1,
                };
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self, atom: &mut dyn FnMut(&mut Self) -> PResult<AffineExpr>) -> PResult<AffineExpr> {
        let mut lhs = self.unary(atom)?;
        loop {
            if self.eat("*") {
                let r = self.unary(atom)?;
                lhs = AffineExpr::Mul(Box::new(lhs), Box::new(r));
            } else if self.eat("floordiv") {
                let c = self.divisor()?;
                lhs = lhs.floordiv(c);
            } else if self.eat("mod") {
                let c = self.divisor()?;
                lhs = lhs.modulo(c);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn divisor(&mut self) -> PResult<i64> {
        let at = self.pos;
        let c = self.int()?;
        if c <= 0 {
            self.pos = at;
            self.skip_ws();
            return Err(self.err(format!("divisor must be a positive constant, got {c}")));
        }
        Ok(c)
    }

    fn unary(&mut self, atom: &mut dyn FnMut(&mut Self) -> PResult<AffineExpr>) -> PResult<AffineExpr> {
        match self.peek() {
            Some(b'-') => {
                if self.src.get(self.pos + 1).is_some_and(|c| c.is_ascii_digit()) {
                    return Ok(AffineExpr::Const(self.int()?));
                }
                self.pos += 1;
                Ok(self.unary(atom)? * -1)
            }
            Some(c) if c.is_ascii_digit() => Ok(AffineExpr::Const(self.int()?)),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr(atom)?;
                self.expect(")")?;
                Ok(e)
            }
            _ => atom(self),
        }
    }

    /// Expression over SSA index values; `Dim(n)` denotes `ValueId(n)`.
    fn value_expr(&mut self) -> PResult<AffineExpr> {
        self.expr(&mut |p| {
            let at = p.pos;
            let v = p.use_value()?;
            if !p.func.ty(v).is_index() {
                p.pos = at;
                return Err(p.err(format!("%{} is not an index value", v.0)));
            }
            Ok(AffineExpr::Dim(v.index()))
        })
    }

    fn value_exprs_until(&mut self, close: &str) -> PResult<OperandMap> {
        let mut exprs = Vec::new();
        if !self.eat(close) {
            loop {
                exprs.push(self.value_expr()?);
                if self.eat(close) {
                    break;
                }
                self.expect(",")?;
            }
        }
        Ok(OperandMap::from_value_exprs(&exprs))
    }

    fn bound(&mut self, kw: &str) -> PResult<OperandMap> {
        if self.eat(kw) {
            self.expect("(")?;
            let m = self.value_exprs_until(")")?;
            if m.is_empty() {
                return Err(self.err(format!("empty {kw}() bound")));
            }
            Ok(m)
        } else {
            Ok(OperandMap::from_value_exprs(&[self.value_expr()?]))
        }
    }

    fn function(&mut self) -> PResult<()> {
        self.expect("func")?;
        self.skip_ws();
        self.expect("@")?;
        self.func.name = self.ident()?;
        self.expect("(")?;
        if !self.eat(")") {
            loop {
                let name = self.value_name()?;
                self.expect(":")?;
                let at = self.pos;
                let ty = self.ty()?;
                if !matches!(ty, Type::MemRef(_)) {
                    self.pos = at;
                    return Err(self.err("function arguments must be memrefs"));
                }
                let v = self.define(name, ty)?;
                self.func.args.push(v);
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        self.expect("{")?;
        let body = self.block()?;
        self.func.body = body;
        self.expect("}")?;
        Ok(())
    }

    /// Ops up to `return` or a closing brace.
    fn block(&mut self) -> PResult<Vec<Op>> {
        let mut ops = Vec::new();
        loop {
            match self.peek() {
                None => return Err(self.err("unexpected end of input")),
                Some(b'}') => return Ok(ops),
                _ => {}
            }
            if self.eat("return") {
                if self.peek() != Some(b'}') {
                    return Err(self.err("`return` must end the function body"));
                }
                return Ok(ops);
            }
            ops.push(self.op()?);
        }
    }

    fn op(&mut self) -> PResult<Op> {
        if self.eat("affine.for") {
            let name = self.value_name()?;
            self.expect("=")?;
            let lower = self.bound("max")?;
            self.expect("to")?;
            let upper = self.bound("min")?;
            let step = if self.eat("step") {
                let at = self.pos;
                let s = self.int()?;
                if s < 1 {
                    self.pos = at;
                    return Err(self.err("step must be at least 1"));
                }
                s
            } else {
                1
            };
            let iv = self.define(name, Type::Index)?;
            self.expect("{")?;
            let body = self.block()?;
            self.expect("}")?;
            return Ok(Op::For(ForOp { iv, lower, upper, step, body }));
        }
        if self.eat("affine.store") {
            let value = self.use_value()?;
            self.expect(",")?;
            let memref = self.use_value()?;
            self.expect("[")?;
            let index = self.value_exprs_until("]")?;
            self.expect(":")?;
            let ty = self.ty()?;
            if *self.func.ty(value) != ty {
                return Err(self.err(format!("stored value has type {}, annotated {ty}", self.func.ty(value))));
            }
            return Ok(Op::Store { value, memref, index });
        }
        if self.eat("dealloc") {
            return Ok(Op::Dealloc { memref: self.use_value()? });
        }
        if self.eat("call") {
            self.expect("@")?;
            let callee = self.ident()?;
            self.expect("(")?;
            let mut args = Vec::new();
            if !self.eat(")") {
                loop {
                    args.push(self.call_arg()?);
                    if self.eat(")") {
                        break;
                    }
                    self.expect(",")?;
                }
            }
            return Ok(Op::Call { callee, args });
        }
        if self.eat("matmul") {
            let a = self.use_value()?;
            self.expect(",")?;
            let b = self.use_value()?;
            self.expect(",")?;
            let c = self.use_value()?;
            let params = self.tile_params()?;
            return Ok(Op::Matmul { a, b, c, params });
        }
        if self.peek() == Some(b'%') {
            let name = self.value_name()?;
            self.expect("=")?;
            return self.defining_op(name);
        }
        Err(self.err("expected an operation"))
    }

    fn call_arg(&mut self) -> PResult<CallArg> {
        let save = self.pos;
        if self.peek() == Some(b'%') {
            let v = self.use_value()?;
            if matches!(self.func.ty(v), Type::MemRef(_)) {
                self.expect("[")?;
                let index = self.value_exprs_until("]")?;
                return Ok(CallArg::Element { memref: v, index });
            }
            self.pos = save;
        }
        Ok(CallArg::Index(OperandMap::from_value_exprs(&[self.value_expr()?])))
    }

    fn tile_params(&mut self) -> PResult<TileParams> {
        self.expect("{")?;
        let mut vals: HashMap<String, i64> = HashMap::new();
        let mut perm = InnerPerm::JI;
        loop {
            let key = self.ident()?;
            self.expect("=")?;
            if key == "perm" {
                let at = self.pos;
                let p = self.ident()?;
                perm = p.parse().map_err(|e: String| {
                    self.pos = at;
                    self.err(e)
                })?;
            } else {
                let v = self.int()?;
                vals.insert(key, v);
            }
            if self.eat("}") {
                break;
            }
            self.expect(",")?;
        }
        let mut get = |k: &str| vals.remove(k).ok_or_else(|| self.err(format!("missing matmul attribute `{k}`")));
        let params = TileParams { mc: get("mc")?, kc: get("kc")?, mr: get("mr")?, nr: get("nr")?, ku: get("ku")?, perm };
        if let Some(k) = vals.keys().next() {
            return Err(self.err(format!("unknown matmul attribute `{k}`")));
        }
        Ok(params)
    }

    fn defining_op(&mut self, name: String) -> PResult<Op> {
        if self.eat("affine.load") {
            let memref = self.use_value()?;
            self.expect("[")?;
            let index = self.value_exprs_until("]")?;
            self.expect(":")?;
            let ty = self.ty()?;
            let result = self.define(name, ty)?;
            return Ok(Op::Load { result, memref, index });
        }
        for (kw, kind) in [("addf", BinaryKind::Add), ("mulf", BinaryKind::Mul)] {
            if self.eat(kw) {
                let lhs = self.use_value()?;
                self.expect(",")?;
                let rhs = self.use_value()?;
                self.expect(":")?;
                let ty = self.ty()?;
                let result = self.define(name, ty)?;
                return Ok(Op::Binary { result, kind, lhs, rhs });
            }
        }
        if self.eat("fma") {
            let a = self.use_value()?;
            self.expect(",")?;
            let b = self.use_value()?;
            self.expect(",")?;
            let c = self.use_value()?;
            self.expect(":")?;
            let ty = self.ty()?;
            let result = self.define(name, ty)?;
            return Ok(Op::Fma { result, a, b, c });
        }
        if self.eat("splat") {
            let scalar = self.use_value()?;
            self.expect(":")?;
            let ty = self.ty()?;
            let result = self.define(name, ty)?;
            return Ok(Op::Splat { result, scalar });
        }
        if self.eat("memref_shape_cast") {
            let source = self.use_value()?;
            self.expect(":")?;
            let ty = self.ty()?;
            let result = self.define(name, ty)?;
            return Ok(Op::ShapeCast { result, source });
        }
        if self.eat("alloc") {
            self.expect("(")?;
            self.expect(")")?;
            self.expect(":")?;
            let ty = self.ty()?;
            let result = self.define(name, ty)?;
            return Ok(Op::Alloc { result });
        }
        if self.eat("constant") {
            let value = self.float()?;
            self.expect(":")?;
            let ty = self.ty()?;
            let result = self.define(name, ty)?;
            return Ok(Op::Constant { result, value });
        }
        Err(self.err("expected an operation after `=`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_function_round_trips() {
        let text = "func @empty() {\n  return\n}\n";
        let f = parse_function(text).unwrap();
        assert_eq!(super::super::print::print_function(&f), text);
    }

    #[test]
    fn floordiv_by_zero_rejected() {
        let text = "func @f(%0: memref<4xf64>) {\n  affine.for %1 = 0 to 4 {\n    %2 = affine.load %0[%1 floordiv 0] : f64\n  }\n  return\n}\n";
        match parse_function(text) {
            Err(ParseError::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn error_carries_position() {
        let err = parse_function("func @f() {\n  bogus\n}").unwrap_err();
        assert_eq!(err.to_string(), "2:3: expected an operation");
    }

    #[test]
    fn standalone_map() {
        let m = parse_affine_map("(d0, d1) -> (d0 floordiv 4, d1, d0 mod 4)").unwrap();
        assert_eq!(m.eval(&[9, 3], &[]).unwrap(), vec![2, 3, 1]);
        assert!(parse_affine_map("(d0) -> (d0 mod -2)").is_err());
    }
}
