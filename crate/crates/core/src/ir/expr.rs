//! Quasi-affine integer expressions.
//!
//! Division and remainder follow floor semantics: `x floordiv c` rounds toward
//! negative infinity and `x mod c` always lies in `[0, c)`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// A quasi-affine expression over dimension and symbol identifiers.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AffineExpr {
    Dim(usize),
    Symbol(usize),
    Const(i64),
    Add(Box<AffineExpr>, Box<AffineExpr>),
    Mul(Box<AffineExpr>, Box<AffineExpr>),
    FloorDiv(Box<AffineExpr>, i64),
    Mod(Box<AffineExpr>, i64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("dimension d{0} is not bound")]
    UnboundDim(usize),
    #[error("symbol s{0} is not bound")]
    UnboundSymbol(usize),
    #[error("division by non-positive constant {0}")]
    BadDivisor(i64),
    #[error("integer overflow")]
    Overflow,
}

pub fn floor_div(a: i64, c: i64) -> i64 {
    a.div_euclid(c)
}

pub fn floor_mod(a: i64, c: i64) -> i64 {
    a.rem_euclid(c)
}

pub fn ceil_div(a: i64, c: i64) -> i64 {
    -floor_div(-a, c)
}

impl AffineExpr {
    pub fn dim(i: usize) -> Self {
        AffineExpr::Dim(i)
    }

    pub fn symbol(i: usize) -> Self {
        AffineExpr::Symbol(i)
    }

    pub fn constant(c: i64) -> Self {
        AffineExpr::Const(c)
    }

    pub fn floordiv(self, c: i64) -> Self {
        AffineExpr::FloorDiv(Box::new(self), c)
    }

    pub fn modulo(self, c: i64) -> Self {
        AffineExpr::Mod(Box::new(self), c)
    }

    pub fn as_const(&self) -> Option<i64> {
        match self {
            AffineExpr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// True when the subtree references no dimension or symbol.
    pub fn is_constant_subtree(&self) -> bool {
        match self {
            AffineExpr::Dim(_) | AffineExpr::Symbol(_) => false,
            AffineExpr::Const(_) => true,
            AffineExpr::Add(l, r) | AffineExpr::Mul(l, r) => {
                l.is_constant_subtree() && r.is_constant_subtree()
            }
            AffineExpr::FloorDiv(l, _) | AffineExpr::Mod(l, _) => l.is_constant_subtree(),
        }
    }

    pub fn eval(&self, dims: &[i64], symbols: &[i64]) -> Result<i64, EvalError> {
        Ok(match self {
            AffineExpr::Dim(i) => *dims.get(*i).ok_or(EvalError::UnboundDim(*i))?,
            AffineExpr::Symbol(i) => *symbols.get(*i).ok_or(EvalError::UnboundSymbol(*i))?,
            AffineExpr::Const(c) => *c,
            AffineExpr::Add(l, r) => l
                .eval(dims, symbols)?
                .checked_add(r.eval(dims, symbols)?)
                .ok_or(EvalError::Overflow)?,
            AffineExpr::Mul(l, r) => l
                .eval(dims, symbols)?
                .checked_mul(r.eval(dims, symbols)?)
                .ok_or(EvalError::Overflow)?,
            AffineExpr::FloorDiv(l, c) => {
                if *c <= 0 {
                    return Err(EvalError::BadDivisor(*c));
                }
                floor_div(l.eval(dims, symbols)?, *c)
            }
            AffineExpr::Mod(l, c) => {
                if *c <= 0 {
                    return Err(EvalError::BadDivisor(*c));
                }
                floor_mod(l.eval(dims, symbols)?, *c)
            }
        })
    }

    /// Visits every node in pre-order.
    pub fn walk(&self, f: &mut impl FnMut(&AffineExpr)) {
        f(self);
        match self {
            AffineExpr::Add(l, r) | AffineExpr::Mul(l, r) => {
                l.walk(f);
                r.walk(f);
            }
            AffineExpr::FloorDiv(l, _) | AffineExpr::Mod(l, _) => l.walk(f),
            _ => {}
        }
    }

    /// Dimensions in order of first appearance.
    pub fn dims_in_order(&self, out: &mut Vec<usize>) {
        self.walk(&mut |e| {
            if let AffineExpr::Dim(d) = e {
                if !out.contains(d) {
                    out.push(*d);
                }
            }
        });
    }

    pub fn uses_dim(&self, d: usize) -> bool {
        let mut found = false;
        self.walk(&mut |e| found |= *e == AffineExpr::Dim(d));
        found
    }

    pub fn max_dim(&self) -> Option<usize> {
        let mut m = None;
        self.walk(&mut |e| {
            if let AffineExpr::Dim(d) = e {
                m = Some(m.map_or(*d, |x: usize| x.max(*d)));
            }
        });
        m
    }

    pub fn max_symbol(&self) -> Option<usize> {
        let mut m = None;
        self.walk(&mut |e| {
            if let AffineExpr::Symbol(s) = e {
                m = Some(m.map_or(*s, |x: usize| x.max(*s)));
            }
        });
        m
    }

    /// Replaces every `Dim(i)` by `f(i)`.
    pub fn replace_dims(&self, f: &impl Fn(usize) -> AffineExpr) -> AffineExpr {
        match self {
            AffineExpr::Dim(i) => f(*i),
            AffineExpr::Symbol(_) | AffineExpr::Const(_) => self.clone(),
            AffineExpr::Add(l, r) => {
                AffineExpr::Add(Box::new(l.replace_dims(f)), Box::new(r.replace_dims(f)))
            }
            AffineExpr::Mul(l, r) => {
                AffineExpr::Mul(Box::new(l.replace_dims(f)), Box::new(r.replace_dims(f)))
            }
            AffineExpr::FloorDiv(l, c) => AffineExpr::FloorDiv(Box::new(l.replace_dims(f)), *c),
            AffineExpr::Mod(l, c) => AffineExpr::Mod(Box::new(l.replace_dims(f)), *c),
        }
    }

    pub fn substitute_dim(&self, d: usize, with: &AffineExpr) -> AffineExpr {
        self.replace_dims(&|i| if i == d { with.clone() } else { AffineExpr::Dim(i) })
    }

    /// Constant folding and linear canonicalization. The result evaluates
    /// identically to `self` under every assignment.
    pub fn simplify(&self) -> AffineExpr {
        match LinearForm::of(self) {
            Some(l) => l.to_expr(),
            None => self.clone(),
        }
    }

    /// Returns the purely linear view of the expression: integer coefficients
    /// on dimensions and symbols plus a constant, or `None` when a floordiv or
    /// mod survives simplification.
    pub fn as_linear(&self) -> Option<(BTreeMap<Atom, i64>, i64)> {
        let lf = LinearForm::of(self)?;
        if lf.terms.keys().any(|a| matches!(a, Atom::Term(_))) {
            return None;
        }
        Some((lf.terms, lf.constant))
    }

    /// Like [`AffineExpr::as_linear`], but surviving floordiv and mod
    /// subterms appear as [`Atom::Term`] atoms.
    pub fn as_linear_with_terms(&self) -> Option<(BTreeMap<Atom, i64>, i64)> {
        let lf = LinearForm::of(self)?;
        Some((lf.terms, lf.constant))
    }
}

impl From<i64> for AffineExpr {
    fn from(c: i64) -> Self {
        AffineExpr::Const(c)
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;
    fn add(self, rhs: AffineExpr) -> AffineExpr {
        AffineExpr::Add(Box::new(self), Box::new(rhs))
    }
}

impl Add<i64> for AffineExpr {
    type Output = AffineExpr;
    fn add(self, rhs: i64) -> AffineExpr {
        self + AffineExpr::Const(rhs)
    }
}

impl Mul<i64> for AffineExpr {
    type Output = AffineExpr;
    fn mul(self, rhs: i64) -> AffineExpr {
        AffineExpr::Mul(Box::new(self), Box::new(AffineExpr::Const(rhs)))
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;
    fn neg(self) -> AffineExpr {
        self * -1
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;
    fn sub(self, rhs: AffineExpr) -> AffineExpr {
        self + (-rhs)
    }
}

impl Sub<i64> for AffineExpr {
    type Output = AffineExpr;
    fn sub(self, rhs: i64) -> AffineExpr {
        self + AffineExpr::Const(-rhs)
    }
}

/// An opaque summand of a linear form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    Dim(usize),
    Symbol(usize),
    /// A simplified floordiv or mod that could not be distributed.
    Term(AffineExpr),
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
struct LinearForm {
    terms: BTreeMap<Atom, i64>,
    constant: i64,
}

impl LinearForm {
    fn constant(c: i64) -> Self {
        LinearForm { terms: BTreeMap::new(), constant: c }
    }

    fn atom(a: Atom) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(a, 1);
        LinearForm { terms, constant: 0 }
    }

    fn as_const(&self) -> Option<i64> {
        self.terms.is_empty().then_some(self.constant)
    }

    fn add(mut self, other: LinearForm) -> LinearForm {
        for (a, c) in other.terms {
            let e = self.terms.entry(a).or_insert(0);
            *e += c;
        }
        self.terms.retain(|_, c| *c != 0);
        self.constant += other.constant;
        self
    }

    fn scale(mut self, k: i64) -> LinearForm {
        if k == 0 {
            return LinearForm::constant(0);
        }
        for c in self.terms.values_mut() {
            *c *= k;
        }
        self.constant *= k;
        self
    }

    /// Returns `None` when the expression contains a product of two
    /// non-constant subexpressions.
    fn of(e: &AffineExpr) -> Option<LinearForm> {
        Some(match e {
            AffineExpr::Dim(i) => LinearForm::atom(Atom::Dim(*i)),
            AffineExpr::Symbol(i) => LinearForm::atom(Atom::Symbol(*i)),
            AffineExpr::Const(c) => LinearForm::constant(*c),
            AffineExpr::Add(l, r) => LinearForm::of(l)?.add(LinearForm::of(r)?),
            AffineExpr::Mul(l, r) => {
                let (l, r) = (LinearForm::of(l)?, LinearForm::of(r)?);
                match (l.as_const(), r.as_const()) {
                    (_, Some(k)) => l.scale(k),
                    (Some(k), None) => r.scale(k),
                    (None, None) => return None,
                }
            }
            AffineExpr::FloorDiv(l, c) => {
                if *c <= 0 {
                    return None;
                }
                let inner = strip_nested_floordiv(l, *c);
                let (l, c) = match &inner {
                    Some((x, c2)) => (LinearForm::of(x)?, *c2),
                    None => (LinearForm::of(l)?, *c),
                };
                LinearForm::floordiv(l, c)
            }
            AffineExpr::Mod(l, c) => {
                if *c <= 0 {
                    return None;
                }
                LinearForm::modulo(LinearForm::of(l)?, *c)
            }
        })
    }

    /// `(c*X + c*q + R + r) floordiv c == X + q + (R + r) floordiv c` with `0 <= r < c`.
    fn floordiv(l: LinearForm, c: i64) -> LinearForm {
        if c == 1 {
            return l;
        }
        let mut out = LinearForm::constant(floor_div(l.constant, c));
        let mut rest = LinearForm::constant(floor_mod(l.constant, c));
        for (a, k) in l.terms {
            if k % c == 0 {
                out = out.add(LinearForm::atom(a).scale(k / c));
            } else {
                rest = rest.add(LinearForm::atom(a).scale(k));
            }
        }
        if !rest.terms.is_empty() {
            out = out.add(LinearForm::atom(Atom::Term(AffineExpr::FloorDiv(
                Box::new(rest.to_expr()),
                c,
            ))));
        }
        out
    }

    fn modulo(l: LinearForm, c: i64) -> LinearForm {
        if c == 1 {
            return LinearForm::constant(0);
        }
        let mut rest = LinearForm::constant(floor_mod(l.constant, c));
        for (a, k) in l.terms {
            let k = floor_mod(k, c);
            if k != 0 {
                rest = rest.add(LinearForm::atom(a).scale(k));
            }
        }
        match rest.as_const() {
            Some(k) => LinearForm::constant(k),
            None => LinearForm::atom(Atom::Term(AffineExpr::Mod(Box::new(rest.to_expr()), c))),
        }
    }

    fn to_expr(&self) -> AffineExpr {
        let mut acc: Option<AffineExpr> = None;
        for (a, k) in &self.terms {
            let base = match a {
                Atom::Dim(i) => AffineExpr::Dim(*i),
                Atom::Symbol(i) => AffineExpr::Symbol(*i),
                Atom::Term(t) => t.clone(),
            };
            let term = if *k == 1 { base } else { base * *k };
            acc = Some(match acc {
                None => term,
                Some(prev) => prev + term,
            });
        }
        match acc {
            None => AffineExpr::Const(self.constant),
            Some(e) if self.constant == 0 => e,
            Some(e) => e + self.constant,
        }
    }
}

/// `(x floordiv a) floordiv b` becomes `x floordiv (a*b)`.
fn strip_nested_floordiv(l: &AffineExpr, c: i64) -> Option<(AffineExpr, i64)> {
    match l {
        AffineExpr::FloorDiv(x, a) if *a > 0 => {
            let (inner, a2) = strip_nested_floordiv(x, *a).unwrap_or(((**x).clone(), *a));
            Some((inner, a2.checked_mul(c)?))
        }
        _ => None,
    }
}

/// Formats an expression with a caller-provided rendering of dimensions and
/// symbols. Parentheses are placed so that the text parses back to exactly
/// the same tree.
pub struct ExprDisplay<'a, F: Fn(&mut fmt::Formatter<'_>, &AffineExpr) -> fmt::Result> {
    pub expr: &'a AffineExpr,
    pub atom: F,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Prec {
    Sum,
    Product,
    Atom,
}

impl<F: Fn(&mut fmt::Formatter<'_>, &AffineExpr) -> fmt::Result> ExprDisplay<'_, F> {
    fn go(&self, f: &mut fmt::Formatter<'_>, e: &AffineExpr, ctx: Prec) -> fmt::Result {
        let own = match e {
            AffineExpr::Add(..) => Prec::Sum,
            AffineExpr::Mul(..) | AffineExpr::FloorDiv(..) | AffineExpr::Mod(..) => Prec::Product,
            _ => Prec::Atom,
        };
        let paren = own < ctx;
        if paren {
            write!(f, "(")?;
        }
        match e {
            AffineExpr::Dim(_) | AffineExpr::Symbol(_) => (self.atom)(f, e)?,
            AffineExpr::Const(c) => write!(f, "{c}")?,
            AffineExpr::Add(l, r) => {
                self.go(f, l, Prec::Sum)?;
                match &**r {
                    AffineExpr::Const(c) if *c < 0 && *c != i64::MIN => write!(f, " - {}", -c)?,
                    AffineExpr::Mul(y, k)
                        if **k == AffineExpr::Const(-1) && y.as_const().is_none() =>
                    {
                        write!(f, " - ")?;
                        self.go(f, y, Prec::Product)?;
                    }
                    _ => {
                        write!(f, " + ")?;
                        self.go(f, r, Prec::Product)?;
                    }
                }
            }
            AffineExpr::Mul(l, r) => {
                self.go(f, l, Prec::Product)?;
                write!(f, " * ")?;
                self.go(f, r, Prec::Atom)?;
            }
            AffineExpr::FloorDiv(l, c) => {
                self.go(f, l, Prec::Product)?;
                write!(f, " floordiv {c}")?;
            }
            AffineExpr::Mod(l, c) => {
                self.go(f, l, Prec::Product)?;
                write!(f, " mod {c}")?;
            }
        }
        if paren {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl<F: Fn(&mut fmt::Formatter<'_>, &AffineExpr) -> fmt::Result> fmt::Display
    for ExprDisplay<'_, F>
{
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.go(f, self.expr, Prec::Sum)
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        ExprDisplay {
            expr: self,
            atom: |f: &mut fmt::Formatter<'_>, e: &AffineExpr| match e {
                AffineExpr::Dim(i) => write!(f, "d{i}"),
                AffineExpr::Symbol(i) => write!(f, "s{i}"),
                _ => unreachable!(),
            },
        }
        .fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(i: usize) -> AffineExpr {
        AffineExpr::dim(i)
    }

    #[test]
    fn floordiv_of_positive() {
        assert_eq!(d(0).floordiv(4).eval(&[9], &[]).unwrap(), 2);
    }

    #[test]
    fn strided_offset() {
        let e = d(0) * 258 + d(1);
        assert_eq!(e.eval(&[2, 5], &[]).unwrap(), 521);
    }

    #[test]
    fn mod_matches_euclidean_identity() {
        // Brute-force oracle over negative and positive operands.
        assert_eq!(d(0).modulo(6).eval(&[11], &[]).unwrap(), 5);
        for c in 1..=9 {
            for x in -20..=20 {
                let q = d(0).floordiv(c).eval(&[x], &[]).unwrap();
                let r = d(0).modulo(c).eval(&[x], &[]).unwrap();
                assert_eq!(q * c + r, x);
                assert!((0..c).contains(&r));
                assert!(q as f64 <= x as f64 / c as f64);
            }
        }
    }

    #[test]
    fn unbound_dim_is_an_error() {
        assert_eq!(d(3).eval(&[1], &[]), Err(EvalError::UnboundDim(3)));
        assert_eq!(AffineExpr::symbol(0).eval(&[], &[]), Err(EvalError::UnboundSymbol(0)));
    }

    #[test]
    fn simplify_cases() {
        assert_eq!((d(0) * 1 + 0).simplify(), d(0));
        assert_eq!(AffineExpr::Const(8).floordiv(4).simplify(), AffineExpr::Const(2));
        assert_eq!((d(0) * 4).floordiv(4).simplify(), d(0));
        assert_eq!((d(0) * 4 + 3).floordiv(4).simplify(), d(0));
        assert_eq!((d(0) * 6 + d(1)).modulo(6).simplify(), d(1).modulo(6));
        assert_eq!(d(0).floordiv(2).floordiv(3).simplify(), d(0).floordiv(6));
        assert_eq!((d(1) - d(1) + 5).simplify(), AffineExpr::Const(5));
    }

    #[test]
    fn simplify_preserves_value_on_samples() {
        let e = (d(0) * 4).floordiv(4);
        let s = e.simplify();
        for x in 0..=100 {
            assert_eq!(e.eval(&[x], &[]).unwrap(), s.eval(&[x], &[]).unwrap());
        }
    }

    #[test]
    fn display_forms() {
        assert_eq!((d(0) * 16 + 16).to_string(), "d0 * 16 + 16");
        assert_eq!((d(0) - d(1)).to_string(), "d0 - d1");
        assert_eq!((d(0) + -5).to_string(), "d0 - 5");
        assert_eq!((d(0) + d(1)).floordiv(4).to_string(), "(d0 + d1) floordiv 4");
        assert_eq!(AffineExpr::Mul(Box::new(d(0)), Box::new(d(1) + 1)).to_string(), "d0 * (d1 + 1)");
    }
}
