use std::fmt;

use super::expr::{AffineExpr, ExprDisplay};

/// A multi-result quasi-affine map `(d0, ..)[s0, ..] -> (e0, ..)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AffineMap {
    pub num_dims: usize,
    pub num_symbols: usize,
    pub results: Vec<AffineExpr>,
}

impl AffineMap {
    pub fn new(num_dims: usize, num_symbols: usize, results: Vec<AffineExpr>) -> Self {
        AffineMap { num_dims, num_symbols, results }
    }

    pub fn identity(rank: usize) -> Self {
        AffineMap::new(rank, 0, (0..rank).map(AffineExpr::Dim).collect())
    }

    pub fn constant(values: &[i64]) -> Self {
        AffineMap::new(0, 0, values.iter().map(|&c| AffineExpr::Const(c)).collect())
    }

    pub fn is_identity(&self) -> bool {
        self.num_symbols == 0
            && self.results.len() == self.num_dims
            && self.results.iter().enumerate().all(|(i, e)| *e == AffineExpr::Dim(i))
    }

    pub fn num_results(&self) -> usize {
        self.results.len()
    }

    pub fn eval(&self, dims: &[i64], symbols: &[i64]) -> Result<Vec<i64>, super::expr::EvalError> {
        self.results.iter().map(|e| e.eval(dims, symbols)).collect()
    }

    /// `self ∘ inner`: feeds the results of `inner` into the dimensions of `self`.
    pub fn compose(&self, inner: &AffineMap) -> AffineMap {
        assert_eq!(self.num_dims, inner.num_results(), "compose arity mismatch");
        let results = self
            .results
            .iter()
            .map(|e| e.replace_dims(&|i| inner.results[i].clone()).simplify())
            .collect();
        AffineMap::new(inner.num_dims, inner.num_symbols.max(self.num_symbols), results)
    }

    pub fn simplify(&self) -> AffineMap {
        AffineMap::new(
            self.num_dims,
            self.num_symbols,
            self.results.iter().map(AffineExpr::simplify).collect(),
        )
    }

    /// Structural invariant violations, if any.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        for e in &self.results {
            check_expr(e, self.num_dims, self.num_symbols, &mut out);
        }
        out
    }
}

pub(crate) fn check_expr(e: &AffineExpr, num_dims: usize, num_symbols: usize, out: &mut Vec<String>) {
    e.walk(&mut |n| match n {
        AffineExpr::Dim(i) if *i >= num_dims => {
            out.push(format!("d{i} out of range for {num_dims} dimension(s)"))
        }
        AffineExpr::Symbol(i) if *i >= num_symbols => {
            out.push(format!("s{i} out of range for {num_symbols} symbol(s)"))
        }
        AffineExpr::Mul(l, r) if !l.is_constant_subtree() && !r.is_constant_subtree() => {
            out.push(format!("non-affine product `{n}`"))
        }
        AffineExpr::FloorDiv(_, c) | AffineExpr::Mod(_, c) if *c <= 0 => {
            out.push(format!("non-positive divisor {c}"))
        }
        _ => {}
    });
}

impl fmt::Display for AffineMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for i in 0..self.num_dims {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "d{i}")?;
        }
        write!(f, ")")?;
        if self.num_symbols > 0 {
            write!(f, "[")?;
            for i in 0..self.num_symbols {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "s{i}")?;
            }
            write!(f, "]")?;
        }
        write!(f, " -> (")?;
        for (i, e) in self.results.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

/// Formats `e` with `Dim(i)` rendered through `names[i]`.
pub(crate) fn display_with_names<'a>(
    e: &'a AffineExpr,
    names: &'a [String],
) -> impl fmt::Display + 'a {
    ExprDisplay {
        expr: e,
        atom: move |f: &mut fmt::Formatter<'_>, a: &AffineExpr| match a {
            AffineExpr::Dim(i) => write!(f, "{}", names[*i]),
            AffineExpr::Symbol(i) => write!(f, "s{i}"),
            _ => unreachable!(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_prints_and_detects() {
        let m = AffineMap::identity(2);
        assert!(m.is_identity());
        assert_eq!(m.to_string(), "(d0, d1) -> (d0, d1)");
    }

    #[test]
    fn compose_substitutes() {
        let layout = AffineMap::new(
            2,
            0,
            vec![
                AffineExpr::dim(0).floordiv(4),
                AffineExpr::dim(1),
                AffineExpr::dim(0).modulo(4),
            ],
        );
        let access = AffineMap::new(1, 0, vec![AffineExpr::dim(0) * 4 + 1, AffineExpr::Const(7)]);
        let c = layout.compose(&access);
        assert_eq!(c.eval(&[3], &[]).unwrap(), vec![3, 7, 1]);
        assert_eq!(c.results[0], AffineExpr::dim(0));
    }

    #[test]
    fn check_flags_bad_maps() {
        let m = AffineMap::new(
            1,
            0,
            vec![AffineExpr::Mul(Box::new(AffineExpr::dim(0)), Box::new(AffineExpr::dim(0)))],
        );
        assert_eq!(m.check().len(), 1);
        let m = AffineMap::new(1, 0, vec![AffineExpr::dim(2)]);
        assert_eq!(m.check().len(), 1);
    }
}
