use std::collections::HashMap;

use crate::ir::{AffineExpr, Atom, CallArg, ForOp, Function, Op, OperandMap, ValueId};

use super::LayoutError;

/// The region of a memref touched under a loop, for fixed outer ivs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FootprintBox {
    /// Per dimension, the first index touched; `Dim(n)` denotes `ValueId(n)`.
    pub base: Vec<AffineExpr>,
    pub extent: Vec<i64>,
    /// The memref's extents, clamping boxes of boundary tiles.
    pub limit: Vec<i64>,
}

impl FootprintBox {
    pub fn rank(&self) -> usize {
        self.extent.len()
    }

    /// True when the box can run past the end of the memref for some tile.
    pub fn needs_clamp(&self, d: usize) -> bool {
        match self.base[d].as_const() {
            Some(b) => b + self.extent[d] > self.limit[d],
            None => {
                // Bases that are multiples of a dividing extent never overrun.
                let ext = self.extent[d];
                let aligned = match self.base[d].as_linear() {
                    Some((terms, c)) => c % ext == 0 && terms.values().all(|k| k % ext == 0),
                    None => false,
                };
                !aligned || self.limit[d] % ext != 0
            }
        }
    }
}

/// Ivs enclosing the placement point and the region under it: the body of
/// the `depth`-th loop on the unique path of loops that access `memref`.
pub(crate) fn placement(func: &Function, memref: ValueId, depth: usize) -> Result<(Vec<ValueId>, &[Op]), LayoutError> {
    let mut region: &[Op] = &func.body;
    let mut ivs = Vec::new();
    for _ in 0..depth {
        let loops: Vec<&ForOp> = region
            .iter()
            .filter(|op| op.accesses(memref))
            .filter_map(Op::as_for)
            .collect();
        let [l] = loops[..] else {
            return Err(LayoutError::Placement { memref: memref.to_string(), depth });
        };
        ivs.push(l.iv);
        region = &l.body;
    }
    Ok((ivs, region))
}

/// Index maps of every access to `memref` in `region`, with a flag for stores.
pub(crate) fn accesses_in(region: &[Op], memref: ValueId) -> Vec<(&OperandMap, bool)> {
    let mut out = Vec::new();
    for op in region {
        op.walk(&mut |o| match o {
            Op::Load { memref: m, index, .. } if *m == memref => out.push((index, false)),
            Op::Store { memref: m, index, .. } if *m == memref => out.push((index, true)),
            Op::Call { args, .. } => {
                for a in args {
                    if let CallArg::Element { memref: m, index } = a {
                        if *m == memref {
                            out.push((index, true));
                        }
                    }
                }
            }
            _ => {}
        });
    }
    out
}

pub fn compute_footprint(func: &Function, memref: ValueId, depth: usize) -> Result<FootprintBox, LayoutError> {
    let (_, region) = placement(func, memref, depth)?;
    footprint_in(func, memref, region)
}

pub(crate) fn footprint_in(func: &Function, memref: ValueId, region: &[Op]) -> Result<FootprintBox, LayoutError> {
    let ty = func
        .memref_ty(memref)
        .ok_or_else(|| LayoutError::Invalid(format!("{memref} is not a memref")))?;
    let mut loops: HashMap<usize, &ForOp> = HashMap::new();
    for op in region {
        op.walk(&mut |o| {
            if let Op::For(f) = o {
                loops.insert(f.iv.index(), f);
            }
        });
    }
    let accesses = accesses_in(region, memref);
    if accesses.is_empty() {
        return Err(LayoutError::Unused(memref.to_string()));
    }
    let rank = ty.rank();
    let mut base: Vec<Option<AffineExpr>> = vec![None; rank];
    let mut extent = vec![0i64; rank];
    for (index, _) in &accesses {
        for (d, e) in index.value_exprs().into_iter().enumerate() {
            check_unit(&e, &loops)?;
            let lo = extreme(e.clone(), false, &loops)?;
            let hi = extreme(e.clone(), true, &loops)?;
            let ext = (hi - lo.clone()).simplify().as_const().ok_or_else(|| LayoutError::NonRectangular(memref.to_string()))? + 1;
            match &base[d] {
                None => {
                    base[d] = Some(lo);
                    extent[d] = ext;
                }
                Some(b) => {
                    let delta = (lo.clone() - b.clone())
                        .simplify()
                        .as_const()
                        .ok_or_else(|| LayoutError::NonRectangular(memref.to_string()))?;
                    if delta < 0 {
                        extent[d] = (extent[d] - delta).max(ext);
                        base[d] = Some(lo);
                    } else {
                        extent[d] = extent[d].max(delta + ext);
                    }
                }
            }
        }
    }
    for (x, &s) in extent.iter_mut().zip(&ty.shape) {
        *x = (*x).min(s);
    }
    Ok(FootprintBox { base: base.into_iter().map(Option::unwrap).collect(), extent, limit: ty.shape.clone() })
}

fn check_unit(e: &AffineExpr, loops: &HashMap<usize, &ForOp>) -> Result<(), LayoutError> {
    let (terms, _) = e.as_linear().ok_or_else(|| LayoutError::NonAffine(e.to_string()))?;
    for (atom, coef) in terms {
        match atom {
            Atom::Dim(v) if loops.contains_key(&v) && coef != 1 => return Err(LayoutError::NonAffine(e.to_string())),
            Atom::Term(t) if inner_dims(&t, loops).next().is_some() => {
                return Err(LayoutError::NonAffine(e.to_string()))
            }
            _ => {}
        }
    }
    Ok(())
}

fn inner_dims<'a>(e: &AffineExpr, loops: &'a HashMap<usize, &ForOp>) -> impl Iterator<Item = usize> + 'a {
    let mut ds = Vec::new();
    e.dims_in_order(&mut ds);
    ds.into_iter().filter(move |d| loops.contains_key(d))
}

/// Minimum (or maximum) of `e` over the inner loops, as an expression in
/// the outer ivs. Upper bounds use the unclamped tile bound.
fn extreme(mut e: AffineExpr, max: bool, loops: &HashMap<usize, &ForOp>) -> Result<AffineExpr, LayoutError> {
    while let Some(v) = inner_dims(&e, loops).next() {
        let (terms, _) = e.as_linear().ok_or_else(|| LayoutError::NonAffine(e.to_string()))?;
        let coef = terms.get(&Atom::Dim(v)).copied().ok_or_else(|| LayoutError::NonAffine(e.to_string()))?;
        let l = loops[&v];
        let with = if max == (coef > 0) { unclamped_upper(l)? - 1 } else { single_lower(l)? };
        e = e.substitute_dim(v, &with).simplify();
    }
    Ok(e)
}

fn single_lower(l: &ForOp) -> Result<AffineExpr, LayoutError> {
    let lows = l.lower.value_exprs();
    match &lows[..] {
        [one] => Ok(one.clone()),
        _ => Err(LayoutError::NonRectangular(format!("loop {} has a multi-part lower bound", l.iv))),
    }
}

fn unclamped_upper(l: &ForOp) -> Result<AffineExpr, LayoutError> {
    let ups = l.upper.value_exprs();
    let (consts, vars): (Vec<_>, Vec<_>) = ups.into_iter().partition(|e| e.as_const().is_some());
    match &vars[..] {
        [one] => Ok(one.clone()),
        [] => Ok(AffineExpr::Const(consts.iter().filter_map(AffineExpr::as_const).min().unwrap())),
        _ => Err(LayoutError::NonRectangular(format!("loop {} has several variable upper bounds", l.iv))),
    }
}
