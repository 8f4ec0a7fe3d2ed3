use crate::ir::{AffineExpr, AffineMap, CallArg, Function, MemRefType, Op, OperandMap, Type};

use super::LayoutError;

/// Identity-layout type over the image of `ty`'s layout, and the map that
/// rewrites logical indices into the new type (the old layout).
pub fn normalize_memref(ty: &MemRefType) -> Result<(MemRefType, AffineMap), LayoutError> {
    if ty.has_identity_layout() {
        return Ok((ty.clone(), AffineMap::identity(ty.rank())));
    }
    if ty.layout_is_injective() == Some(false) {
        return Err(LayoutError::NonInjective(ty.layout.to_string()));
    }
    let shape = ty.physical_shape().map_err(LayoutError::Invalid)?;
    let out = MemRefType::new(shape, ty.element).with_alignment(ty.alignment);
    Ok((out, ty.layout.clone()))
}

/// Normalizes every memref value of `func`, composing accesses with the
/// old layouts. Argument storage is unchanged: a buffer holds the layout
/// image in row-major order either way.
pub fn normalize_memrefs(func: &Function) -> Result<Function, LayoutError> {
    let mut f = func.clone();
    let mut rewrites = vec![None; f.values.len()];
    for (i, ty) in func.values.iter().enumerate() {
        if let Type::MemRef(t) = ty {
            if !t.has_identity_layout() {
                let (nt, map) = normalize_memref(t)?;
                f.values[i] = Type::MemRef(nt);
                rewrites[i] = Some(map);
            }
        }
    }
    if rewrites.iter().all(Option::is_none) {
        return Ok(f);
    }
    for op in &mut f.body {
        rewrite(op, &rewrites);
    }
    Ok(f)
}

fn compose(layout: &AffineMap, index: &OperandMap) -> OperandMap {
    let inner = index.value_exprs();
    let exprs: Vec<AffineExpr> = layout.results.iter().map(|e| e.replace_dims(&|d| inner[d].clone())).collect();
    OperandMap::from_value_exprs(&exprs)
}

fn rewrite(op: &mut Op, maps: &[Option<AffineMap>]) {
    match op {
        Op::Load { memref, index, .. } | Op::Store { memref, index, .. } => {
            if let Some(m) = &maps[memref.index()] {
                *index = compose(m, index);
            }
        }
        Op::Call { args, .. } => {
            for a in args {
                if let CallArg::Element { memref, index } = a {
                    if let Some(m) = &maps[memref.index()] {
                        *index = compose(m, index);
                    }
                }
            }
        }
        Op::For(fo) => {
            for o in &mut fo.body {
                rewrite(o, maps);
            }
        }
        _ => {}
    }
}
