use crate::exec::tiled_lhs_layout;
use crate::ir::{AffineExpr, AffineMap, CallArg, ForOp, Function, MemRefType, Op, OperandMap, TileParams, Type, ValueId};
use crate::schedule::access;

use super::footprint::{accesses_in, footprint_in, placement};
use super::LayoutError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PackRole {
    Lhs,
    Rhs,
}

/// Where and how to copy a memref into a local buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct PackSpec {
    pub memref: ValueId,
    /// Copy loops are emitted at the start of the body of the `depth`-th
    /// loop accessing the memref; 0 means the function body.
    pub depth: usize,
    /// Layout of the buffer over the footprint box.
    pub layout: AffineMap,
    pub alignment: usize,
}

/// Buffer layout for a packed operand. A microkernel-bound LHS is stored
/// as `M_R`-wide column panels; everything else is row-major.
pub fn choose_pack_layout(params: &TileParams, role: PackRole, microkernel: bool) -> AffineMap {
    match role {
        PackRole::Lhs if microkernel => tiled_lhs_layout(params.mr),
        _ => AffineMap::identity(2),
    }
}

/// Inserts an aligned buffer, a copy nest filling it from the footprint of
/// `spec.memref`, and rewrites the region's accesses to the buffer. Returns
/// the new function and the buffer, or the input unchanged when the memref
/// is not accessed under the placement loop.
pub fn generate_pack(func: &Function, spec: &PackSpec) -> Result<(Function, Option<ValueId>), LayoutError> {
    let memref = spec.memref;
    if !func.body.iter().any(|op| op.accesses(memref)) {
        return Ok((func.clone(), None));
    }
    let (_, region) = placement(func, memref, spec.depth)?;
    let accesses = accesses_in(region, memref);
    if accesses.is_empty() {
        return Ok((func.clone(), None));
    }
    if accesses.iter().any(|(_, written)| *written) {
        return Err(LayoutError::Written(memref.to_string()));
    }
    let fp = footprint_in(func, memref, region)?;
    let src = func.memref_ty(memref).unwrap().clone();
    if spec.layout.num_dims != fp.rank() || spec.layout.num_symbols != 0 {
        return Err(LayoutError::Invalid(format!("layout {} for a rank-{} buffer", spec.layout, fp.rank())));
    }
    if !crate::ir::is_injective(&spec.layout, &fp.extent) {
        return Err(LayoutError::NonInjective(spec.layout.to_string()));
    }
    let buf_ty = MemRefType::new(fp.extent.clone(), src.element)
        .with_layout(spec.layout.clone())
        .with_alignment(spec.alignment);

    let mut f = func.clone();
    let buf = f.new_value(Type::MemRef(buf_ty));
    let ivs: Vec<ValueId> = (0..fp.rank()).map(|_| f.new_value(Type::Index)).collect();
    let val = f.new_value(Type::Elem(src.element));

    let src_index: Vec<AffineExpr> = fp
        .base
        .iter()
        .zip(&ivs)
        .map(|(b, o)| b.clone() + AffineExpr::Dim(o.index()))
        .collect();
    let mut nest = vec![
        Op::Load { result: val, memref, index: OperandMap::from_value_exprs(&src_index) },
        Op::Store { value: val, memref: buf, index: access(&ivs) },
    ];
    for d in (0..fp.rank()).rev() {
        let mut upper = vec![AffineExpr::Const(fp.extent[d])];
        if fp.needs_clamp(d) {
            upper.push(AffineExpr::Const(fp.limit[d]) - fp.base[d].clone());
        }
        nest = vec![Op::For(ForOp {
            iv: ivs[d],
            lower: OperandMap::constant(&[0]),
            upper: OperandMap::from_value_exprs(&upper),
            step: 1,
            body: nest,
        })];
    }

    let mut region = &mut f.body;
    for _ in 0..spec.depth {
        let pos = region
            .iter()
            .position(|op| op.is_loop() && op.accesses(memref))
            .expect("placement checked");
        region = &mut region[pos].as_for_mut().unwrap().body;
    }
    for op in region.iter_mut() {
        redirect(op, memref, buf, &fp.base);
    }
    let mut body = vec![Op::Alloc { result: buf }];
    body.extend(nest);
    body.append(region);
    body.push(Op::Dealloc { memref: buf });
    *region = body;
    Ok((f, Some(buf)))
}

fn shifted(index: &OperandMap, base: &[AffineExpr]) -> OperandMap {
    let exprs: Vec<AffineExpr> = index
        .value_exprs()
        .into_iter()
        .zip(base)
        .map(|(e, b)| e - b.clone())
        .collect();
    OperandMap::from_value_exprs(&exprs)
}

fn redirect(op: &mut Op, from: ValueId, to: ValueId, base: &[AffineExpr]) {
    match op {
        Op::Load { memref, index, .. } if *memref == from => {
            *memref = to;
            *index = shifted(index, base);
        }
        Op::Call { args, .. } => {
            for a in args {
                if let CallArg::Element { memref, index } = a {
                    if *memref == from {
                        *memref = to;
                        *index = shifted(index, base);
                    }
                }
            }
        }
        Op::For(fo) => {
            for o in &mut fo.body {
                redirect(o, from, to, base);
            }
        }
        _ => {}
    }
}
