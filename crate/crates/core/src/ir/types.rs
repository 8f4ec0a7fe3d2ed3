use std::fmt;

use super::expr::{floor_div, floor_mod, AffineExpr};
use super::map::AffineMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScalarKind {
    F32,
    F64,
}

impl ScalarKind {
    pub fn bytes(self) -> usize {
        match self {
            ScalarKind::F32 => 4,
            ScalarKind::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalarKind::F32 => "f32",
            ScalarKind::F64 => "f64",
        }
    }
}

impl fmt::Display for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScalarKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(ScalarKind::F32),
            "f64" => Ok(ScalarKind::F64),
            _ => Err(format!("unknown element type `{s}`")),
        }
    }
}

/// Element type of a memref or of an arithmetic value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Scalar(ScalarKind),
    Vector { lanes: u32, scalar: ScalarKind },
}

impl ElementKind {
    pub fn scalar_kind(self) -> ScalarKind {
        match self {
            ElementKind::Scalar(s) | ElementKind::Vector { scalar: s, .. } => s,
        }
    }

    pub fn lanes(self) -> usize {
        match self {
            ElementKind::Scalar(_) => 1,
            ElementKind::Vector { lanes, .. } => lanes as usize,
        }
    }

    pub fn bytes(self) -> usize {
        self.lanes() * self.scalar_kind().bytes()
    }

    pub fn is_vector(self) -> bool {
        matches!(self, ElementKind::Vector { .. })
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementKind::Scalar(s) => write!(f, "{s}"),
            ElementKind::Vector { lanes, scalar } => write!(f, "vector<{lanes}x{scalar}>"),
        }
    }
}

/// Shape, element type and layout of a buffer. The memory space is always 0
/// and is not represented.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MemRefType {
    pub shape: Vec<i64>,
    pub element: ElementKind,
    pub layout: AffineMap,
    pub alignment: usize,
}

/// Enumeration cap for injectivity checks.
pub const INJECTIVITY_CHECK_LIMIT: i64 = 1 << 22;

impl MemRefType {
    pub fn new(shape: Vec<i64>, element: ElementKind) -> Self {
        let rank = shape.len();
        MemRefType { shape, element, layout: AffineMap::identity(rank), alignment: element.bytes() }
    }

    pub fn with_layout(mut self, layout: AffineMap) -> Self {
        self.layout = layout;
        self
    }

    pub fn with_alignment(mut self, alignment: usize) -> Self {
        self.alignment = alignment;
        self
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn num_elements(&self) -> i64 {
        self.shape.iter().product()
    }

    pub fn has_identity_layout(&self) -> bool {
        self.layout.is_identity()
    }

    /// Extents of the layout image, computed by interval analysis over the
    /// index domain. Errors when some result can be negative.
    pub fn physical_shape(&self) -> Result<Vec<i64>, String> {
        if self.has_identity_layout() {
            return Ok(self.shape.clone());
        }
        let dom: Vec<(i64, i64)> = self.shape.iter().map(|&s| (0, s - 1)).collect();
        self.layout
            .results
            .iter()
            .map(|e| {
                let (lo, hi) = interval(e, &dom);
                if lo < 0 {
                    Err(format!("layout result `{e}` reaches negative offset {lo}"))
                } else {
                    Ok(hi + 1)
                }
            })
            .collect()
    }

    /// Number of scalars needed to back the buffer, padding included.
    pub fn storage_scalars(&self) -> Result<usize, String> {
        let p = self.physical_shape()?;
        Ok(p.iter().product::<i64>() as usize * self.element.lanes())
    }

    /// Row-major strides of the physical image, in elements.
    pub fn physical_strides(&self) -> Result<Vec<i64>, String> {
        Ok(row_major_strides(&self.physical_shape()?))
    }

    /// Linear element offset (not scaled by lanes) of a logical index.
    pub fn linear_offset(&self, idx: &[i64]) -> Result<i64, String> {
        let strides = self.physical_strides()?;
        let phys = self.layout.eval(idx, &[]).map_err(|e| e.to_string())?;
        Ok(phys.iter().zip(&strides).map(|(p, s)| p * s).sum())
    }

    /// `Some(true/false)` when the domain is small enough to enumerate.
    pub fn layout_is_injective(&self) -> Option<bool> {
        if self.has_identity_layout() {
            return Some(true);
        }
        if self.num_elements() > INJECTIVITY_CHECK_LIMIT {
            return None;
        }
        Some(is_injective(&self.layout, &self.shape))
    }
}

pub fn row_major_strides(shape: &[i64]) -> Vec<i64> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Exhaustive injectivity check of `layout` over the box `[0, shape)`.
pub fn is_injective(layout: &AffineMap, shape: &[i64]) -> bool {
    let dom: Vec<(i64, i64)> = shape.iter().map(|&s| (0, s - 1)).collect();
    let bounds: Vec<(i64, i64)> = layout.results.iter().map(|e| interval(e, &dom)).collect();
    if bounds.iter().any(|(lo, _)| *lo < 0) {
        return fallback_injective(layout, shape);
    }
    let ext: Vec<i64> = bounds.iter().map(|(_, hi)| hi + 1).collect();
    let total: i64 = ext.iter().product();
    if total > 16 * INJECTIVITY_CHECK_LIMIT {
        return fallback_injective(layout, shape);
    }
    let strides = row_major_strides(&ext);
    let mut seen = vec![false; total as usize];
    let mut ok = true;
    for_each_index(shape, |idx| {
        if !ok {
            return;
        }
        let phys = layout.eval(idx, &[]).expect("bound dims");
        let lin: i64 = phys.iter().zip(&strides).map(|(p, s)| p * s).sum();
        let slot = &mut seen[lin as usize];
        if *slot {
            ok = false;
        }
        *slot = true;
    });
    ok
}

fn fallback_injective(layout: &AffineMap, shape: &[i64]) -> bool {
    let mut seen = std::collections::HashSet::new();
    let mut ok = true;
    for_each_index(shape, |idx| {
        ok &= seen.insert(layout.eval(idx, &[]).expect("bound dims"));
    });
    ok
}

/// Calls `f` on every index of the box `[0, shape)` in row-major order.
pub fn for_each_index(shape: &[i64], mut f: impl FnMut(&[i64])) {
    if shape.iter().any(|&s| s <= 0) {
        return;
    }
    let mut idx = vec![0i64; shape.len()];
    loop {
        f(&idx);
        let mut d = shape.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Conservative closed interval of `e` when each `Dim(i)` ranges over `dom[i]`.
pub fn interval(e: &AffineExpr, dom: &[(i64, i64)]) -> (i64, i64) {
    match e {
        AffineExpr::Dim(i) => dom[*i],
        AffineExpr::Symbol(_) => (i64::MIN / 4, i64::MAX / 4),
        AffineExpr::Const(c) => (*c, *c),
        AffineExpr::Add(l, r) => {
            let (a, b) = (interval(l, dom), interval(r, dom));
            (a.0.saturating_add(b.0), a.1.saturating_add(b.1))
        }
        AffineExpr::Mul(l, r) => {
            let (a, b) = (interval(l, dom), interval(r, dom));
            let c = [
                a.0.saturating_mul(b.0),
                a.0.saturating_mul(b.1),
                a.1.saturating_mul(b.0),
                a.1.saturating_mul(b.1),
            ];
            (*c.iter().min().unwrap(), *c.iter().max().unwrap())
        }
        AffineExpr::FloorDiv(l, c) => {
            let a = interval(l, dom);
            (floor_div(a.0, *c), floor_div(a.1, *c))
        }
        AffineExpr::Mod(l, c) => {
            let a = interval(l, dom);
            if floor_div(a.0, *c) == floor_div(a.1, *c) {
                (floor_mod(a.0, *c), floor_mod(a.1, *c))
            } else {
                (0, c - 1)
            }
        }
    }
}

impl fmt::Display for MemRefType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "memref<")?;
        for s in &self.shape {
            write!(f, "{s}x")?;
        }
        write!(f, "{}", self.element)?;
        if !self.has_identity_layout() {
            write!(f, ", {}", self.layout)?;
        }
        if self.alignment != self.element.bytes() {
            write!(f, ", align {}", self.alignment)?;
        }
        write!(f, ">")
    }
}

/// The type of an SSA value.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Type {
    Index,
    Elem(ElementKind),
    MemRef(MemRefType),
}

impl Type {
    pub fn is_index(&self) -> bool {
        matches!(self, Type::Index)
    }

    pub fn as_memref(&self) -> Option<&MemRefType> {
        match self {
            Type::MemRef(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_elem(&self) -> Option<ElementKind> {
        match self {
            Type::Elem(e) => Some(*e),
            _ => None,
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Index => write!(f, "index"),
            Type::Elem(e) => write!(f, "{e}"),
            Type::MemRef(m) => write!(f, "{m}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(i: usize) -> AffineExpr {
        AffineExpr::dim(i)
    }

    #[test]
    fn tiled_layout_image() {
        let t = MemRefType::new(vec![64, 256], ElementKind::Scalar(ScalarKind::F64))
            .with_layout(AffineMap::new(2, 0, vec![d(0).floordiv(4), d(1), d(0).modulo(4)]));
        assert_eq!(t.physical_shape().unwrap(), vec![16, 256, 4]);
        assert_eq!(t.layout_is_injective(), Some(true));
        assert_eq!(t.to_string(), "memref<64x256xf64, (d0, d1) -> (d0 floordiv 4, d1, d0 mod 4)>");
    }

    #[test]
    fn non_injective_layout_detected() {
        let t = MemRefType::new(vec![8, 8], ElementKind::Scalar(ScalarKind::F32))
            .with_layout(AffineMap::new(2, 0, vec![d(0) + d(1)]));
        assert_eq!(t.layout_is_injective(), Some(false));
    }

    #[test]
    fn vector_elements_print() {
        let t = MemRefType::new(
            vec![2048, 512],
            ElementKind::Vector { lanes: 4, scalar: ScalarKind::F64 },
        );
        assert_eq!(t.to_string(), "memref<2048x512xvector<4xf64>>");
        assert_eq!(t.storage_scalars().unwrap(), 2048 * 2048);
    }
}
