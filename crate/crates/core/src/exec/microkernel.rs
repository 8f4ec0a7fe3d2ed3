//! Registry of panel-panel microkernels.
//!
//! A kernel computes `C[row + i, col + j] += sum_k A[k * MR + i] * B[k * NR + j]`
//! for `k < KC`, where `A` is an `MR`-wide packed LHS panel (the tiled layout
//! `(d0 floordiv MR, d1, d0 mod MR)` after normalization), `B` a row-major
//! `KC x NR` RHS panel and `C` is addressed with leading dimension `ldc`.

use crate::ir::{AffineExpr, AffineMap};
use crate::scalar::Scalar;

use super::ExecError;

/// `(a_panel, b_panel, c, row, col, ldc)`
pub type KernelFn<T> = unsafe extern "C" fn(*const T, *const T, *mut T, i64, i64, i64);

#[derive(Clone, Debug)]
pub struct Microkernel<T: Scalar> {
    pub name: String,
    pub mr: i64,
    pub nr: i64,
    pub kc: i64,
    pub func: KernelFn<T>,
}

impl<T: Scalar> Microkernel<T> {
    pub fn new(name: impl Into<String>, mr: i64, nr: i64, kc: i64, func: KernelFn<T>) -> Self {
        Microkernel { name: name.into(), mr, nr, kc, func }
    }

    /// Portable kernel with compile-time panel sizes.
    pub fn reference<const MR: usize, const NR: usize, const KC: usize>() -> Self {
        Microkernel::new(
            format!("ref_{}_{MR}x{NR}_k{KC}", T::KIND),
            MR as i64,
            NR as i64,
            KC as i64,
            reference_kernel::<T, MR, NR, KC>,
        )
    }

    /// Packed LHS layout expected by the kernel.
    pub fn lhs_layout(&self) -> AffineMap {
        tiled_lhs_layout(self.mr)
    }

    /// Scalars read from each panel and the extent touched in `C`.
    pub fn footprint(&self, ldc: i64) -> (i64, i64, i64) {
        (self.mr * self.kc, self.kc * self.nr, (self.mr - 1) * ldc + self.nr)
    }
}

/// `(d0, d1) -> (d0 floordiv mr, d1, d0 mod mr)`
pub fn tiled_lhs_layout(mr: i64) -> AffineMap {
    let d0 = AffineExpr::dim(0);
    AffineMap::new(2, 0, vec![d0.clone().floordiv(mr), AffineExpr::dim(1), d0.modulo(mr)])
}

/// # Safety
/// `a` must hold `MR*KC` elements, `b` `KC*NR`, and `c` must be valid for
/// the `MR x NR` block at `(row, col)` with leading dimension `ldc`.
pub unsafe extern "C" fn reference_kernel<T: Scalar, const MR: usize, const NR: usize, const KC: usize>(
    a: *const T,
    b: *const T,
    c: *mut T,
    row: i64,
    col: i64,
    ldc: i64,
) {
    let a = std::slice::from_raw_parts(a, MR * KC);
    let b = std::slice::from_raw_parts(b, KC * NR);
    let base = c.offset((row * ldc + col) as isize);
    let mut acc = [[T::zero(); NR]; MR];
    for (i, acc_row) in acc.iter_mut().enumerate() {
        for (j, x) in acc_row.iter_mut().enumerate() {
            *x = *base.offset(i as isize * ldc as isize + j as isize);
        }
    }
    for k in 0..KC {
        let bk = &b[k * NR..(k + 1) * NR];
        for (i, acc_row) in acc.iter_mut().enumerate() {
            let aik = a[k * MR + i];
            for (x, &bkj) in acc_row.iter_mut().zip(bk) {
                *x = aik.mul_add(bkj, *x);
            }
        }
    }
    for (i, acc_row) in acc.iter().enumerate() {
        for (j, x) in acc_row.iter().enumerate() {
            *base.offset(i as isize * ldc as isize + j as isize) = *x;
        }
    }
}

#[derive(Clone, Debug)]
pub struct KernelRegistry<T: Scalar> {
    kernels: Vec<Microkernel<T>>,
}

impl<T: Scalar> Default for KernelRegistry<T> {
    fn default() -> Self {
        KernelRegistry { kernels: Vec::new() }
    }
}

impl<T: Scalar> KernelRegistry<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reference kernels for the register tiles `6x8`, `4x8`, `3x16` and
    /// `8x8` at panel depths 128, 256, 480 and 512.
    pub fn with_reference_kernels() -> Self {
        macro_rules! kernels {
            ($($mr:literal x $nr:literal),*) => {
                vec![$(
                    Microkernel::reference::<$mr, $nr, 128>(),
                    Microkernel::reference::<$mr, $nr, 256>(),
                    Microkernel::reference::<$mr, $nr, 480>(),
                    Microkernel::reference::<$mr, $nr, 512>(),
                )*]
            };
        }
        KernelRegistry { kernels: kernels!(6 x 8, 4 x 8, 3 x 16, 8 x 8) }
    }

    pub fn register(&mut self, k: Microkernel<T>) -> Result<(), ExecError> {
        if k.mr < 1 || k.nr < 1 || k.kc < 1 {
            return Err(ExecError::Kernel(format!("kernel {} has non-positive sizes", k.name)));
        }
        if self.kernels.iter().any(|o| o.name == k.name) {
            return Err(ExecError::Kernel(format!("kernel {} already registered", k.name)));
        }
        self.kernels.push(k);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Microkernel<T>> {
        self.kernels.iter().find(|k| k.name == name)
    }

    pub fn find(&self, mr: i64, nr: i64, kc: i64) -> Option<&Microkernel<T>> {
        self.kernels.iter().find(|k| (k.mr, k.nr, k.kc) == (mr, nr, kc))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Microkernel<T>> {
        self.kernels.iter()
    }
}

/// Loads a kernel symbol from a shared library built outside this crate.
#[cfg(feature = "external-kernel")]
pub fn load_external<T: Scalar>(
    path: &std::path::Path,
    symbol: &str,
    mr: i64,
    nr: i64,
    kc: i64,
) -> Result<(Microkernel<T>, libloading::Library), ExecError> {
    // SAFETY: the caller vouches that the library exports `symbol` with the
    // kernel signature.
    unsafe {
        let lib = libloading::Library::new(path).map_err(|e| ExecError::Kernel(e.to_string()))?;
        let f: libloading::Symbol<KernelFn<T>> =
            lib.get(symbol.as_bytes()).map_err(|e| ExecError::Kernel(e.to_string()))?;
        let func = *f;
        Ok((Microkernel::new(symbol, mr, nr, kc, func), lib))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_kernel_matches_naive_block() {
        const MR: usize = 2;
        const NR: usize = 3;
        const KC: usize = 4;
        let a: Vec<f64> = (0..MR * KC).map(|x| x as f64 * 0.5).collect();
        let b: Vec<f64> = (0..KC * NR).map(|x| 1.0 - x as f64 * 0.25).collect();
        let ldc = 5;
        let mut c = vec![1.0f64; 4 * ldc as usize];
        let mut expect = c.clone();
        for i in 0..MR {
            for j in 0..NR {
                for k in 0..KC {
                    let idx = (1 + i) * ldc as usize + 2 + j;
                    expect[idx] = a[k * MR + i].mul_add(b[k * NR + j], expect[idx]);
                }
            }
        }
        let k = Microkernel::<f64>::reference::<MR, NR, KC>();
        unsafe { (k.func)(a.as_ptr(), b.as_ptr(), c.as_mut_ptr(), 1, 2, ldc) };
        assert_eq!(c, expect);
    }

    #[test]
    fn duplicate_registration_rejected() {
        let mut r = KernelRegistry::<f32>::new();
        r.register(Microkernel::reference::<6, 8, 16>()).unwrap();
        assert!(r.register(Microkernel::reference::<6, 8, 16>()).is_err());
        assert!(r.find(6, 8, 16).is_some());
        assert!(r.find(4, 8, 16).is_none());
    }
}
