use std::alloc::{alloc_zeroed, dealloc, Layout};
use std::ops::{Deref, DerefMut};
use std::ptr::NonNull;

use crate::ir::{for_each_index, MemRefType};
use crate::scalar::Scalar;

use super::ExecError;

/// Heap storage with a caller-chosen base alignment.
pub struct AlignedVec<T> {
    ptr: NonNull<T>,
    len: usize,
    layout: Layout,
}

unsafe impl<T: Send> Send for AlignedVec<T> {}
unsafe impl<T: Sync> Sync for AlignedVec<T> {}

impl<T: Scalar> AlignedVec<T> {
    /// Zero-filled storage for `len` elements aligned to `align` bytes.
    pub fn zeroed(len: usize, align: usize) -> Self {
        let align = align.max(std::mem::align_of::<T>()).next_power_of_two();
        let bytes = (len * std::mem::size_of::<T>()).max(1);
        let layout = Layout::from_size_align(bytes, align).expect("buffer layout");
        // SAFETY: the layout has non-zero size.
        let raw = unsafe { alloc_zeroed(layout) } as *mut T;
        let ptr = NonNull::new(raw).unwrap_or_else(|| std::alloc::handle_alloc_error(layout));
        AlignedVec { ptr, len, layout }
    }

    pub fn alignment(&self) -> usize {
        self.layout.align()
    }
}

impl<T> Deref for AlignedVec<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        // SAFETY: `ptr` owns `len` initialized elements.
        unsafe { std::slice::from_raw_parts(self.ptr.as_ptr(), self.len) }
    }
}

impl<T> DerefMut for AlignedVec<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        // SAFETY: as above, and `&mut self` is unique.
        unsafe { std::slice::from_raw_parts_mut(self.ptr.as_ptr(), self.len) }
    }
}

impl<T> Drop for AlignedVec<T> {
    fn drop(&mut self) {
        // SAFETY: allocated in `zeroed` with this layout.
        unsafe { dealloc(self.ptr.as_ptr() as *mut u8, self.layout) }
    }
}

impl<T: Scalar> Clone for AlignedVec<T> {
    fn clone(&self) -> Self {
        let mut v = AlignedVec::zeroed(self.len, self.layout.align());
        v.copy_from_slice(self);
        v
    }
}

/// A memref-typed tensor: flat storage sized to the layout image.
#[derive(Clone)]
pub struct TensorBuffer<T: Scalar> {
    ty: MemRefType,
    data: AlignedVec<T>,
    strides: Vec<i64>,
}

impl<T: Scalar> std::fmt::Debug for TensorBuffer<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TensorBuffer({}, {} scalars)", self.ty, self.data.len())
    }
}

impl<T: Scalar> TensorBuffer<T> {
    pub fn zeros(ty: MemRefType) -> Result<Self, ExecError> {
        if ty.element.scalar_kind() != T::KIND {
            return Err(ExecError::Type(format!("buffer of {} cannot hold {ty}", T::KIND)));
        }
        let len = ty.storage_scalars().map_err(ExecError::Type)?;
        let strides = ty.physical_strides().map_err(ExecError::Type)?;
        let align = ty.alignment.max(64);
        Ok(TensorBuffer { data: AlignedVec::zeroed(len, align), ty, strides })
    }

    /// Fills every logical element (and every lane) in row-major order.
    pub fn from_fn(ty: MemRefType, mut f: impl FnMut(&[i64]) -> T) -> Result<Self, ExecError> {
        let mut b = Self::zeros(ty)?;
        let shape = b.ty.shape.clone();
        let lanes = b.ty.element.lanes();
        for_each_index(&shape, |idx| {
            let off = b.offset(idx);
            let v = f(idx);
            for l in 0..lanes {
                b.data[off + l] = v;
            }
        });
        Ok(b)
    }

    pub fn ty(&self) -> &MemRefType {
        &self.ty
    }

    /// Scalar offset of the first lane of a logical element.
    pub fn offset(&self, idx: &[i64]) -> usize {
        let phys = self.ty.layout.eval(idx, &[]).expect("index arity matches rank");
        let lin: i64 = phys.iter().zip(&self.strides).map(|(p, s)| p * s).sum();
        lin as usize * self.ty.element.lanes()
    }

    pub fn get(&self, idx: &[i64]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[i64], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn as_mut_ptr(&mut self) -> *mut T {
        self.data.as_mut_ptr()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn base_alignment(&self) -> usize {
        self.data.alignment()
    }

    /// Logical elements in row-major order, lanes expanded.
    pub fn to_logical(&self) -> Vec<T> {
        let lanes = self.ty.element.lanes();
        let mut out = Vec::with_capacity(self.ty.num_elements() as usize * lanes);
        for_each_index(&self.ty.shape, |idx| {
            let o = self.offset(idx);
            out.extend_from_slice(&self.data[o..o + lanes]);
        });
        out
    }
}
