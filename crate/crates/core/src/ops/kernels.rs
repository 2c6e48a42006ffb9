//! Inner-loop float kernels.
//!
//! Both kernels keep a fixed accumulation order (8 independent lanes, then a
//! fixed combining tree), which LLVM can vectorize without reassociating
//! floating-point math — results are bit-identical across runs and across
//! SIMD widths, which the determinism contracts rely on.

use crate::num::Real;

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb.iter()) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// y += k * x
pub(crate) fn axpy<T: Real>(y: &mut [T], x: &[T], k: T) {
    debug_assert_eq!(y.len(), x.len());
    for (yy, xx) in y.iter_mut().zip(x.iter()) {
        *yy = *yy + k * *xx;
    }
}
