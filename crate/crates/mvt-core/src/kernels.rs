//! Raw dense kernels shared by forward ops and backward rules.
//!
//! All kernels accumulate left-to-right in the row index so results are
//! bit-reproducible run to run. `acc = true` adds into `out` instead of
//! overwriting, which is how gradient accumulation stays allocation-free.

use crate::element::Element;

/// out[m,n] (+)= a[m,k] * b[k,n]
pub fn matmul_nn<T: Element>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize, acc: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if !acc {
        out.fill(T::zero());
    }
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o = *o + aip * bv;
            }
        }
    }
}

/// out[m,p] (+)= a[m,k] * b[p,k]^T  (row-by-row dot products)
pub fn matmul_nt<T: Element>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, p: usize, acc: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), p * k);
    debug_assert_eq!(out.len(), m * p);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..p {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                s = s + av * bv;
            }
            let o = &mut out[i * p + j];
            *o = if acc { *o + s } else { s };
        }
    }
}

/// out[k,n] (+)= a[m,k]^T * b[m,n]
pub fn matmul_tn<T: Element>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize, acc: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    if !acc {
        out.fill(T::zero());
    }
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o = *o + aip * bv;
            }
        }
    }
}

/// out (+)= x * c elementwise
pub fn axpy<T: Element>(out: &mut [T], x: &[T], c: T, acc: bool) {
    debug_assert_eq!(out.len(), x.len());
    if acc {
        for (o, &v) in out.iter_mut().zip(x.iter()) {
            *o = *o + v * c;
        }
    } else {
        for (o, &v) in out.iter_mut().zip(x.iter()) {
            *o = v * c;
        }
    }
}
