//! Dense row-major kernels behind the matmul and convolution ops.
//!
//! Each product picks the loop order whose innermost loop runs along the
//! longer contiguous axis, which is what lets the compiler vectorize it.
//! Summation order is fixed for a given shape, so results are reproducible.

use crate::tensor::Real;

const LANES: usize = 8;
// Below this width an axpy over the output row is too short to pay off.
const NARROW: usize = 8;

pub(crate) fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut s = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        s = s + x * y;
    }
    acc.iter().fold(s, |t, &v| t + v)
}

#[inline]
fn axpy<T: Real>(dst: &mut [T], alpha: T, x: &[T]) {
    for (d, &v) in dst.iter_mut().zip(x) {
        *d = *d + alpha * v;
    }
}

/// `a (m×k) · b (k×n)`.
pub(crate) fn gemm<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    if n >= NARROW {
        for (dst, arow) in out.chunks_mut(n).zip(a.chunks(k)) {
            for (j, &aij) in arow.iter().enumerate() {
                if aij != T::zero() {
                    axpy(dst, aij, &b[j * n..(j + 1) * n]);
                }
            }
        }
    } else {
        let bt = transpose(b, k, n);
        for (dst, arow) in out.chunks_mut(n).zip(a.chunks(k)) {
            for (d, bcol) in dst.iter_mut().zip(bt.chunks(k)) {
                *d = dot(arow, bcol);
            }
        }
    }
    out
}

/// `a (m×k) · bᵀ` for `b (n×k)`.
pub(crate) fn gemm_bt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    if k >= NARROW {
        let mut out = vec![T::zero(); m * n];
        for (dst, arow) in out.chunks_mut(n).zip(a.chunks(k)) {
            for (d, brow) in dst.iter_mut().zip(b.chunks(k)) {
                *d = dot(arow, brow);
            }
        }
        out
    } else {
        gemm(a, &transpose(b, n, k), m, k, n)
    }
}

/// `aᵀ · b` for `a (m×k)` and `b (m×n)`; the result is k×n.
pub(crate) fn gemm_at<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    if n >= NARROW {
        let mut out = vec![T::zero(); k * n];
        for (arow, brow) in a.chunks(k).zip(b.chunks(n)).take(m) {
            for (j, &aij) in arow.iter().enumerate() {
                if aij != T::zero() {
                    axpy(&mut out[j * n..(j + 1) * n], aij, brow);
                }
            }
        }
        out
    } else {
        // accumulate the n×k transpose with long rows, then flip it
        let mut out_t = vec![T::zero(); n * k];
        for (arow, brow) in a.chunks(k).zip(b.chunks(n)).take(m) {
            for (t, &bv) in brow.iter().enumerate() {
                if bv != T::zero() {
                    axpy(&mut out_t[t * k..(t + 1) * k], bv, arow);
                }
            }
        }
        transpose(&out_t, n, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
            }
        }
        out
    }

    fn close(x: &[f64], y: &[f64]) -> bool {
        x.len() == y.len() && x.iter().zip(y).all(|(a, b)| (a - b).abs() < 1e-12)
    }

    #[test]
    fn all_three_products_match_the_naive_triple_loop() {
        let mut rng = crate::seed::rng(3);
        for &(m, k, n) in &[(1, 1, 1), (3, 5, 2), (7, 20, 9), (4, 2, 17), (16, 33, 3), (5, 9, 8)] {
            let mut r = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect() };
            let (a, b) = (r(m * k), r(k * n));
            let want = naive(&a, &b, m, k, n);
            assert!(close(&gemm(&a, &b, m, k, n), &want));
            assert!(close(&gemm_bt(&a, &transpose(&b, k, n), m, k, n), &want));
            assert!(close(&gemm_at(&transpose(&a, m, k), &b, k, m, n), &want));
        }
    }
}
