//! Thin wrappers over the `matrixmultiply` dgemm kernel.
//!
//! Each call is a single sequential GEMM; parallel callers split work into
//! fixed-size blocks themselves so floating-point evaluation order never
//! depends on the number of worker threads.

/// `out = a (m x k, row-major) * b (k x n, row-major)`, overwriting `out`.
pub(crate) fn dispatch_block_gemm(
    a: &[f64],
    m: usize,
    k: usize,
    b: &[f64],
    n: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.fill(0.0);
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out += a^T * b` where `a` is m x k and `b` is m x n, both row-major;
/// the result is k x n.
pub(crate) fn matmul_at_b_accum(
    a: &[f64],
    m: usize,
    k: usize,
    b: &[f64],
    n: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            k,
            m,
            n,
            1.0,
            a.as_ptr(),
            1,
            k as isize,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn gemm_matches_naive() {
        let (m, k, n) = (7, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.3 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * -0.17 + 1.0).collect();
        let mut out = vec![0.0; m * n];
        dispatch_block_gemm(&a, m, k, &b, n, &mut out);
        let want = naive(&a, m, k, &b, n);
        for (x, y) in out.iter().zip(want.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn at_b_accumulates() {
        let (m, k, n) = (4, 3, 2);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..m * n).map(|i| (i as f64) * 0.5).collect();
        let mut out = vec![1.0; k * n];
        matmul_at_b_accum(&a, m, k, &b, n, &mut out);
        for p in 0..k {
            for j in 0..n {
                let mut acc = 1.0;
                for i in 0..m {
                    acc += a[i * k + p] * b[i * n + j];
                }
                assert!((out[p * n + j] - acc).abs() < 1e-12);
            }
        }
    }
}
