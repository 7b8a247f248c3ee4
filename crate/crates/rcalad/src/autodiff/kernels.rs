//! Thin wrappers over the `matrixmultiply` GEMM kernels.
//!
//! All buffers are row-major. Transposition is expressed through strides, so
//! no operand is ever materialized transposed.

/// `c = alpha * op(a) * op(b) + beta * c`.
///
/// Logical dims after transposition are `op(a): [m, k]`, `op(b): [k, n]`,
/// `c: [m, n]`. `ta`/`tb` say whether the underlying buffer is stored as the
/// transpose (i.e. `a` holds `[k, m]` when `ta` is set).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
