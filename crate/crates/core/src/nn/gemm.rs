//! Thin safe wrapper over `matrixmultiply::sgemm`.

/// `c = a * b + beta * c` for row-major `c` (`m x n`); `a` is `m x k` and `b`
/// is `k x n`, each addressed through explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "output too small");
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa, "lhs out of bounds");
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb, "rhs out of bounds");
    }
    // SAFETY: the asserts above bound every element the kernel reads or writes.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
