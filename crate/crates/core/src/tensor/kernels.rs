// Row-major matrix products on top of `matrixmultiply`, with transposes
// expressed through strides.

/// `out[m×n] = a · b` where element `(i, p)` of `a` sits at `i*rsa + p*csa`.
#[allow(clippy::too_many_arguments)]
fn strided(
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    assert!(a.len() >= m * k && b.len() >= k * n, "gemm operand too short");
    // SAFETY: the strides address exactly the `m×k`, `k×n` and `m×n`
    // row-major or transposed buffers checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// `a[m×k] · b[k×n]`
pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    strided(a, k as isize, 1, b, n as isize, 1, m, k, n)
}

/// `a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    strided(a, k as isize, 1, b, 1, k as isize, m, k, n)
}

/// `a[k×m]ᵀ · b[k×n]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    strided(a, 1, m as isize, b, n as isize, 1, m, k, n)
}

/// Stable masked softmax over each row. Masked entries are exactly zero.
pub(crate) fn softmax_rows(
    x: &[f64],
    rows: usize,
    cols: usize,
    mask: Option<&[bool]>,
) -> Result<Vec<f64>, usize> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let keep = |c: usize| mask.is_none_or(|m| m[r * cols + c]);
        let mut max = f64::NEG_INFINITY;
        for (c, &v) in xr.iter().enumerate() {
            if keep(c) && v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(r);
        }
        let or = &mut out[r * cols..(r + 1) * cols];
        let mut total = 0.0;
        for (c, &v) in xr.iter().enumerate() {
            if keep(c) {
                let e = (v - max).exp();
                or[c] = e;
                total += e;
            }
        }
        for v in or.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}
