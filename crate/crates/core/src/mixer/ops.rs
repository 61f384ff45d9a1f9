//! Scalar non-linearities, layer norm and the small dense kernels the mixer
//! is built from. Matrices are row-major slices with explicit dimensions.

use alloc::vec::Vec;

use crate::real::Real;

pub const LN_EPS: f64 = 1e-6;

/// Exact GELU, `x * Phi(x)` with `Phi` from `erf`.
#[inline]
pub fn gelu<S: Real>(x: S) -> S {
    x * normal_cdf(x)
}

#[inline]
pub fn gelu_grad<S: Real>(x: S) -> S {
    gelu_grad_with_cdf(x, normal_cdf(x))
}

/// `gelu'(x)` given a precomputed `Phi(x)`.
#[inline]
pub(crate) fn gelu_grad_with_cdf<S: Real>(x: S, cdf: S) -> S {
    let pdf = (-(x * x) * S::lit(0.5)).exp() * S::lit(core::f64::consts::FRAC_2_SQRT_PI * core::f64::consts::FRAC_1_SQRT_2 * 0.5);
    cdf + x * pdf
}

#[inline]
pub(crate) fn normal_cdf<S: Real>(x: S) -> S {
    S::lit(0.5) * (S::one() + (x * S::lit(core::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Layer norm of `v` with biased variance and `eps = 1e-6`.
pub fn layer_norm<S: Real>(v: &[S], scale: &[S], shift: &[S]) -> Vec<S> {
    let mut out = alloc::vec![S::zero(); v.len()];
    let mut xhat = alloc::vec![S::zero(); v.len()];
    layer_norm_row(v, scale, shift, &mut xhat, &mut out);
    out
}

/// Normalizes one row; writes the standardized values to `xhat` and the
/// affine output to `out`. Returns `1 / sqrt(var + eps)`.
pub(crate) fn layer_norm_row<S: Real>(v: &[S], scale: &[S], shift: &[S], xhat: &mut [S], out: &mut [S]) -> S {
    let d = S::lit(v.len() as f64);
    let mean = v.iter().copied().sum::<S>() / d;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / d;
    let rstd = S::one() / (var + S::lit(LN_EPS)).sqrt();
    for i in 0..v.len() {
        xhat[i] = (v[i] - mean) * rstd;
        out[i] = xhat[i] * scale[i] + shift[i];
    }
    rstd
}

/// Backward of one layer-norm row. Accumulates into `dscale`/`dshift` and
/// adds the input gradient into `dx`.
pub(crate) fn layer_norm_row_backward<S: Real>(
    dy: &[S],
    xhat: &[S],
    rstd: S,
    scale: &[S],
    dscale: &mut [S],
    dshift: &mut [S],
    dx: &mut [S],
) {
    let d = S::lit(dy.len() as f64);
    let mut mean_dxhat = S::zero();
    let mut mean_dxhat_xhat = S::zero();
    for i in 0..dy.len() {
        dscale[i] += dy[i] * xhat[i];
        dshift[i] += dy[i];
        let g = dy[i] * scale[i];
        mean_dxhat += g;
        mean_dxhat_xhat += g * xhat[i];
    }
    mean_dxhat = mean_dxhat / d;
    mean_dxhat_xhat = mean_dxhat_xhat / d;
    for i in 0..dy.len() {
        let g = dy[i] * scale[i];
        dx[i] += rstd * (g - mean_dxhat - xhat[i] * mean_dxhat_xhat);
    }
}

/// `c (m x n) += a (m x k) * b (k x n)`.
pub(crate) fn gemm_nn<S: Real>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            axpy(aip, &b[p * n..(p + 1) * n], c_row);
        }
    }
}

/// `c (m x n) += a^T * b` with `a` stored `k x m`, `b` stored `k x n`.
pub(crate) fn gemm_tn<S: Real>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() == k * m && b.len() == k * n && c.len() == m * n);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == S::zero() {
                continue;
            }
            axpy(api, b_row, &mut c[i * n..(i + 1) * n]);
        }
    }
}

/// `c (m x n) += a * b^T` with `a` stored `m x k`, `b` stored `n x k`.
pub(crate) fn gemm_nt<S: Real>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    let bt = transpose(n, k, b);
    gemm_nn(m, k, n, a, &bt, c);
}

/// Transpose of a `rows x cols` matrix.
pub(crate) fn transpose<S: Real>(rows: usize, cols: usize, a: &[S]) -> Vec<S> {
    let mut out = alloc::vec![S::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[inline]
fn axpy<S: Real>(alpha: S, x: &[S], y: &mut [S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
