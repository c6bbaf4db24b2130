//! Scalar abstraction and the flat-array kernels behind the transformer.
//!
//! Everything is generic over [`Scalar`] so the production path runs at f32
//! while the finite-difference gradient check instantiates the identical code
//! at f64. All reductions run in a fixed order; results are bit-reproducible
//! for a given build.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + PartialOrd
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(x: f32) -> Self;
    fn to_f32(self) -> f32;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_scalar_common {
    ($t:ty) => {
        const ZERO: Self = 0.0;
        const ONE: Self = 1.0;
        #[inline(always)]
        fn from_f64(x: f64) -> Self {
            x as $t
        }
        #[inline(always)]
        fn to_f64(self) -> f64 {
            self as f64
        }
        #[inline(always)]
        fn from_f32(x: f32) -> Self {
            x as $t
        }
        #[inline(always)]
        fn to_f32(self) -> f32 {
            self as f32
        }
        #[inline(always)]
        fn ln(self) -> Self {
            self.ln()
        }
        #[inline(always)]
        fn sqrt(self) -> Self {
            self.sqrt()
        }
        #[inline(always)]
        fn abs(self) -> Self {
            self.abs()
        }
        #[inline(always)]
        fn maximum(self, other: Self) -> Self {
            if self > other {
                self
            } else {
                other
            }
        }
        #[inline(always)]
        fn is_finite(self) -> bool {
            <$t>::is_finite(self)
        }
    };
}

impl Scalar for f64 {
    impl_scalar_common!(f64);
    #[inline(always)]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline(always)]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

impl Scalar for f32 {
    impl_scalar_common!(f32);
    #[inline(always)]
    fn exp(self) -> Self {
        exp_f32(self)
    }
    #[inline(always)]
    fn tanh(self) -> Self {
        // tanh(x) = 2 / (1 + exp(-2x)) - 1, saturating with the exp clamp.
        let e = exp_f32(-2.0 * self);
        2.0 / (1.0 + e) - 1.0
    }
}

/// Fast exp for the f32 path: split x = n*ln2 + r, build 2^n by exponent-bit
/// assembly, approximate e^r by a degree-5 Taylor on |r| <= ln2/2 (relative
/// error ~2e-6). The softmax/GELU calls dominate forward time; libm's expf
/// costs several times more. The backward pass reuses the very same
/// function, so gradients stay exactly consistent with the forward values.
#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const LOG2_E: f32 = std::f32::consts::LOG2_E;
    const LN_2: f32 = std::f32::consts::LN_2;
    let x = x.clamp(-87.0, 88.0);
    let t = x * LOG2_E;
    let n = t.round_ties_even();
    let r = (t - n) * LN_2; // |r| <= ln2/2
    let p = 1.0
        + r * (1.0
            + r * (0.5 + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0)))));
    let bits = (((n as i32) + 127) << 23) as u32;
    f32::from_bits(bits) * p
}

const LANES: usize = 8;

/// Dot product with eight explicit accumulator lanes so the loop vectorizes
/// without float reassociation; lane order is fixed, so results are
/// deterministic.
#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / LANES;
    let mut acc = [F::ZERO; LANES];
    for c in 0..chunks {
        let i = c * LANES;
        let aa = &a[i..i + LANES];
        let bb = &b[i..i + LANES];
        for j in 0..LANES {
            acc[j] += aa[j] * bb[j];
        }
    }
    let mut s = F::ZERO;
    for lane in acc {
        s += lane;
    }
    for i in chunks * LANES..n {
        s += a[i] * b[i];
    }
    s
}

/// y += a * x
#[inline]
pub fn axpy<F: Scalar>(y: &mut [F], a: F, x: &[F]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * *xi;
    }
}

/// Sums an 8-lane accumulator in a fixed order.
#[inline(always)]
fn lane_sum<F: Scalar>(acc: [F; LANES]) -> F {
    let mut s = F::ZERO;
    for lane in acc {
        s += lane;
    }
    s
}

/// Kernel tile: 2 x-rows by 2 w-rows per pass, each cell an 8-lane
/// accumulator so the inner loop vectorizes while every streamed row feeds
/// two outputs. Lane and tile order are fixed; results are deterministic.
fn matmul_tile_rows<F: Scalar>(out: &mut [F], x: &[F], w: &[F], rows: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), rows * n);
    let chunks = k / LANES;
    let mut i = 0;
    while i + 2 <= rows {
        let x0 = &x[i * k..(i + 1) * k];
        let x1 = &x[(i + 1) * k..(i + 2) * k];
        let mut j = 0;
        while j + 2 <= n {
            let w0 = &w[j * k..(j + 1) * k];
            let w1 = &w[(j + 1) * k..(j + 2) * k];
            let mut a00 = [F::ZERO; LANES];
            let mut a01 = [F::ZERO; LANES];
            let mut a10 = [F::ZERO; LANES];
            let mut a11 = [F::ZERO; LANES];
            for c in 0..chunks {
                let base = c * LANES;
                let xv0 = &x0[base..base + LANES];
                let xv1 = &x1[base..base + LANES];
                let wv0 = &w0[base..base + LANES];
                let wv1 = &w1[base..base + LANES];
                for l in 0..LANES {
                    a00[l] += xv0[l] * wv0[l];
                    a01[l] += xv0[l] * wv1[l];
                    a10[l] += xv1[l] * wv0[l];
                    a11[l] += xv1[l] * wv1[l];
                }
            }
            let mut s00 = lane_sum(a00);
            let mut s01 = lane_sum(a01);
            let mut s10 = lane_sum(a10);
            let mut s11 = lane_sum(a11);
            for c in chunks * LANES..k {
                s00 += x0[c] * w0[c];
                s01 += x0[c] * w1[c];
                s10 += x1[c] * w0[c];
                s11 += x1[c] * w1[c];
            }
            out[i * n + j] = s00;
            out[i * n + j + 1] = s01;
            out[(i + 1) * n + j] = s10;
            out[(i + 1) * n + j + 1] = s11;
            j += 2;
        }
        while j < n {
            let wr = &w[j * k..(j + 1) * k];
            out[i * n + j] = dot(x0, wr);
            out[(i + 1) * n + j] = dot(x1, wr);
            j += 1;
        }
        i += 2;
    }
    if i < rows {
        let xrow = &x[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(xrow, &w[j * k..(j + 1) * k]);
        }
    }
}

/// out[m x n] = x[m x k] * w^T, with w stored row-major as [n x k].
pub fn matmul_xwt<F: Scalar>(out: &mut [F], x: &[F], w: &[F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(x.len(), m * k);
    debug_assert_eq!(w.len(), n * k);
    matmul_tile_rows(out, x, w, m, k, n);
}

/// Row-block-parallel variant for single-sequence inference paths. Output
/// blocks are disjoint, so the result is independent of scheduling.
pub fn matmul_xwt_par<F: Scalar>(out: &mut [F], x: &[F], w: &[F], m: usize, k: usize, n: usize) {
    use rayon::prelude::*;
    debug_assert_eq!(out.len(), m * n);
    let block = 16usize;
    out.par_chunks_mut(block * n)
        .enumerate()
        .for_each(|(bi, oblock)| {
            let start = bi * block;
            let rows = oblock.len() / n;
            matmul_tile_rows(oblock, &x[start * k..(start + rows) * k], w, rows, k, n);
        });
}

/// dx[m x k] += dy[m x n] * w[n x k]
///
/// Two x-rows share each streamed w-row, halving the memory traffic of the
/// naive per-row formulation.
pub fn matmul_dy_w_acc<F: Scalar>(dx: &mut [F], dy: &[F], w: &[F], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i + 2 <= m {
        let (dy0, dy1) = (&dy[i * n..(i + 1) * n], &dy[(i + 1) * n..(i + 2) * n]);
        let (head, tail) = dx[i * k..(i + 2) * k].split_at_mut(k);
        for j in 0..n {
            let (g0, g1) = (dy0[j], dy1[j]);
            let wrow = &w[j * k..(j + 1) * k];
            for c in 0..k {
                let wc = wrow[c];
                head[c] += g0 * wc;
                tail[c] += g1 * wc;
            }
        }
        i += 2;
    }
    if i < m {
        let dyrow = &dy[i * n..(i + 1) * n];
        let dxrow = &mut dx[i * k..(i + 1) * k];
        for (j, &g) in dyrow.iter().enumerate() {
            axpy(dxrow, g, &w[j * k..(j + 1) * k]);
        }
    }
}

/// dw[n x k] += dy^T[m x n] * x[m x k]
///
/// Two x-rows are folded into each dw-row pass.
pub fn matmul_dyt_x_acc<F: Scalar>(dw: &mut [F], dy: &[F], x: &[F], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i + 2 <= m {
        let (x0, x1) = (&x[i * k..(i + 1) * k], &x[(i + 1) * k..(i + 2) * k]);
        let (dy0, dy1) = (&dy[i * n..(i + 1) * n], &dy[(i + 1) * n..(i + 2) * n]);
        for j in 0..n {
            let (g0, g1) = (dy0[j], dy1[j]);
            let dwrow = &mut dw[j * k..(j + 1) * k];
            for c in 0..k {
                dwrow[c] += g0 * x0[c] + g1 * x1[c];
            }
        }
        i += 2;
    }
    if i < m {
        let xrow = &x[i * k..(i + 1) * k];
        let dyrow = &dy[i * n..(i + 1) * n];
        for (j, &g) in dyrow.iter().enumerate() {
            axpy(&mut dw[j * k..(j + 1) * k], g, xrow);
        }
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_inplace<F: Scalar>(row: &mut [F]) {
    let mut m = row[0];
    for &v in row.iter() {
        m = m.maximum(v);
    }
    let mut sum = F::ZERO;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    let inv = F::ONE / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// log(sum(exp(row))) with max subtraction.
pub fn logsumexp<F: Scalar>(row: &[F]) -> F {
    let mut m = row[0];
    for &v in row.iter() {
        m = m.maximum(v);
    }
    let mut sum = F::ZERO;
    for &v in row.iter() {
        sum += (v - m).exp();
    }
    m + sum.ln()
}

pub const LN_EPS: f64 = 1e-5;

/// Layer norm over rows of x[t x d] with gain/bias; caches mean and
/// reciprocal std per row for the backward pass.
pub fn layernorm_fwd<F: Scalar>(
    out: &mut [F],
    mean: &mut [F],
    rstd: &mut [F],
    x: &[F],
    gamma: &[F],
    beta: &[F],
    t: usize,
    d: usize,
) {
    let inv_d = F::from_f64(1.0 / d as f64);
    let eps = F::from_f64(LN_EPS);
    for i in 0..t {
        let xr = &x[i * d..(i + 1) * d];
        let mut mu = F::ZERO;
        for &v in xr {
            mu += v;
        }
        mu *= inv_d;
        let mut var = F::ZERO;
        for &v in xr {
            let c = v - mu;
            var += c * c;
        }
        var *= inv_d;
        let rs = F::ONE / (var + eps).sqrt();
        mean[i] = mu;
        rstd[i] = rs;
        let orow = &mut out[i * d..(i + 1) * d];
        for j in 0..d {
            orow[j] = (xr[j] - mu) * rs * gamma[j] + beta[j];
        }
    }
}

/// Backward of [`layernorm_fwd`]. Writes dx, accumulates dgamma/dbeta.
#[allow(clippy::too_many_arguments)]
pub fn layernorm_bwd<F: Scalar>(
    dx: &mut [F],
    dgamma: &mut [F],
    dbeta: &mut [F],
    dy: &[F],
    x: &[F],
    gamma: &[F],
    mean: &[F],
    rstd: &[F],
    t: usize,
    d: usize,
) {
    let inv_d = F::from_f64(1.0 / d as f64);
    for i in 0..t {
        let xr = &x[i * d..(i + 1) * d];
        let dyr = &dy[i * d..(i + 1) * d];
        let dxr = &mut dx[i * d..(i + 1) * d];
        let (mu, rs) = (mean[i], rstd[i]);
        let mut sum_dxhat = F::ZERO;
        let mut sum_dxhat_xhat = F::ZERO;
        for j in 0..d {
            let xhat = (xr[j] - mu) * rs;
            let dxhat = dyr[j] * gamma[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dgamma[j] += dyr[j] * xhat;
            dbeta[j] += dyr[j];
        }
        sum_dxhat *= inv_d;
        sum_dxhat_xhat *= inv_d;
        for j in 0..d {
            let xhat = (xr[j] - mu) * rs;
            let dxhat = dyr[j] * gamma[j];
            dxr[j] = rs * (dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
        }
    }
}

const GELU_A: f64 = 0.044715;
// sqrt(2/pi)
const GELU_C: f64 = 0.797_884_560_802_865_4;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<F: Scalar>(x: F) -> F {
    let a = F::from_f64(GELU_A);
    let c = F::from_f64(GELU_C);
    let half = F::from_f64(0.5);
    let inner = c * (x + a * x * x * x);
    half * x * (F::ONE + inner.tanh())
}

#[inline]
pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let a = F::from_f64(GELU_A);
    let c = F::from_f64(GELU_C);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let sech2 = F::ONE - t * t;
    half * (F::ONE + t) + half * x * sech2 * c * (F::ONE + three * a * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64) * 0.25 - 3.0).collect();
        let b: Vec<f64> = (0..37).map(|i| 1.5 - (i as f64) * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }

    #[test]
    fn matmul_against_naive() {
        let (m, k, n) = (3, 5, 4);
        let x: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.29).cos()).collect();
        let mut out = vec![0.0; m * n];
        matmul_xwt(&mut out, &x, &w, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..k {
                    s += x[i * k + l] * w[j * k + l];
                }
                assert!((out[i * n + j] - s).abs() < 1e-12);
            }
        }
        let mut out2 = vec![0.0; m * n];
        matmul_xwt_par(&mut out2, &x, &w, m, k, n);
        assert_eq!(out, out2);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut row = vec![1.0f32, -2.0, 0.5, 9.0, 3.3];
        softmax_inplace(&mut row);
        let s: f32 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
        assert!(row.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn logsumexp_handles_large_values() {
        let row = vec![1000.0f32, 1000.0];
        let l = logsumexp(&row);
        assert!((l - (1000.0 + 2.0f32.ln())).abs() < 1e-3);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.3, 2.5] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - num).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn layernorm_normalizes_rows() {
        let (t, d) = (2, 8);
        let x: Vec<f64> = (0..t * d).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let gamma = vec![1.0; d];
        let beta = vec![0.0; d];
        let mut out = vec![0.0; t * d];
        let mut mean = vec![0.0; t];
        let mut rstd = vec![0.0; t];
        layernorm_fwd(&mut out, &mut mean, &mut rstd, &x, &gamma, &beta, t, d);
        for i in 0..t {
            let row = &out[i * d..(i + 1) * d];
            let mu: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            assert!(mu.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}

#[cfg(test)]
mod exp_tests {
    use super::*;

    #[test]
    fn fast_exp_tracks_libm() {
        let mut x = -30.0f32;
        while x < 30.0 {
            let got = Scalar::exp(x);
            let want = f64::exp(x as f64);
            let rel = ((got as f64 - want) / want).abs();
            assert!(rel < 5e-6, "exp({x}): {got} vs {want} rel {rel}");
            x += 0.0137;
        }
        // Clamped tails stay finite and positive.
        let lo = Scalar::exp(-200.0f32);
        assert!(lo > 0.0 && lo < 1e-36, "lo {lo}");
        let hi = Scalar::exp(100.0f32);
        assert!(hi.is_finite() && hi > 1e38, "hi {hi}");
    }

    #[test]
    fn fast_tanh_tracks_libm() {
        let mut x = -8.0f32;
        while x < 8.0 {
            let got = Scalar::tanh(x);
            let want = f64::tanh(x as f64);
            assert!(
                (got as f64 - want).abs() < 1e-5,
                "tanh({x}): {got} vs {want}"
            );
            x += 0.011;
        }
        assert!((Scalar::tanh(40.0f32) - 1.0).abs() < 1e-6);
        assert!((Scalar::tanh(-40.0f32) + 1.0).abs() < 1e-6);
    }
}
