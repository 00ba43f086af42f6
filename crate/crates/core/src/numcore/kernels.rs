//! Dense kernels. Every reduction accumulates in `f64`; row `i` of an output
//! depends only on row `i` of the left operand, in a fixed summation order.

use super::Real;

/// `a[m,k] @ b[k,n]`. Each output is a chain of fused multiply-adds over
/// `k` in ascending order, so the result does not depend on which code path
/// runs.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::zero(); m * n];
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU feature was detected at runtime.
            unsafe { matmul_avx2(a, b, &mut out, k, n) };
            return out;
        }
    }
    matmul_rows(a, b, &mut out, k, n);
    out
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn matmul_avx2<T: Real>(a: &[T], b: &[T], out: &mut [T], k: usize, n: usize) {
    matmul_rows(a, b, out, k, n)
}

const TILE_ROWS: usize = 4;
const TILE_COLS: usize = 8;

#[inline(always)]
fn matmul_rows<T: Real>(a: &[T], b: &[T], out: &mut [T], k: usize, n: usize) {
    // Operands are widened and zero-padded to whole tiles; padding never
    // reaches the stored output.
    let m = out.len() / n.max(1);
    let np = n.div_ceil(TILE_COLS) * TILE_COLS;
    let mp = m.div_ceil(TILE_ROWS) * TILE_ROWS;
    let mut bw = vec![0f64; k * np];
    for kk in 0..k {
        for j in 0..n {
            bw[kk * np + j] = b[kk * n + j].wide();
        }
    }
    let mut aw = vec![0f64; mp * k];
    for (w, v) in aw.iter_mut().zip(a) {
        *w = v.wide();
    }
    for i0 in (0..mp).step_by(TILE_ROWS) {
        for j0 in (0..np).step_by(TILE_COLS) {
            let mut c = [[0f64; TILE_COLS]; TILE_ROWS];
            for kk in 0..k {
                let brow: &[f64; TILE_COLS] = bw[kk * np + j0..kk * np + j0 + TILE_COLS].try_into().unwrap();
                for (r, crow) in c.iter_mut().enumerate() {
                    let av = aw[(i0 + r) * k + kk];
                    for t in 0..TILE_COLS {
                        crow[t] = av.mul_add(brow[t], crow[t]);
                    }
                }
            }
            for (r, crow) in c.iter().enumerate() {
                let i = i0 + r;
                if i >= m {
                    break;
                }
                for t in 0..TILE_COLS.min(n.saturating_sub(j0)) {
                    out[i * n + j0 + t] = T::narrow(crow[t]);
                }
            }
        }
    }
}

fn transpose<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = x[i * cols + j];
        }
    }
    t
}

/// `a[m,k] @ b[n,k]^T`
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    matmul(a, &transpose(b, n, k), m, k, n)
}

/// `a[k,m]^T @ b[k,n]`
pub fn matmul_tn<T: Real>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    matmul(&transpose(a, k, m), b, m, k, n)
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.wide() * y.wide()).sum()
}

#[inline]
pub fn sum<T: Real>(a: &[T]) -> f64 {
    a.iter().map(|v| v.wide()).sum()
}

/// Numerically stable softmax of `logits` into `out`, computed in `f64`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        denom += *o;
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
}

/// Log-softmax of a row, computed in `f64`.
pub fn log_softmax<T: Real>(row: &[T]) -> Vec<f64> {
    let max = row.iter().map(|v| v.wide()).fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = row.iter().map(|v| (v.wide() - max).exp()).sum();
    let log_denom = denom.ln() + max;
    row.iter().map(|v| v.wide() - log_denom).collect()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for kk in 0..k {
                    out[i * n + j] += a[i * k + kk] * b[kk * n + j];
                }
            }
        }
        out
    }

    fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a[i * c + j];
            }
        }
        out
    }

    #[test]
    fn matmul_variants_agree_with_naive_product() {
        for (m, k, n) in [(3, 5, 4), (1, 1, 1), (9, 3, 17), (4, 8, 8), (13, 2, 7)] {
            check_product(m, k, n);
        }
    }

    #[test]
    fn dispatch_paths_agree_bitwise() {
        let (m, k, n) = (7, 11, 10);
        let a: Vec<f32> = (0..m * k).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32 * 0.91).cos()).collect();
        let mut portable = vec![0f32; m * n];
        matmul_rows(&a, &b, &mut portable, k, n);
        assert_eq!(matmul(&a, &b, m, k, n), portable);
    }

    fn check_product(m: usize, k: usize, n: usize) {
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let want = naive(&a, &b, m, k, n);
        let nn = matmul(&a, &b, m, k, n);
        let nt = matmul_nt(&a, &transpose(&b, k, n), m, k, n);
        let tn = matmul_tn(&transpose(&a, m, k), &b, k, m, n);
        for i in 0..m * n {
            assert!((nn[i] - want[i]).abs() < 1e-12);
            assert!((nt[i] - want[i]).abs() < 1e-12);
            assert!((tn[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-7, "x={x}");
        }
    }

    #[test]
    fn softmax_is_normalized() {
        let mut out = vec![0.0; 3];
        softmax_into(&[1000.0, 1001.0, 999.0], &mut out);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out[1] > out[0] && out[0] > out[2]);
    }
}
