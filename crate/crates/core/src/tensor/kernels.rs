//! Register-tiled linear algebra kernels.
//!
//! Every output element is accumulated over the inner index in ascending
//! order, independent of how many rows are processed together, so a row's
//! result never depends on the batch it was computed in.

const MR: usize = 4;
const NR: usize = 16;

/// `out[m x n] = a[m x k] * b[k x n]`, row-major.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            unsafe { matmul_avx512(a, b, &mut out, m, k, n) };
            return out;
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { matmul_avx2(a, b, &mut out, m, k, n) };
            return out;
        }
    }
    matmul_into(a, b, &mut out, m, k, n);
    out
}

// No FMA: the wide build must round exactly like the baseline one.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matmul_avx2(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    matmul_into(a, b, out, m, k, n);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn matmul_avx512(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    matmul_into(a, b, out, m, k, n);
}

#[inline(always)]
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let full_cols = n - n % NR;
    let mut strip = vec![0.0; k * NR];
    let mut j = 0;
    while j < full_cols {
        // contiguous copy of columns j..j+NR so the strip stays cached
        for t in 0..k {
            strip[t * NR..(t + 1) * NR].copy_from_slice(&b[t * n + j..t * n + j + NR]);
        }
        let mut i = 0;
        while i + MR <= m {
            tile::<MR>(a, &strip, out, i, j, k, n);
            i += MR;
        }
        while i < m {
            tile::<1>(a, &strip, out, i, j, k, n);
            i += 1;
        }
        j += NR;
    }
    for r in 0..m {
        edge_row(a, b, out, r, full_cols, k, n);
    }
}

/// `R x NR` block held in registers across the whole inner loop.
#[inline(always)]
fn tile<const R: usize>(a: &[f64], strip: &[f64], out: &mut [f64], i: usize, j: usize, k: usize, n: usize) {
    let mut acc = [[0.0; NR]; R];
    for t in 0..k {
        let brow: &[f64; NR] = strip[t * NR..(t + 1) * NR].try_into().unwrap();
        for r in 0..R {
            let s = a[(i + r) * k + t];
            for c in 0..NR {
                acc[r][c] += s * brow[c];
            }
        }
    }
    for r in 0..R {
        out[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(&acc[r]);
    }
}

/// Columns `from..n` of row `r`.
#[inline(always)]
fn edge_row(a: &[f64], b: &[f64], out: &mut [f64], r: usize, from: usize, k: usize, n: usize) {
    if from == n {
        return;
    }
    let o = &mut out[r * n + from..(r + 1) * n];
    for t in 0..k {
        let s = a[r * k + t];
        let brow = &b[t * n + from..(t + 1) * n];
        for (ov, &bv) in o.iter_mut().zip(brow) {
            *ov += s * bv;
        }
    }
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for t in 0..k {
                    s += a[i * k + t] * b[t * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn blocked_matches_naive_bitwise() {
        for &(m, k, n) in &[(1, 3, 2), (4, 5, 3), (7, 9, 11), (9, 1, 1), (9, 7, 37), (4, 20, 16)] {
            let a: Vec<f64> = (0..m * k).map(|v| (v as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..k * n).map(|v| (v as f64 * 0.11).cos()).collect();
            assert_eq!(matmul(&a, &b, m, k, n), naive(&a, &b, m, k, n));
        }
    }

    #[test]
    fn row_result_independent_of_batch() {
        let (k, n) = (13, 22);
        let a: Vec<f64> = (0..7 * k).map(|v| (v as f64 * 1.3).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64 * 0.7).cos()).collect();
        let full = matmul(&a, &b, 7, k, n);
        for i in 0..7 {
            let single = matmul(&a[i * k..(i + 1) * k], &b, 1, k, n);
            assert_eq!(&full[i * n..(i + 1) * n], &single[..]);
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let a: Vec<f64> = (0..6).map(f64::from).collect();
        let t = transpose(&a, 2, 3);
        assert_eq!(t, vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert_eq!(transpose(&t, 3, 2), a);
    }
}
