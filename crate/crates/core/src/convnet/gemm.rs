//! Small dense matrix product used by the conv and fc layers.
//!
//! Every output element accumulates its `k` products in increasing index
//! order, starting from zero, with separate multiply and add. Results are
//! therefore bit-identical to a naive dot-product loop, whatever the blocking.

const KB: usize = 256;
const NB: usize = 512;

/// `C (m x n) = [C +] A B` with `A[i, p] = a[i * rsa + p * csa]` and `B`
/// row-major `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    n: usize,
    k: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(b.len() >= k * n && c.len() >= m * n);
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { gemm_avx2(m, n, k, a, rsa, csa, b, c, accumulate) };
            return;
        }
    }
    gemm_body(m, n, k, a, rsa, csa, b, c, accumulate);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_avx2(
    m: usize,
    n: usize,
    k: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    c: &mut [f64],
    accumulate: bool,
) {
    gemm_body(m, n, k, a, rsa, csa, b, c, accumulate);
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_body(
    m: usize,
    n: usize,
    k: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    c: &mut [f64],
    accumulate: bool,
) {
    let c = &mut c[..m * n];
    if !accumulate {
        c.fill(0.0);
    }
    for j0 in (0..n).step_by(NB) {
        let j1 = (j0 + NB).min(n);
        for p0 in (0..k).step_by(KB) {
            let p1 = (p0 + KB).min(k);
            let mut rows = c.chunks_exact_mut(n);
            let mut i = 0;
            while i + 4 <= m {
                let r0 = &mut rows.next().unwrap()[j0..j1];
                let r1 = &mut rows.next().unwrap()[j0..j1];
                let r2 = &mut rows.next().unwrap()[j0..j1];
                let r3 = &mut rows.next().unwrap()[j0..j1];
                for p in p0..p1 {
                    let a0 = a[i * rsa + p * csa];
                    let a1 = a[(i + 1) * rsa + p * csa];
                    let a2 = a[(i + 2) * rsa + p * csa];
                    let a3 = a[(i + 3) * rsa + p * csa];
                    let brow = &b[p * n + j0..p * n + j1];
                    for ((((x0, x1), x2), x3), &bj) in r0
                        .iter_mut()
                        .zip(r1.iter_mut())
                        .zip(r2.iter_mut())
                        .zip(r3.iter_mut())
                        .zip(brow)
                    {
                        *x0 += a0 * bj;
                        *x1 += a1 * bj;
                        *x2 += a2 * bj;
                        *x3 += a3 * bj;
                    }
                }
                i += 4;
            }
            for r in rows {
                let r = &mut r[j0..j1];
                for p in p0..p1 {
                    let ai = a[i * rsa + p * csa];
                    let brow = &b[p * n + j0..p * n + j1];
                    for (x, &bj) in r.iter_mut().zip(brow) {
                        *x += ai * bj;
                    }
                }
                i += 1;
            }
        }
    }
}

/// Row-major transpose of an `rows x cols` matrix.
pub(crate) fn transpose(src: &[f64], rows: usize, cols: usize, dst: &mut Vec<f64>) {
    dst.clear();
    dst.resize(rows * cols, 0.0);
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(m: usize, n: usize, k: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn bitwise_equal_to_naive_across_block_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(m, n, k) in &[(1, 1, 1), (5, 7, 3), (9, 600, 300), (4, 513, 257), (13, 2, 700)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut c = vec![f64::NAN; m * n];
            gemm(m, n, k, &a, k, 1, &b, &mut c, false);
            assert_eq!(c, naive(m, n, k, &a, &b), "{m}x{n}x{k}");
        }
    }

    #[test]
    fn strided_a_reads_transpose() {
        let (m, n, k) = (3, 4, 5);
        let at: Vec<f64> = (0..k * m).map(|x| x as f64 * 0.5 - 3.0).collect();
        let b: Vec<f64> = (0..k * n).map(|x| (x as f64).sin()).collect();
        let mut a = Vec::new();
        transpose(&at, k, m, &mut a);
        let mut c = vec![0.0; m * n];
        gemm(m, n, k, &at, 1, m, &b, &mut c, false);
        assert_eq!(c, naive(m, n, k, &a, &b));
    }

    #[test]
    fn accumulate_adds_to_existing() {
        let a = [1.0, 2.0];
        let b = [3.0, 4.0];
        let mut c = [10.0];
        gemm(1, 1, 2, &a, 2, 1, &b, &mut c, true);
        assert_eq!(c, [21.0]);
    }
}
