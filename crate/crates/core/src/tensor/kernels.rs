//! Serial matrix kernels. Every output row depends only on the matching
//! input row and accumulates in a fixed order, so results are independent
//! of batch composition.

use super::Real;

/// `out[m,n] += a[m,k] · b[k,n]`
///
/// Each output element accumulates over `k` in order. Vector width never
/// changes the per-element operation sequence, so both paths agree bitwise.
pub(crate) fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    #[cfg(target_arch = "x86_64")]
    if avx2() {
        // SAFETY: the CPU supports the enabled features.
        return unsafe { matmul_acc_avx2(a, b, out, m, k, n) };
    }
    matmul_body(a, b, out, m, k, n)
}

#[cfg(target_arch = "x86_64")]
fn avx2() -> bool {
    use std::sync::OnceLock;
    static DETECTED: OnceLock<bool> = OnceLock::new();
    *DETECTED.get_or_init(|| is_x86_feature_detected!("avx2"))
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matmul_acc_avx2<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    matmul_body(a, b, out, m, k, n)
}

#[inline(always)]
fn matmul_body<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    let (a, b, out) = (&a[..m * k], &b[..k * n], &mut out[..m * n]);
    for (a_row, out_row) in a.chunks_exact(k.max(1)).zip(out.chunks_exact_mut(n.max(1))) {
        for (&av, b_row) in a_row.iter().zip(b.chunks_exact(n.max(1))) {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] · b[n,k]ᵀ`
pub(crate) fn matmul_bt_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    let bt = transpose(b, n, k);
    matmul_acc(a, &bt, out, m, k, n);
}

/// `out[k,n] += a[m,k]ᵀ · g[m,n]`
pub(crate) fn matmul_at_acc<T: Real>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    let at = transpose(a, m, k);
    matmul_acc(&at, g, out, k, m, n);
}

pub(crate) fn transpose<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}
