//! Slice-level numeric kernels shared by the forward and backward passes.
//!
//! All kernels accumulate into `out` in a fixed loop order, so results are
//! bit-reproducible for identical inputs.

use super::Scalar;

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for (arow, orow) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&av, brow) in arow.iter().zip(b.chunks_exact(n)) {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += aᵀ · b` with `a[k×m]`, `b[k×n]`.
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for (arow, brow) in a.chunks_exact(m).zip(b.chunks_exact(n)) {
        for (&av, orow) in arow.iter().zip(out.chunks_exact_mut(n)) {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a · bᵀ` with `a[m×k]`, `b[n×k]`.
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    let bt = transpose(b, n, k);
    matmul_nn(a, &bt, m, k, n, out);
}

/// Transposes a `rows×cols` matrix.
pub(crate) fn transpose<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (i, row) in x.chunks_exact(cols).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[j * rows + i] = v;
        }
    }
    out
}

/// Time-axis ranges for one tap of a same-padded convolution: output rows
/// `t0..t1` read input rows `t0+off..t1+off`.
#[inline]
pub(crate) fn conv_tap_range(t: usize, tap: usize, pad: usize) -> Option<(usize, usize, usize)> {
    // input index = output index + tap - pad
    let t0 = pad.saturating_sub(tap);
    let t1 = (t + pad).saturating_sub(tap).min(t);
    if t0 >= t1 {
        return None;
    }
    let s0 = t0 + tap - pad;
    Some((t0, t1, s0))
}

/// Same-padded stride-1 convolution, `x[t×cin]`, `kernel[k×cin×cout]`,
/// accumulating into `out[t×cout]` (bias not included).
pub(crate) fn conv1d_forward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    t: usize,
    cin: usize,
    cout: usize,
    k: usize,
    out: &mut [T],
) {
    let pad = (k - 1) / 2;
    for tap in 0..k {
        let Some((t0, t1, s0)) = conv_tap_range(t, tap, pad) else {
            continue;
        };
        let rows = t1 - t0;
        let w = &kernel[tap * cin * cout..(tap + 1) * cin * cout];
        matmul_nn(
            &x[s0 * cin..(s0 + rows) * cin],
            w,
            rows,
            cin,
            cout,
            &mut out[t0 * cout..t1 * cout],
        );
    }
}

pub(crate) fn conv1d_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    dy: &[T],
    t: usize,
    cin: usize,
    cout: usize,
    k: usize,
    dx: Option<&mut [T]>,
    dkernel: Option<&mut [T]>,
) {
    let pad = (k - 1) / 2;
    if let Some(dx) = dx {
        for tap in 0..k {
            let Some((t0, t1, s0)) = conv_tap_range(t, tap, pad) else {
                continue;
            };
            let rows = t1 - t0;
            let w = &kernel[tap * cin * cout..(tap + 1) * cin * cout];
            matmul_nt(
                &dy[t0 * cout..t1 * cout],
                w,
                rows,
                cout,
                cin,
                &mut dx[s0 * cin..(s0 + rows) * cin],
            );
        }
    }
    if let Some(dk) = dkernel {
        for tap in 0..k {
            let Some((t0, t1, s0)) = conv_tap_range(t, tap, pad) else {
                continue;
            };
            let rows = t1 - t0;
            matmul_tn(
                &x[s0 * cin..(s0 + rows) * cin],
                &dy[t0 * cout..t1 * cout],
                rows,
                cin,
                cout,
                &mut dk[tap * cin * cout..(tap + 1) * cin * cout],
            );
        }
    }
}

/// Column sums of a `rows×cols` matrix added into `out[cols]`.
pub(crate) fn add_col_sums<T: Scalar>(x: &[T], cols: usize, out: &mut [T]) {
    for row in x.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

pub(crate) fn add_into<T: Scalar>(out: &mut [T], x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += v;
    }
}
