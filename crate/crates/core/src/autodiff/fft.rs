//! FFT kernels on the paired real/imaginary layout (`[..., 2]`).
//!
//! Forward transforms are unnormalized; inverse transforms divide by `n`.

use rustfft::num_complex::Complex;

use crate::scalar::Scalar;

/// Real input `[rows, n]` to half spectrum `[rows, n/2 + 1, 2]`.
pub(crate) fn rfft_rows<T: Scalar>(x: &[T], n: usize) -> Vec<T> {
    let rows = x.len() / n;
    let nf = n / 2 + 1;
    let plan = T::fft_plan(n, false);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); plan.get_inplace_scratch_len()];
    let mut out = Vec::with_capacity(rows * nf * 2);
    for r in 0..rows {
        for (b, &v) in buf.iter_mut().zip(&x[r * n..(r + 1) * n]) {
            *b = Complex::new(v, T::zero());
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        for c in &buf[..nf] {
            out.push(c.re);
            out.push(c.im);
        }
    }
    out
}

/// Half spectrum `[rows, n/2 + 1, 2]` to real `[rows, n]`, normalized by `1/n`.
/// Imaginary parts of the zero and Nyquist bins are ignored.
pub(crate) fn irfft_rows<T: Scalar>(x: &[T], n: usize) -> Vec<T> {
    let nf = n / 2 + 1;
    let rows = x.len() / (2 * nf);
    let plan = T::fft_plan(n, true);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); plan.get_inplace_scratch_len()];
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut out = Vec::with_capacity(rows * n);
    for r in 0..rows {
        let spec = &x[r * 2 * nf..(r + 1) * 2 * nf];
        for k in 0..nf {
            buf[k] = Complex::new(spec[2 * k], spec[2 * k + 1]);
        }
        buf[0].im = T::zero();
        if n % 2 == 0 {
            buf[n / 2].im = T::zero();
        }
        for k in 1..(n + 1) / 2 {
            buf[n - k] = buf[k].conj();
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        out.extend(buf.iter().map(|c| c.re * inv_n));
    }
    out
}

/// Complex transform along the second-to-last axis of `[rows, n, 2]`.
pub(crate) fn cfft_rows<T: Scalar>(x: &[T], n: usize, inverse: bool) -> Vec<T> {
    let rows = x.len() / (2 * n);
    let plan = T::fft_plan(n, inverse);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); plan.get_inplace_scratch_len()];
    let scale = if inverse {
        T::one() / T::from_usize(n).unwrap()
    } else {
        T::one()
    };
    let mut out = Vec::with_capacity(x.len());
    for r in 0..rows {
        let s = &x[r * 2 * n..(r + 1) * 2 * n];
        for k in 0..n {
            buf[k] = Complex::new(s[2 * k], s[2 * k + 1]);
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        for c in &buf {
            out.push(c.re * scale);
            out.push(c.im * scale);
        }
    }
    out
}

/// Vector-Jacobian product of `rfft_rows`: `n * irfft(g / c_k)` with
/// `c_k = 2` for bins that have a mirrored partner.
pub(crate) fn rfft_vjp<T: Scalar>(g: &[T], n: usize) -> Vec<T> {
    let nf = n / 2 + 1;
    let mut h = g.to_vec();
    let half = T::from_f64(0.5).unwrap();
    let nn = T::from_usize(n).unwrap();
    for row in h.chunks_exact_mut(2 * nf) {
        for k in 1..nf {
            if n % 2 == 0 && k == n / 2 {
                continue;
            }
            row[2 * k] = row[2 * k] * half;
            row[2 * k + 1] = row[2 * k + 1] * half;
        }
    }
    // Imaginary parts at k=0 and Nyquist contribute nothing, exactly as the
    // inverse transform discards them.
    irfft_rows(&h, n).into_iter().map(|v| v * nn).collect()
}

/// Vector-Jacobian product of `irfft_rows`: `(c_k / n) * rfft(g)`.
pub(crate) fn irfft_vjp<T: Scalar>(g: &[T], n: usize) -> Vec<T> {
    let nf = n / 2 + 1;
    let mut h = rfft_rows(g, n);
    let two = T::from_f64(2.0).unwrap();
    let inv_n = T::one() / T::from_usize(n).unwrap();
    for row in h.chunks_exact_mut(2 * nf) {
        for k in 0..nf {
            let c = if k == 0 || (n % 2 == 0 && k == n / 2) {
                T::one()
            } else {
                two
            };
            row[2 * k] = row[2 * k] * c * inv_n;
            row[2 * k + 1] = if k == 0 || (n % 2 == 0 && k == n / 2) {
                T::zero()
            } else {
                row[2 * k + 1] * c * inv_n
            };
        }
    }
    h
}

/// Vector-Jacobian product of `cfft_rows`.
pub(crate) fn cfft_vjp<T: Scalar>(g: &[T], n: usize, inverse: bool) -> Vec<T> {
    let nn = T::from_usize(n).unwrap();
    if inverse {
        // adjoint of (1/n) conj-DFT is (1/n) DFT
        cfft_rows(g, n, false).into_iter().map(|v| v / nn).collect()
    } else {
        // adjoint of the DFT is the unnormalized conj-DFT
        cfft_rows(g, n, true).into_iter().map(|v| v * nn).collect()
    }
}
