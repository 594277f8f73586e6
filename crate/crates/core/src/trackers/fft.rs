//! Small 2-D FFT helpers on row-major complex buffers.
//!
//! The `_t` variants keep spectra in column-major ("transposed") layout,
//! which saves two transposes per forward/inverse round trip; spectra that
//! are only multiplied element-wise never need the natural layout.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

fn transpose(src: &[Complex64], w: usize, h: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); w * h];
    const B: usize = 16;
    for y0 in (0..h).step_by(B) {
        for x0 in (0..w).step_by(B) {
            for y in y0..(y0 + B).min(h) {
                for x in x0..(x0 + B).min(w) {
                    out[x * h + y] = src[y * w + x];
                }
            }
        }
    }
    out
}

/// Forward transform of a natural-layout `w x h` buffer; the spectrum comes
/// back transposed (index `kx * h + ky`).
pub(crate) fn forward_t(mut data: Vec<Complex64>, w: usize, h: usize) -> Vec<Complex64> {
    assert_eq!(data.len(), w * h);
    plan(w, false).process(&mut data);
    let mut t = transpose(&data, w, h);
    plan(h, false).process(&mut t);
    t
}

/// Inverse of [`forward_t`], scaled by `1 / (w h)`, natural layout out.
pub(crate) fn inverse_t(mut spec: Vec<Complex64>, w: usize, h: usize) -> Vec<Complex64> {
    assert_eq!(spec.len(), w * h);
    plan(h, true).process(&mut spec);
    let mut d = transpose(&spec, h, w);
    plan(w, true).process(&mut d);
    let s = 1.0 / (w * h) as f64;
    d.iter_mut().for_each(|v| *v *= s);
    d
}

/// In-place 2-D transform of a `w x h` buffer. The inverse is scaled by
/// `1 / (w h)` so `inverse(forward(x)) = x`.
pub fn fft2(data: &mut [Complex64], w: usize, h: usize, inverse: bool) {
    assert_eq!(data.len(), w * h);
    let out = if inverse {
        inverse_t(transpose(data, w, h), w, h)
    } else {
        transpose(&forward_t(data.to_vec(), w, h), h, w)
    };
    data.copy_from_slice(&out);
}

/// Smallest `2^a 3^b 5^c` not below `n`.
pub fn good_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Zero-pads a real `w x h` grid into a complex `pw x ph` buffer.
pub fn padded(values: &[f64], w: usize, h: usize, pw: usize, ph: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); pw * ph];
    for y in 0..h {
        for x in 0..w {
            out[y * pw + x] = Complex64::new(values[y * w + x], 0.0);
        }
    }
    out
}
