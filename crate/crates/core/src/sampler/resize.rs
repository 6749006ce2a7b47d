use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tensor};

/// Source taps of one output coordinate: `(lo, hi, frac)` so that
/// `out = (1 - frac) * in[lo] + frac * in[hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Half-pixel (align-corners = false) source taps, clamped at the borders.
pub(crate) fn taps(input: usize, output: usize) -> Vec<Tap> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let lo = (libm::floor(src) as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

pub(crate) fn resize_raw<T: Real>(
    x: &[T],
    (n, h, w, c): (usize, usize, usize, usize),
    out_h: usize,
    out_w: usize,
    out: &mut [T],
) {
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    for b in 0..n {
        let src = &x[b * h * w * c..(b + 1) * h * w * c];
        let dst = &mut out[b * out_h * out_w * c..(b + 1) * out_h * out_w * c];
        for (oy, ty) in ty.iter().enumerate() {
            let fy = T::from_f64(ty.frac);
            for (ox, tx) in tx.iter().enumerate() {
                let fx = T::from_f64(tx.frac);
                let o = &mut dst[(oy * out_w + ox) * c..(oy * out_w + ox + 1) * c];
                let p00 = &src[(ty.lo * w + tx.lo) * c..][..c];
                let p01 = &src[(ty.lo * w + tx.hi) * c..][..c];
                let p10 = &src[(ty.hi * w + tx.lo) * c..][..c];
                let p11 = &src[(ty.hi * w + tx.hi) * c..][..c];
                for k in 0..c {
                    let top = p00[k] + fx * (p01[k] - p00[k]);
                    let bot = p10[k] + fx * (p11[k] - p10[k]);
                    o[k] = top + fy * (bot - top);
                }
            }
        }
    }
}

pub(crate) fn resize_backward_raw<T: Real>(
    grad_out: &[T],
    (n, h, w, c): (usize, usize, usize, usize),
    out_h: usize,
    out_w: usize,
    grad_in: &mut [T],
) {
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let one = T::one();
    for b in 0..n {
        let g = &grad_out[b * out_h * out_w * c..(b + 1) * out_h * out_w * c];
        let gi = &mut grad_in[b * h * w * c..(b + 1) * h * w * c];
        for (oy, ty) in ty.iter().enumerate() {
            let fy = T::from_f64(ty.frac);
            for (ox, tx) in tx.iter().enumerate() {
                let fx = T::from_f64(tx.frac);
                let go = &g[(oy * out_w + ox) * c..][..c];
                let corners = [
                    (ty.lo, tx.lo, (one - fy) * (one - fx)),
                    (ty.lo, tx.hi, (one - fy) * fx),
                    (ty.hi, tx.lo, fy * (one - fx)),
                    (ty.hi, tx.hi, fy * fx),
                ];
                for (yy, xx, wgt) in corners {
                    let dst = &mut gi[(yy * w + xx) * c..][..c];
                    for k in 0..c {
                        dst[k] = dst[k] + wgt * go[k];
                    }
                }
            }
        }
    }
}

/// Bilinear resize of an `[H, W, C]` or `[N, H, W, C]` tensor with
/// half-pixel centers (align-corners = false).
pub fn bilinear_resize<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Invalid("resize target must be at least 1x1".into()));
    }
    let (dims, batched) = match x.shape() {
        &[h, w, c] => ((1, h, w, c), false),
        &[n, h, w, c] => ((n, h, w, c), true),
        s => return Err(Error::shape("bilinear_resize", alloc::format!("expected rank 3 or 4, got {s:?}"))),
    };
    let (n, _, _, c) = dims;
    let mut out = vec![T::zero(); n * out_h * out_w * c];
    resize_raw(x.data(), dims, out_h, out_w, &mut out);
    if batched {
        Tensor::new(&[n, out_h, out_w, c], out)
    } else {
        Tensor::new(&[out_h, out_w, c], out)
    }
}
