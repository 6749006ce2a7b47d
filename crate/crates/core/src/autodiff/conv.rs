use alloc::vec;
use alloc::vec::Vec;

use super::par::chunked_map;
use crate::real::{matmul, matmul_nt, matmul_tn};
use crate::{Error, Real, Result};

/// Batch elements handled per task; fixed so reductions are reproducible.
const BATCH_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output `ceil(in / stride)`; padding split with the extra row/column
    /// at the bottom/right.
    Same,
    /// No padding; output `(in - k) / stride + 1`.
    Valid,
}

/// Resolved geometry of a 2-D window operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn axis(input: usize, k: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(input);
            Some((out, total / 2))
        }
        Padding::Valid => (input >= k).then(|| ((input - k) / stride + 1, 0)),
    }
}

impl ConvGeom {
    pub fn new(
        (n, h, w, c_in): (usize, usize, usize, usize),
        (kh, kw): (usize, usize),
        stride: usize,
        padding: Padding,
        op: &'static str,
    ) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(op, alloc::format!("kernel {kh}x{kw} must have odd sides")));
        }
        if stride == 0 {
            return Err(Error::Invalid("stride must be >= 1".into()));
        }
        let (Some((out_h, pad_top)), Some((out_w, pad_left))) =
            (axis(h, kh, stride, padding), axis(w, kw, stride, padding))
        else {
            return Err(Error::shape(op, alloc::format!("kernel {kh}x{kw} larger than input {h}x{w}")));
        };
        Ok(ConvGeom {
            n,
            h,
            w,
            c_in,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.c_in
    }

    fn pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Input coordinate for output `o` and tap `k`, if inside the image.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, limit: usize) -> Option<usize> {
        let p = (o * stride + k).checked_sub(pad)?;
        (p < limit).then_some(p)
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let patch = g.patch();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * patch..][..patch];
            for ky in 0..g.kh {
                let iy = ConvGeom::src(oy, ky, g.stride, g.pad_top, g.h);
                for kx in 0..g.kw {
                    let dst = &mut row[(ky * g.kw + kx) * g.c_in..][..g.c_in];
                    match (iy, ConvGeom::src(ox, kx, g.stride, g.pad_left, g.w)) {
                        (Some(iy), Some(ix)) => dst.copy_from_slice(&x[(iy * g.w + ix) * g.c_in..][..g.c_in]),
                        _ => dst.fill(T::zero()),
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let patch = g.patch();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &cols[(oy * g.out_w + ox) * patch..][..patch];
            for ky in 0..g.kh {
                let Some(iy) = ConvGeom::src(oy, ky, g.stride, g.pad_top, g.h) else {
                    continue;
                };
                for kx in 0..g.kw {
                    let Some(ix) = ConvGeom::src(ox, kx, g.stride, g.pad_left, g.w) else {
                        continue;
                    };
                    let src = &row[(ky * g.kw + kx) * g.c_in..][..g.c_in];
                    let dst = &mut dx[(iy * g.w + ix) * g.c_in..][..g.c_in];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

/// Cross-correlation, `x: [N,H,W,C_in]`, `w: [kh,kw,C_in,C_out]`.
pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], c_out: usize) -> Vec<T> {
    let in_len = g.h * g.w * g.c_in;
    let out_len = g.pixels() * c_out;
    let mut out = vec![T::zero(); g.n * out_len];
    chunked_map(&mut out, BATCH_CHUNK * out_len, |ci, chunk| {
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); g.pixels() * g.patch()] };
        for (k, o) in chunk.chunks_exact_mut(out_len).enumerate() {
            let b = ci * BATCH_CHUNK + k;
            let xb = &x[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                matmul(g.pixels(), g.patch(), c_out, xb, w, o, false);
            } else {
                im2col(g, xb, &mut cols);
                matmul(g.pixels(), g.patch(), c_out, &cols, w, o, false);
            }
        }
    });
    out
}

/// Returns `(dx, dw)`; `dx` only when `want_dx`.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    c_out: usize,
    grad_out: &[T],
    want_dx: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let in_len = g.h * g.w * g.c_in;
    let out_len = g.pixels() * c_out;
    let wlen = g.patch() * c_out;
    let mut dx = vec![T::zero(); if want_dx { g.n * in_len } else { g.n }];
    let per_dx = if want_dx { BATCH_CHUNK * in_len } else { BATCH_CHUNK };
    let partials = chunked_map(&mut dx, per_dx, |ci, dx_chunk| {
        let mut dw = vec![T::zero(); wlen];
        let mut cols = vec![T::zero(); g.pixels() * g.patch()];
        let mut dcols = vec![T::zero(); g.pixels() * g.patch()];
        let first = ci * BATCH_CHUNK;
        let last = (first + BATCH_CHUNK).min(g.n);
        for b in first..last {
            let xb = &x[b * in_len..(b + 1) * in_len];
            let gb = &grad_out[b * out_len..(b + 1) * out_len];
            let c: &[T] = if g.is_pointwise() {
                xb
            } else {
                im2col(g, xb, &mut cols);
                &cols
            };
            matmul_tn(g.patch(), g.pixels(), c_out, c, gb, &mut dw, true);
            if want_dx {
                let dxb = &mut dx_chunk[(b - first) * in_len..(b - first + 1) * in_len];
                if g.is_pointwise() {
                    matmul_nt(g.pixels(), c_out, g.patch(), gb, w, dxb, false);
                } else {
                    matmul_nt(g.pixels(), c_out, g.patch(), gb, w, &mut dcols, false);
                    col2im(g, &dcols, dxb);
                }
            }
        }
        dw
    });
    let mut dw = vec![T::zero(); wlen];
    for p in partials {
        for (a, b) in dw.iter_mut().zip(p) {
            *a = *a + b;
        }
    }
    (want_dx.then_some(dx), dw)
}

/// Per-channel convolution, `w: [kh, kw, C]`.
pub(crate) fn depthwise_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T]) -> Vec<T> {
    let c = g.c_in;
    let mut out = vec![T::zero(); g.n * g.pixels() * c];
    for b in 0..g.n {
        let xb = &x[b * g.h * g.w * c..][..g.h * g.w * c];
        let ob = &mut out[b * g.pixels() * c..][..g.pixels() * c];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let o = &mut ob[(oy * g.out_w + ox) * c..][..c];
                for ky in 0..g.kh {
                    let Some(iy) = ConvGeom::src(oy, ky, g.stride, g.pad_top, g.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = ConvGeom::src(ox, kx, g.stride, g.pad_left, g.w) else {
                            continue;
                        };
                        let src = &xb[(iy * g.w + ix) * c..][..c];
                        let wk = &w[(ky * g.kw + kx) * c..][..c];
                        for k in 0..c {
                            o[k] = o[k] + src[k] * wk[k];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn depthwise_backward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], grad_out: &[T]) -> (Vec<T>, Vec<T>) {
    let c = g.c_in;
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    for b in 0..g.n {
        let base_in = b * g.h * g.w * c;
        let gb = &grad_out[b * g.pixels() * c..][..g.pixels() * c];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let go = &gb[(oy * g.out_w + ox) * c..][..c];
                for ky in 0..g.kh {
                    let Some(iy) = ConvGeom::src(oy, ky, g.stride, g.pad_top, g.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = ConvGeom::src(ox, kx, g.stride, g.pad_left, g.w) else {
                            continue;
                        };
                        let at = base_in + (iy * g.w + ix) * c;
                        let wo = (ky * g.kw + kx) * c;
                        for k in 0..c {
                            dx[at + k] = dx[at + k] + go[k] * w[wo + k];
                            dw[wo + k] = dw[wo + k] + go[k] * x[at + k];
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}
