use alloc::vec;
use alloc::vec::Vec;

use super::weights::{AxisWeights, SamplingWeights};
use crate::real::{matmul, matmul_tn};
use crate::{Error, Real, Result, Tensor};

/// Contraction strategy for the sampling matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    /// Two dense matrix products, `O(H_r H_in W_in D + H_r W_r W_in D)`.
    Dense,
    /// Walks the per-row runs only, `O((H_in + H_r) W_in D + H_r (W_in + W_r) D)`.
    #[default]
    Sparse,
}

#[inline]
fn axpy<T: Real>(dst: &mut [T], alpha: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + alpha * s;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `dst[i] = sum_j G[i][j] * src[j]` over rows of `row_len` values.
pub(crate) fn contract<T: Real>(g: &AxisWeights<T>, kernel: Kernel, src: &[T], row_len: usize, dst: &mut [T]) {
    let (r, n) = (g.output_len(), g.input_len());
    debug_assert_eq!(src.len(), n * row_len);
    debug_assert_eq!(dst.len(), r * row_len);
    match kernel {
        Kernel::Dense => matmul(r, n, row_len, g.dense(), src, dst, false),
        Kernel::Sparse => {
            dst.fill(T::zero());
            let sp = g.sparse();
            for (i, out) in dst.chunks_exact_mut(row_len).enumerate() {
                let (start, w) = sp.row(i);
                for (t, &wt) in w.iter().enumerate() {
                    let j = start + t;
                    axpy(out, wt, &src[j * row_len..(j + 1) * row_len]);
                }
            }
        }
    }
}

/// `dst[j] = sum_i G[i][j] * src[i]`, the transposed contraction.
pub(crate) fn contract_t<T: Real>(g: &AxisWeights<T>, kernel: Kernel, src: &[T], row_len: usize, dst: &mut [T]) {
    let (r, n) = (g.output_len(), g.input_len());
    debug_assert_eq!(src.len(), r * row_len);
    debug_assert_eq!(dst.len(), n * row_len);
    match kernel {
        Kernel::Dense => matmul_tn(n, r, row_len, g.dense(), src, dst, false),
        Kernel::Sparse => {
            dst.fill(T::zero());
            let sp = g.sparse();
            for (i, row) in src.chunks_exact(row_len).enumerate() {
                let (start, w) = sp.row(i);
                for (t, &wt) in w.iter().enumerate() {
                    let j = start + t;
                    axpy(&mut dst[j * row_len..(j + 1) * row_len], wt, row);
                }
            }
        }
    }
}

/// `[H_in, W_in, D] -> [H_r, W_r, D]`, y axis first, then multiplied by `scale`.
pub(crate) fn down_raw<T: Real>(w: &SamplingWeights<T>, kernel: Kernel, x: &[T], d: usize, scale: T, out: &mut [T]) {
    let (h_r, w_in, w_r) = (w.h_r(), w.w_in(), w.w_r());
    let mut tmp = vec![T::zero(); h_r * w_in * d];
    contract(&w.gy, kernel, x, w_in * d, &mut tmp);
    for (src, dst) in tmp.chunks_exact(w_in * d).zip(out.chunks_exact_mut(w_r * d)) {
        contract(&w.gx, kernel, src, d, dst);
    }
    for v in out.iter_mut() {
        *v = *v * scale;
    }
}

/// `[H_r, W_r, D] -> [H_in, W_in, D]` with the transposed weights, y axis first.
pub(crate) fn up_raw<T: Real>(w: &SamplingWeights<T>, kernel: Kernel, y: &[T], d: usize, scale: T, out: &mut [T]) {
    let (h_in, w_in, w_r) = (w.h_in(), w.w_in(), w.w_r());
    let mut tmp = vec![T::zero(); h_in * w_r * d];
    contract_t(&w.gy, kernel, y, w_r * d, &mut tmp);
    for (src, dst) in tmp.chunks_exact(w_r * d).zip(out.chunks_exact_mut(w_in * d)) {
        contract_t(&w.gx, kernel, src, d, dst);
    }
    for v in out.iter_mut() {
        *v = *v * scale;
    }
}

pub(crate) fn sample_scale<T: Real>(w: &SamplingWeights<T>) -> T {
    T::from_usize(w.h_r() * w.w_r())
}

pub(crate) fn inverse_scale<T: Real>(w: &SamplingWeights<T>) -> T {
    T::from_usize(w.h_in() * w.w_in())
}

fn check_hwd<T: Real>(op: &'static str, t: &Tensor<T>, h: usize, w: usize) -> Result<usize> {
    match t.shape() {
        &[th, tw, d] if th == h && tw == w => Ok(d),
        s => Err(Error::shape(op, alloc::format!("expected [{h}, {w}, D], got {s:?}"))),
    }
}

fn run_down<T: Real>(op: &'static str, x: &Tensor<T>, w: &SamplingWeights<T>, kernel: Kernel) -> Result<Tensor<T>> {
    let d = check_hwd(op, x, w.h_in(), w.w_in())?;
    let mut out = vec![T::zero(); w.h_r() * w.w_r() * d];
    down_raw(w, kernel, x.data(), d, sample_scale(w), &mut out);
    Tensor::new(&[w.h_r(), w.w_r(), d], out)
}

fn run_up<T: Real>(op: &'static str, y: &Tensor<T>, w: &SamplingWeights<T>, kernel: Kernel) -> Result<Tensor<T>> {
    let d = check_hwd(op, y, w.h_r(), w.w_r())?;
    let mut out = vec![T::zero(); w.h_in() * w.w_in() * d];
    up_raw(w, kernel, y.data(), d, inverse_scale(w), &mut out);
    Tensor::new(&[w.h_in(), w.w_in(), d], out)
}

/// `X^r[i,j,d] = H_r W_r sum_{h,w} Gy[i,h] Gx[j,w] X[h,w,d]` with dense products.
pub fn sample<T: Real>(x: &Tensor<T>, w: &SamplingWeights<T>) -> Result<Tensor<T>> {
    run_down("sample", x, w, Kernel::Dense)
}

/// Same as [`sample`], touching only the nonzero runs.
pub fn sample_sparse<T: Real>(x: &Tensor<T>, w: &SamplingWeights<T>) -> Result<Tensor<T>> {
    run_down("sample_sparse", x, w, Kernel::Sparse)
}

/// `Y[h,w,d] = H_in W_in sum_{i,j} Gy[i,h] Gx[j,w] Y^r[i,j,d]` with dense products.
pub fn inverse_sample<T: Real>(yr: &Tensor<T>, w: &SamplingWeights<T>) -> Result<Tensor<T>> {
    run_up("inverse_sample", yr, w, Kernel::Dense)
}

pub fn inverse_sample_sparse<T: Real>(yr: &Tensor<T>, w: &SamplingWeights<T>) -> Result<Tensor<T>> {
    run_up("inverse_sample_sparse", yr, w, Kernel::Sparse)
}

/// Gradients of one sampling step.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGrads<T> {
    /// Gradient with respect to the sampled (or inverse-sampled) tensor.
    pub grad_input: Vec<T>,
    /// Dense `H_r x H_in`; nonzero only on the runs of `Gy`.
    pub grad_gy: Vec<T>,
    /// Dense `W_r x W_in`; nonzero only on the runs of `Gx`.
    pub grad_gx: Vec<T>,
}

/// Accumulates `scale * <a[row(i)], b[row(j)]>` into `grad[i][j]` on the
/// support of `g`.
fn support_dots<T: Real>(g: &AxisWeights<T>, a: &[T], b: &[T], row_len: usize, scale: T, grad: &mut [T]) {
    let n = g.input_len();
    for (i, run) in g.sparse().runs().iter().enumerate() {
        let ai = &a[i * row_len..(i + 1) * row_len];
        for j in run.start..run.end() {
            grad[i * n + j] = grad[i * n + j] + scale * dot(ai, &b[j * row_len..(j + 1) * row_len]);
        }
    }
}

/// Backward of the sampling step for one `[H_in, W_in, D]` map.
pub(crate) fn down_backward_raw<T: Real>(
    w: &SamplingWeights<T>,
    kernel: Kernel,
    grad_out: &[T],
    x: &[T],
    d: usize,
) -> WeightGrads<T> {
    let (h_in, w_in, h_r, w_r) = (w.h_in(), w.w_in(), w.h_r(), w.w_r());
    let s = sample_scale(w);
    let mut grad_input = vec![T::zero(); h_in * w_in * d];
    up_raw(w, kernel, grad_out, d, s, &mut grad_input);

    // y-contracted input [H_r, W_in, D] pairs with grad_out for Gx.
    let mut ty = vec![T::zero(); h_r * w_in * d];
    contract(&w.gy, kernel, x, w_in * d, &mut ty);
    let mut grad_gx = vec![T::zero(); w_r * w_in];
    for i in 0..h_r {
        support_dots(
            &w.gx,
            &grad_out[i * w_r * d..(i + 1) * w_r * d],
            &ty[i * w_in * d..(i + 1) * w_in * d],
            d,
            s,
            &mut grad_gx,
        );
    }

    // x-contracted input [H_in, W_r, D] pairs with grad_out for Gy.
    let mut px = vec![T::zero(); h_in * w_r * d];
    for (src, dst) in x.chunks_exact(w_in * d).zip(px.chunks_exact_mut(w_r * d)) {
        contract(&w.gx, kernel, src, d, dst);
    }
    let mut grad_gy = vec![T::zero(); h_r * h_in];
    support_dots(&w.gy, grad_out, &px, w_r * d, s, &mut grad_gy);

    WeightGrads {
        grad_input,
        grad_gy,
        grad_gx,
    }
}

/// Backward of the inverse step for one `[H_r, W_r, D]` map.
pub(crate) fn up_backward_raw<T: Real>(
    w: &SamplingWeights<T>,
    kernel: Kernel,
    grad_out: &[T],
    y: &[T],
    d: usize,
) -> WeightGrads<T> {
    let (h_in, w_in, h_r, w_r) = (w.h_in(), w.w_in(), w.h_r(), w.w_r());
    let s = inverse_scale(w);
    let mut grad_input = vec![T::zero(); h_r * w_r * d];
    down_raw(w, kernel, grad_out, d, s, &mut grad_input);

    // Gy: needs y expanded along x, [H_r, W_in, D].
    let mut qx = vec![T::zero(); h_r * w_in * d];
    for (src, dst) in y.chunks_exact(w_r * d).zip(qx.chunks_exact_mut(w_in * d)) {
        contract_t(&w.gx, kernel, src, d, dst);
    }
    let mut grad_gy = vec![T::zero(); h_r * h_in];
    support_dots(&w.gy, &qx, grad_out, w_in * d, s, &mut grad_gy);

    // Gx: needs y expanded along y, [H_in, W_r, D].
    let mut ry = vec![T::zero(); h_in * w_r * d];
    contract_t(&w.gy, kernel, y, w_r * d, &mut ry);
    let mut grad_gx = vec![T::zero(); w_r * w_in];
    for h in 0..h_in {
        support_dots(
            &w.gx,
            &ry[h * w_r * d..(h + 1) * w_r * d],
            &grad_out[h * w_in * d..(h + 1) * w_in * d],
            d,
            s,
            &mut grad_gx,
        );
    }

    WeightGrads {
        grad_input,
        grad_gy,
        grad_gx,
    }
}

/// Gradients of a scalar loss through [`sample`]: with respect to `x` and
/// to the two marginals the weights were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_sy: Vec<T>,
    pub grad_sx: Vec<T>,
}

/// Chain rule through the sampling step and the weight construction.
pub fn sampler_backward<T: Real>(grad_out: &Tensor<T>, x: &Tensor<T>, w: &SamplingWeights<T>) -> Result<SamplerGrads<T>> {
    let d = check_hwd("sampler_backward", x, w.h_in(), w.w_in())?;
    if grad_out.shape() != [w.h_r(), w.w_r(), d] {
        return Err(Error::shape(
            "sampler_backward",
            alloc::format!("grad_out {:?} vs [{}, {}, {d}]", grad_out.shape(), w.h_r(), w.w_r()),
        ));
    }
    let g = down_backward_raw(w, Kernel::Sparse, grad_out.data(), x.data(), d);
    Ok(SamplerGrads {
        grad_x: Tensor::new(x.shape(), g.grad_input)?,
        grad_sy: w.gy.backward(&g.grad_gy),
        grad_sx: w.gx.backward(&g.grad_gx),
    })
}

/// Chain rule through [`inverse_sample`]; `grad_x` is with respect to `yr`.
pub fn inverse_sampler_backward<T: Real>(
    grad_out: &Tensor<T>,
    yr: &Tensor<T>,
    w: &SamplingWeights<T>,
) -> Result<SamplerGrads<T>> {
    let d = check_hwd("inverse_sampler_backward", yr, w.h_r(), w.w_r())?;
    if grad_out.shape() != [w.h_in(), w.w_in(), d] {
        return Err(Error::shape(
            "inverse_sampler_backward",
            alloc::format!("grad_out {:?} vs [{}, {}, {d}]", grad_out.shape(), w.h_in(), w.w_in()),
        ));
    }
    let g = up_backward_raw(w, Kernel::Sparse, grad_out.data(), yr.data(), d);
    Ok(SamplerGrads {
        grad_x: Tensor::new(yr.shape(), g.grad_input)?,
        grad_sy: w.gy.backward(&g.grad_gy),
        grad_sx: w.gx.backward(&g.grad_gx),
    })
}

/// Total stored weights over both axes.
pub fn nnz<T: Real>(w: &SamplingWeights<T>) -> (usize, usize) {
    (w.gy.nnz(), w.gx.nnz())
}
