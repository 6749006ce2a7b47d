use alloc::vec::Vec;

use crate::{Error, Real, Result};

/// Per-position saliency scores of one feature map, `h x w`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap<T> {
    h: usize,
    w: usize,
    values: Vec<T>,
}

impl<T: Real> SaliencyMap<T> {
    /// Entries must be finite and non-negative. A sigmoid head always gives
    /// values in `(0, 1)`.
    pub fn new(h: usize, w: usize, values: Vec<T>) -> Result<Self> {
        if h == 0 || w == 0 || values.len() != h * w {
            return Err(Error::shape(
                "saliency_map",
                alloc::format!("{h}x{w} map with {} values", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::Invalid("saliency values must be finite and >= 0".into()));
        }
        Ok(SaliencyMap { h, w, values })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// Normalized row (`sy`, length `h`) and column (`sx`, length `w`) sums.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMarginals<T> {
    pub sy: Vec<T>,
    pub sx: Vec<T>,
}

/// Row and column sums of `s`, each divided by the total mass.
///
/// Sums are accumulated in `f64`; a constant map yields exactly
/// `1/h` and `1/w` after rounding to `T`.
pub fn marginalize<T: Real>(s: &SaliencyMap<T>) -> Result<SaliencyMarginals<T>> {
    let (sy, sx) = marginalize_raw(s.h, s.w, &s.values)?;
    Ok(SaliencyMarginals { sy, sx })
}

pub(crate) fn marginalize_raw<T: Real>(h: usize, w: usize, s: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let mut rows = alloc::vec![0.0f64; h];
    let mut cols = alloc::vec![0.0f64; w];
    for (r, row) in s.chunks_exact(w).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let v = v.as_f64();
            rows[r] += v;
            cols[c] += v;
        }
    }
    let total: f64 = rows.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::Invalid(alloc::format!(
            "saliency map total must be positive and finite, got {total}"
        )));
    }
    let sy = rows.iter().map(|&v| T::from_f64(v / total)).collect();
    let sx = cols.iter().map(|&v| T::from_f64(v / total)).collect();
    Ok((sy, sx))
}

/// Gradient of a scalar loss with respect to the map, given its gradients
/// with respect to `sy` and `sx`.
pub fn marginalize_backward<T: Real>(
    s: &SaliencyMap<T>,
    marginals: &SaliencyMarginals<T>,
    grad_sy: &[T],
    grad_sx: &[T],
) -> Vec<T> {
    let mut out = alloc::vec![T::zero(); s.h * s.w];
    marginalize_backward_raw(s.h, s.w, &s.values, &marginals.sy, &marginals.sx, grad_sy, grad_sx, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn marginalize_backward_raw<T: Real>(
    h: usize,
    w: usize,
    s: &[T],
    sy: &[T],
    sx: &[T],
    grad_sy: &[T],
    grad_sx: &[T],
    out: &mut [T],
) {
    // sy_j = R_j / total  =>  d sy_j / d S_{j,w} = (1 - sy_j) / total,
    //                         d sy_k / d S_{j,w} = -sy_k / total (k != j)
    let total: f64 = s.iter().map(|v| v.as_f64()).sum();
    let dot_y: f64 = grad_sy.iter().zip(sy).map(|(g, m)| g.as_f64() * m.as_f64()).sum();
    let dot_x: f64 = grad_sx.iter().zip(sx).map(|(g, m)| g.as_f64() * m.as_f64()).sum();
    for r in 0..h {
        let gy = grad_sy[r].as_f64() - dot_y;
        for c in 0..w {
            let gx = grad_sx[c].as_f64() - dot_x;
            out[r * w + c] = out[r * w + c] + T::from_f64((gy + gx) / total);
        }
    }
}
