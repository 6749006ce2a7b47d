use alloc::vec;
use alloc::vec::Vec;

use crate::{Real, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub epsilon: T,
}

impl<T: Real> BnStats<T> {
    pub fn new(channels: usize) -> Self {
        BnStats {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::from_f64(BN_MOMENTUM),
            epsilon: T::from_f64(BN_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// Learnable scale/shift plus running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: BnStats<T>,
}

impl<T: Real> BatchNormParams<T> {
    /// `gamma = 1`, `beta = 0`.
    pub fn new(channels: usize) -> Self {
        Self::with_gamma(channels, T::one())
    }

    pub fn with_gamma(channels: usize, gamma: T) -> Self {
        BatchNormParams {
            gamma: Tensor::full(&[channels], gamma),
            beta: Tensor::zeros(&[channels]),
            stats: BnStats::new(channels),
        }
    }
}

pub(crate) struct BnForward<T> {
    pub out: Vec<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes over every axis but the last. In training mode batch
/// statistics are used and the running statistics move by
/// `(1 - m) * old + m * batch`, with the unbiased batch variance.
pub(crate) fn bn_forward<T: Real>(x: &[T], c: usize, gamma: &[T], beta: &[T], stats: &mut BnStats<T>, training: bool) -> BnForward<T> {
    let m = x.len() / c;
    let (mean, var) = if training {
        let mut mean = vec![0.0f64; c];
        for row in x.chunks_exact(c) {
            for (a, v) in mean.iter_mut().zip(row) {
                *a += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|a| *a /= m as f64);
        let mut var = vec![0.0f64; c];
        for row in x.chunks_exact(c) {
            for k in 0..c {
                let d = row[k].as_f64() - mean[k];
                var[k] += d * d;
            }
        }
        var.iter_mut().for_each(|a| *a /= m as f64);
        let mom = stats.momentum;
        let one = T::one();
        let unbias = if m > 1 { m as f64 / (m - 1) as f64 } else { 1.0 };
        for k in 0..c {
            stats.running_mean[k] = (one - mom) * stats.running_mean[k] + mom * T::from_f64(mean[k]);
            stats.running_var[k] = (one - mom) * stats.running_var[k] + mom * T::from_f64(var[k] * unbias);
        }
        (
            mean.into_iter().map(T::from_f64).collect::<Vec<T>>(),
            var.into_iter().map(T::from_f64).collect::<Vec<T>>(),
        )
    } else {
        (stats.running_mean.clone(), stats.running_var.clone())
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + stats.epsilon).sqrt()).collect();
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    for ((row, o), xh) in x.chunks_exact(c).zip(out.chunks_exact_mut(c)).zip(xhat.chunks_exact_mut(c)) {
        for k in 0..c {
            xh[k] = (row[k] - mean[k]) * inv_std[k];
            o[k] = gamma[k] * xh[k] + beta[k];
        }
    }
    BnForward { out, xhat, inv_std }
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn bn_backward<T: Real>(
    grad: &[T],
    c: usize,
    gamma: &[T],
    xhat: &[T],
    inv_std: &[T],
    training: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let m = grad.len() / c;
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for (g, xh) in grad.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for k in 0..c {
            dbeta[k] += g[k].as_f64();
            dgamma[k] += g[k].as_f64() * xh[k].as_f64();
        }
    }
    let mut dx = vec![T::zero(); grad.len()];
    let mf = m as f64;
    for ((g, xh), d) in grad.chunks_exact(c).zip(xhat.chunks_exact(c)).zip(dx.chunks_exact_mut(c)) {
        for k in 0..c {
            let scale = gamma[k] * inv_std[k];
            d[k] = if training {
                scale * T::from_f64((mf * g[k].as_f64() - dbeta[k] - xh[k].as_f64() * dgamma[k]) / mf)
            } else {
                scale * g[k]
            };
        }
    }
    (
        dx,
        dgamma.into_iter().map(T::from_f64).collect(),
        dbeta.into_iter().map(T::from_f64).collect(),
    )
}
