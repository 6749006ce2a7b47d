#![allow(dead_code)]

pub mod suite;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Positive map entries, like a sigmoid output.
pub fn saliency(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    uniform_vec(rng, n, 0.02, 0.98)
}

pub fn normalized(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// Largest `|a - b| / max(|a|, |b|, floor)`.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn max_abs_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Central differences of `f` at `x` with step `h * max(1, |x_i|)`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let step = h * x[i].abs().max(1.0);
            p[i] = x[i] + step;
            let up = f(&p);
            p[i] = x[i] - step;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Gradient-check comparison: relative error against the larger of the
/// two vectors' norms, so near-zero components don't dominate.
pub fn grad_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1e-8);
    max_abs_err(analytic, numeric) / scale
}

/// Overlap of input interval `j` with output interval `i`, by direct
/// enumeration of both partitions of `[0, 1]`.
pub fn oracle_axis(marginal: &[f64], r: usize) -> Vec<Vec<f64>> {
    let n = marginal.len();
    let total: f64 = marginal.iter().sum();
    let mut edges_s = vec![0.0];
    for m in marginal {
        edges_s.push(edges_s.last().unwrap() + m / total);
    }
    let mut g = vec![vec![0.0; n]; r];
    for (i, row) in g.iter_mut().enumerate() {
        let a0 = i as f64 / r as f64;
        let a1 = (i + 1) as f64 / r as f64;
        for (j, v) in row.iter_mut().enumerate() {
            let lo = if a0 > edges_s[j] { a0 } else { edges_s[j] };
            let hi = if a1 < edges_s[j + 1] { a1 } else { edges_s[j + 1] };
            if hi > lo {
                *v = hi - lo;
            }
        }
    }
    g
}

/// Row and column sums of an `h x w` map, each divided by the total.
pub fn oracle_marginals(h: usize, w: usize, s: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let total: f64 = s.iter().sum();
    let mut sy = vec![0.0; h];
    let mut sx = vec![0.0; w];
    for y in 0..h {
        for x in 0..w {
            sy[y] += s[y * w + x];
            sx[x] += s[y * w + x];
        }
    }
    (sy.iter().map(|v| v / total).collect(), sx.iter().map(|v| v / total).collect())
}

/// `X^r[i][j][d] = H_r W_r sum_{h,w} gy[i][h] gx[j][w] X[h][w][d]`.
pub fn oracle_sample(gy: &[Vec<f64>], gx: &[Vec<f64>], x: &[f64], h: usize, w: usize, d: usize) -> Vec<f64> {
    let (hr, wr) = (gy.len(), gx.len());
    let scale = (hr * wr) as f64;
    let mut out = vec![0.0; hr * wr * d];
    for i in 0..hr {
        for j in 0..wr {
            for c in 0..d {
                let mut acc = 0.0;
                for y in 0..h {
                    for xx in 0..w {
                        acc += gy[i][y] * gx[j][xx] * x[(y * w + xx) * d + c];
                    }
                }
                out[(i * wr + j) * d + c] = scale * acc;
            }
        }
    }
    out
}

/// `Y[h][w][d] = H W sum_{i,j} gy[i][h] gx[j][w] Y^r[i][j][d]`.
pub fn oracle_inverse(gy: &[Vec<f64>], gx: &[Vec<f64>], yr: &[f64], h: usize, w: usize, d: usize) -> Vec<f64> {
    let (hr, wr) = (gy.len(), gx.len());
    let scale = (h * w) as f64;
    let mut out = vec![0.0; h * w * d];
    for y in 0..h {
        for xx in 0..w {
            for c in 0..d {
                let mut acc = 0.0;
                for i in 0..hr {
                    for j in 0..wr {
                        acc += gy[i][y] * gx[j][xx] * yr[(i * wr + j) * d + c];
                    }
                }
                out[(y * w + xx) * d + c] = scale * acc;
            }
        }
    }
    out
}
