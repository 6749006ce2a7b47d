//! Dense versus sparse sampler timings.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ssb_core::sampler::{
    inverse_sample, inverse_sample_sparse, marginalize, sample, sample_sparse, SaliencyMap, SamplingWeights,
};
use ssb_core::Tensor;

use crate::error::{AppError, AppResult};

pub const WARMUP: usize = 3;
pub const MIN_REPS: usize = 20;
/// Largest relative deviation allowed between the two kernels.
pub const GATE: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchCase {
    pub h_in: usize,
    pub w_in: usize,
    pub h_r: usize,
    pub w_r: usize,
    pub d: usize,
}

impl BenchCase {
    pub fn square(n: usize, r: usize, d: usize) -> Self {
        BenchCase {
            h_in: n,
            w_in: n,
            h_r: r,
            w_r: r,
            d,
        }
    }

    /// `NxRxD`, square maps.
    pub fn parse(s: &str) -> AppResult<Self> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| AppError::Usage(format!("bench case `{s}` must be HxRxD")))?;
        match parts[..] {
            [n, r, d] if n > 0 && r > 0 && r <= n && d > 0 => Ok(Self::square(n, r, d)),
            _ => Err(AppError::Usage(format!("bench case `{s}` must be HxRxD with 0 < R <= H and D > 0"))),
        }
    }
}

pub const DEFAULT_GRID: [BenchCase; 5] = [
    BenchCase { h_in: 64, w_in: 64, h_r: 16, w_r: 16, d: 256 },
    BenchCase { h_in: 32, w_in: 32, h_r: 8, w_r: 8, d: 256 },
    BenchCase { h_in: 56, w_in: 56, h_r: 16, w_r: 16, d: 64 },
    BenchCase { h_in: 16, w_in: 16, h_r: 16, w_r: 16, d: 64 },
    BenchCase { h_in: 128, w_in: 128, h_r: 32, w_r: 32, d: 32 },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    #[serde(rename = "H_in")]
    pub h_in: usize,
    #[serde(rename = "W_in")]
    pub w_in: usize,
    #[serde(rename = "H_r")]
    pub h_r: usize,
    #[serde(rename = "W_r")]
    pub w_r: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub dense_ns: u64,
    pub sparse_ns: u64,
    pub speedup: f64,
}

fn median(mut v: Vec<u64>) -> u64 {
    v.sort_unstable();
    v[v.len() / 2]
}

fn rel_dev(a: &Tensor<f32>, b: &Tensor<f32>) -> f32 {
    let scale = a.data().iter().map(|v| v.abs()).fold(f32::MIN_POSITIVE, f32::max);
    a.max_abs_diff(b) / scale
}

/// Times sample followed by inverse sample with both kernels on a random
/// saliency map, after checking that they agree.
pub fn run_case(c: BenchCase, reps: usize, seed: u64) -> AppResult<BenchRow> {
    let reps = reps.max(MIN_REPS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s: Vec<f32> = (0..c.h_in * c.w_in).map(|_| rng.random_range(0.01f32..0.99)).collect();
    let m = marginalize(&SaliencyMap::new(c.h_in, c.w_in, s)?)?;
    let w = SamplingWeights::from_marginals(&m.sy, &m.sx, c.h_r, c.w_r)?;
    let x: Vec<f32> = (0..c.h_in * c.w_in * c.d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let x = Tensor::new(&[c.h_in, c.w_in, c.d], x)?;

    let dense = |x: &Tensor<f32>| -> AppResult<Tensor<f32>> { Ok(inverse_sample(&sample(x, &w)?, &w)?) };
    let sparse = |x: &Tensor<f32>| -> AppResult<Tensor<f32>> { Ok(inverse_sample_sparse(&sample_sparse(x, &w)?, &w)?) };
    let (a, b) = (sample(&x, &w)?, sample_sparse(&x, &w)?);
    let (ai, bi) = (dense(&x)?, sparse(&x)?);
    let dev = rel_dev(&a, &b).max(rel_dev(&ai, &bi));
    if dev > GATE || !dev.is_finite() {
        return Err(AppError::Numeric(format!(
            "correctness gate failed for {c:?}: dense and sparse differ by {dev:e} (limit {GATE:e})"
        )));
    }

    for _ in 0..WARMUP {
        black_box(dense(&x)?);
        black_box(sparse(&x)?);
    }
    let (mut td, mut ts) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
    for _ in 0..reps {
        let t = Instant::now();
        black_box(dense(black_box(&x))?);
        td.push(t.elapsed().as_nanos() as u64);
        let t = Instant::now();
        black_box(sparse(black_box(&x))?);
        ts.push(t.elapsed().as_nanos() as u64);
    }
    let (dense_ns, sparse_ns) = (median(td), median(ts));
    Ok(BenchRow {
        h_in: c.h_in,
        w_in: c.w_in,
        h_r: c.h_r,
        w_r: c.w_r,
        d: c.d,
        dense_ns,
        sparse_ns,
        speedup: dense_ns as f64 / sparse_ns.max(1) as f64,
    })
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_cases() {
        assert_eq!(BenchCase::parse("64x16x256").unwrap(), BenchCase::square(64, 16, 256));
        assert!(BenchCase::parse("16x32x4").is_err());
        assert!(BenchCase::parse("16x4").is_err());
    }

    #[test]
    fn small_case_runs_and_serializes() {
        let row = run_case(BenchCase::square(12, 4, 3), 20, 1).unwrap();
        assert!(row.dense_ns > 0 && row.sparse_ns > 0);
        let csv = to_csv(&[row]);
        assert!(csv.starts_with("H_in,W_in,H_r,W_r,D,dense_ns,sparse_ns,speedup\n12,12,4,4,3,"));
    }
}
