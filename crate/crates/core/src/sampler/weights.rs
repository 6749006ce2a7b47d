use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Real, Result};

/// Largest accepted deviation of a marginal's sum from 1 before it is
/// renormalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-4;

/// Interval endpoints closer than this are treated as coincident: the
/// overlap is zero and the `min`/`max` branch is a tie. Removes rounding
/// slivers such as `7 * fl(1/7)` vs `7/7`.
pub const TIE_EPSILON: f64 = 1e-12;

/// Contiguous band of one output row: columns `start..start + len`, whose
/// weights are stored at `offset..offset + len` of the value buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub start: usize,
    pub len: usize,
    pub offset: usize,
}

impl Run {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Row-wise run-length form of an `r x n` interval-overlap matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAxis<T> {
    n: usize,
    r: usize,
    runs: Vec<Run>,
    values: Vec<T>,
}

impl<T: Real> SparseAxis<T> {
    /// Builds from `(start column, weights)` per output row, checking that
    /// every row is non-empty, lies inside `0..n` and that consecutive rows
    /// form a staircase (starts nondecreasing, neighbours share at most one
    /// column).
    pub fn from_runs(n: usize, rows: Vec<(usize, Vec<T>)>) -> Result<Self> {
        let r = rows.len();
        if r == 0 || n == 0 {
            return Err(Error::CorruptRuns("empty matrix".into()));
        }
        let mut runs = Vec::with_capacity(r);
        let mut values = Vec::new();
        let mut prev: Option<Run> = None;
        for (i, (start, w)) in rows.into_iter().enumerate() {
            if w.is_empty() {
                return Err(Error::CorruptRuns(alloc::format!("row {i} has no weights")));
            }
            if w.iter().all(|v| *v == T::zero()) {
                return Err(Error::CorruptRuns(alloc::format!("row {i} carries zero mass")));
            }
            if w.iter().any(|v| !v.is_finite() || *v < T::zero()) {
                return Err(Error::CorruptRuns(alloc::format!("row {i} has a negative or non-finite weight")));
            }
            let run = Run {
                start,
                len: w.len(),
                offset: values.len(),
            };
            if run.end() > n {
                return Err(Error::CorruptRuns(alloc::format!(
                    "row {i} spans columns {}..{} beyond width {n}",
                    run.start,
                    run.end()
                )));
            }
            if let Some(p) = prev {
                if run.start < p.start {
                    return Err(Error::CorruptRuns(alloc::format!("row {i} starts before row {}", i - 1)));
                }
                if run.start + 1 < p.end() {
                    return Err(Error::CorruptRuns(alloc::format!("row {i} overlaps row {}", i - 1)));
                }
            }
            values.extend_from_slice(&w);
            runs.push(run);
            prev = Some(run);
        }
        Ok(SparseAxis { n, r, runs, values })
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (usize, &[T]) {
        let run = self.runs[i];
        (run.start, &self.values[run.offset..run.offset + run.len])
    }

    pub fn input_len(&self) -> usize {
        self.n
    }

    pub fn output_len(&self) -> usize {
        self.r
    }

    /// Stored entries that are nonzero.
    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| **v != T::zero()).count()
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut dense = vec![T::zero(); self.r * self.n];
        for (i, run) in self.runs.iter().enumerate() {
            dense[i * self.n + run.start..i * self.n + run.end()]
                .copy_from_slice(&self.values[run.offset..run.offset + run.len]);
        }
        dense
    }
}

/// Sampling weights of one axis: `r x n` matrix mapping `n` input positions
/// onto `r` output positions, together with the cumulative sums it was
/// built from.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisWeights<T> {
    n: usize,
    r: usize,
    dense: Vec<T>,
    sparse: SparseAxis<T>,
    cum_s: Vec<f64>,
    cum_u: Vec<f64>,
    mass: f64,
}

impl<T: Real> AxisWeights<T> {
    pub fn input_len(&self) -> usize {
        self.n
    }

    pub fn output_len(&self) -> usize {
        self.r
    }

    /// Row-major `r x n`.
    pub fn dense(&self) -> &[T] {
        &self.dense
    }

    pub fn sparse(&self) -> &SparseAxis<T> {
        &self.sparse
    }

    /// Cumulative saliency, length `n + 1`, starting at 0.
    pub fn cum_saliency(&self) -> &[f64] {
        &self.cum_s
    }

    /// Cumulative uniform target, length `r + 1`, `i / r`.
    pub fn cum_uniform(&self) -> &[f64] {
        &self.cum_u
    }

    pub fn nnz(&self) -> usize {
        self.dense.iter().filter(|v| **v != T::zero()).count()
    }

    /// Back-propagates `d loss / d G` (dense, `r x n`) to the marginal that
    /// built these weights.
    ///
    /// Only strictly positive entries of `G` carry gradient. At ties inside
    /// `min`/`max` the derivative is taken as 0.
    pub fn backward(&self, grad_g: &[T]) -> Vec<T> {
        debug_assert_eq!(grad_g.len(), self.r * self.n);
        let (cs, cu) = (&self.cum_s, &self.cum_u);
        let mut grad_c = vec![0.0f64; self.n + 1];
        for (i, run) in self.sparse.runs.iter().enumerate() {
            for j in run.start..run.end() {
                if self.dense[i * self.n + j] <= T::zero() {
                    continue;
                }
                let g = grad_g[i * self.n + j].as_f64();
                if cs[j + 1] < cu[i + 1] - TIE_EPSILON {
                    grad_c[j + 1] += g;
                }
                if cs[j] > cu[i] + TIE_EPSILON {
                    grad_c[j] -= g;
                }
            }
        }
        // C_j = sum_{k<j} m_k / mass, so d/dm_k collects C_{k+1}..C_n.
        let mut grad_norm = vec![0.0f64; self.n];
        let mut acc = 0.0f64;
        for k in (0..self.n).rev() {
            acc += grad_c[k + 1];
            grad_norm[k] = acc;
        }
        let dot: f64 = grad_norm
            .iter()
            .enumerate()
            .map(|(k, g)| g * (cs[k + 1] - cs[k]))
            .sum();
        grad_norm
            .iter()
            .map(|g| T::from_f64((g - dot) / self.mass))
            .collect()
    }
}

/// Interval-overlap weights for one axis.
///
/// Input position `j` owns `[C^S_j, C^S_{j+1})` of the unit interval (its
/// saliency mass), output position `i` owns `[i/r, (i+1)/r)`, and
/// `G[i][j]` is the length of their overlap. Rows therefore sum to `1/r`
/// and columns to the marginal.
pub fn build_weights<T: Real>(marginal: &[T], r: usize) -> Result<AxisWeights<T>> {
    let n = marginal.len();
    if n == 0 || r == 0 {
        return Err(Error::Invalid(alloc::format!(
            "sampling axis needs n >= 1 and r >= 1 (n = {n}, r = {r})"
        )));
    }
    if marginal.iter().any(|v| !v.is_finite() || *v < T::zero()) {
        return Err(Error::Invalid("marginal entries must be finite and >= 0".into()));
    }
    let mass: f64 = marginal.iter().map(|v| v.as_f64()).sum();
    if (mass - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::Unnormalized { sum: mass });
    }

    let mut cum_s = Vec::with_capacity(n + 1);
    let mut acc = 0.0f64;
    cum_s.push(0.0);
    for v in marginal {
        acc += v.as_f64() / mass;
        cum_s.push(acc);
    }
    let cum_u: Vec<f64> = (0..=r).map(|i| i as f64 / r as f64).collect();

    let mut dense = vec![T::zero(); r * n];
    let mut rows = Vec::with_capacity(r);
    // First column whose interval may reach row i; nondecreasing in i.
    let mut lo = 0usize;
    for i in 0..r {
        while lo + 1 < n && cum_s[lo + 1] <= cum_u[i] {
            lo += 1;
        }
        let mut first = None;
        let mut last = 0;
        let mut j = lo;
        while j < n && cum_s[j] < cum_u[i + 1] {
            let overlap = cum_s[j + 1].min(cum_u[i + 1]) - cum_s[j].max(cum_u[i]);
            if overlap > TIE_EPSILON {
                dense[i * n + j] = T::from_f64(overlap);
                first.get_or_insert(j);
                last = j;
            }
            j += 1;
        }
        let Some(first) = first else {
            return Err(Error::CorruptRuns(alloc::format!("output row {i} received no mass")));
        };
        rows.push((first, dense[i * n + first..=i * n + last].to_vec()));
    }
    let sparse = SparseAxis::from_runs(n, rows)?;
    Ok(AxisWeights {
        n,
        r,
        dense,
        sparse,
        cum_s,
        cum_u,
        mass,
    })
}

/// Reference construction evaluating the overlap formula on every entry.
/// Quadratic; kept for audits against [`build_weights`].
pub fn overlap_matrix(marginal: &[f64], r: usize) -> Vec<f64> {
    let n = marginal.len();
    let mut cs = vec![0.0; n + 1];
    for j in 0..n {
        cs[j + 1] = cs[j] + marginal[j];
    }
    let mut g = vec![0.0; r * n];
    for i in 0..r {
        let (u0, u1) = (i as f64 / r as f64, (i + 1) as f64 / r as f64);
        for j in 0..n {
            g[i * n + j] = (cs[j + 1].min(u1) - cs[j].max(u0)).max(0.0);
        }
    }
    g
}

/// Pair of per-axis weights used by one sampling step.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingWeights<T> {
    pub gy: AxisWeights<T>,
    pub gx: AxisWeights<T>,
}

impl<T: Real> SamplingWeights<T> {
    pub fn from_marginals(sy: &[T], sx: &[T], h_r: usize, w_r: usize) -> Result<Self> {
        Ok(SamplingWeights {
            gy: build_weights(sy, h_r)?,
            gx: build_weights(sx, w_r)?,
        })
    }

    pub fn h_in(&self) -> usize {
        self.gy.n
    }

    pub fn w_in(&self) -> usize {
        self.gx.n
    }

    pub fn h_r(&self) -> usize {
        self.gy.r
    }

    pub fn w_r(&self) -> usize {
        self.gx.r
    }
}

/// Weights of uniform saliency, produced by the same construction as the
/// adaptive path.
pub fn uniform_weights<T: Real>(h_in: usize, w_in: usize, h_r: usize, w_r: usize) -> Result<SamplingWeights<T>> {
    SamplingWeights::from_marginals(&uniform_marginal(h_in), &uniform_marginal(w_in), h_r, w_r)
}

pub fn uniform_marginal<T: Real>(n: usize) -> Vec<T> {
    vec![T::from_f64(1.0 / n as f64); n]
}
