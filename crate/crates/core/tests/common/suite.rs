//! Check routines shared by the per-area tests and the acceptance run.

use rand_chacha::ChaCha8Rng;
use ssb_core::autodiff::{Axis, BnStats, Graph, Padding, Var};
use ssb_core::network::{ssb_layer, SamplerVars, SsbLayerConfig};
use ssb_core::sampler::{
    inverse_sample, inverse_sample_sparse, marginalize, sample, sample_sparse, AxisWeights, Kernel, SaliencyMap,
    SamplerVariant, SamplingWeights,
};
use ssb_core::{Real, Result, Tensor};

use super::*;

pub fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap()
}

pub fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    t(shape, uniform_vec(rng, n, lo, hi))
}

pub fn weights_from_map(h: usize, w: usize, s: &[f64], hr: usize, wr: usize) -> SamplingWeights<f64> {
    let m = marginalize(&SaliencyMap::new(h, w, s.to_vec()).unwrap()).unwrap();
    SamplingWeights::from_marginals(&m.sy, &m.sx, hr, wr).unwrap()
}

/// Every structural invariant of one axis of sampling weights.
pub fn axis_invariants<T: Real>(g: &AxisWeights<T>, marginal: &[T]) -> std::result::Result<(), String> {
    let (n, r) = (g.input_len(), g.output_len());
    let dense = g.dense();
    if !dense.iter().all(|v| *v >= T::zero()) {
        return Err("negative weight".into());
    }
    for i in 0..r {
        let s: f64 = dense[i * n..(i + 1) * n].iter().map(|v| v.as_f64()).sum();
        if (s - 1.0 / r as f64).abs() > 1e-6 {
            return Err(format!("row {i} sums to {s}, want 1/{r}"));
        }
    }
    for j in 0..n {
        let s: f64 = (0..r).map(|i| dense[i * n + j].as_f64()).sum();
        if (s - marginal[j].as_f64()).abs() > 1e-6 {
            return Err(format!("column {j} sums to {s} vs marginal {}", marginal[j].as_f64()));
        }
    }
    if g.nnz() > n + r {
        return Err(format!("nnz {} exceeds n + r = {}", g.nnz(), n + r));
    }
    if dense.iter().filter(|v| **v != T::zero()).count() != g.nnz() {
        return Err("nnz disagrees with the dense matrix".into());
    }
    let mut prev_start = 0;
    for i in 0..r {
        let (start, run) = g.sparse().row(i);
        if start < prev_start {
            return Err(format!("row {i} starts before row {}", i.saturating_sub(1)));
        }
        prev_start = start;
        if run.is_empty() {
            return Err(format!("row {i} is empty"));
        }
        for j in 0..n {
            let inside = j >= start && j < start + run.len();
            let want = if inside { run[j - start] } else { T::zero() };
            if dense[i * n + j] != want {
                return Err(format!("row {i} has a non-zero outside its run at column {j}"));
            }
        }
    }
    if g.sparse().to_dense() != dense {
        return Err("sparse rows do not expand to the dense matrix".into());
    }
    Ok(())
}

/// Worst absolute deviation of the dense and sparse kernels from the
/// nested-loop oracle over every shape up to 8x8x4; returns
/// `(cases, worst)`.
pub fn oracle_equivalence(seed: u64) -> (usize, f64) {
    let mut rng = rng(seed);
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for h in 1..=8 {
        for w in 1..=8 {
            for hr in 1..=h {
                for wr in 1..=w {
                    for d in 1..=4 {
                        let s = saliency(&mut rng, h * w);
                        let wts = weights_from_map(h, w, &s, hr, wr);
                        let (sy, sx) = oracle_marginals(h, w, &s);
                        let (gy, gx) = (oracle_axis(&sy, hr), oracle_axis(&sx, wr));
                        let x = uniform_vec(&mut rng, h * w * d, -1.0, 1.0);
                        let yr = uniform_vec(&mut rng, hr * wr * d, -1.0, 1.0);
                        let xt = t(&[h, w, d], x.clone());
                        let yt = t(&[hr, wr, d], yr.clone());

                        let want = oracle_sample(&gy, &gx, &x, h, w, d);
                        for got in [sample(&xt, &wts).unwrap(), sample_sparse(&xt, &wts).unwrap()] {
                            worst = worst.max(max_abs_err(got.data(), &want));
                        }
                        let want = oracle_inverse(&gy, &gx, &yr, h, w, d);
                        for got in [inverse_sample(&yt, &wts).unwrap(), inverse_sample_sparse(&yt, &wts).unwrap()] {
                            worst = worst.max(max_abs_err(got.data(), &want));
                        }
                        cases += 1;
                    }
                }
            }
        }
    }
    (cases, worst)
}

pub type GraphFn = Box<GraphFnRef>;
pub type GraphFnRef = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;
pub type MakeFn = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>>;

/// One differentiable primitive with an input generator.
pub struct GradCase {
    pub name: String,
    pub make: MakeFn,
    pub f: GraphFn,
}

fn case(
    name: impl Into<String>,
    make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>> + 'static,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
) -> GradCase {
    GradCase {
        name: name.into(),
        make: Box::new(make),
        f: Box::new(f),
    }
}

pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Checks `d <r, f(inputs)> / d inputs` against central differences.
pub fn gradcheck(seed: u64, inputs: &[Tensor<f64>], f: &GraphFnRef) -> f64 {
    let mut rng = rng(seed ^ 0x5eed);
    let forward = |vals: &[Tensor<f64>], g: &mut Graph<f64>| -> (Vec<Var>, Var) {
        let vars: Vec<Var> = vals.iter().map(|v| g.leaf(v.clone(), true)).collect();
        (vars.clone(), f(g, &vars).unwrap())
    };
    let mut probe = Graph::new();
    let (_, out) = forward(inputs, &mut probe);
    let r = rand_t(&mut rng, probe.shape(out), -1.0, 1.0);
    let loss = |g: &mut Graph<f64>, out: Var| {
        let rv = g.constant(r.clone());
        let m = g.mul(out, rv).unwrap();
        g.sum(m).unwrap()
    };

    let mut g = Graph::new();
    let (vars, out) = forward(inputs, &mut g);
    let l = loss(&mut g, out);
    g.backward(l).unwrap();
    let analytic: Vec<f64> = vars
        .iter()
        .zip(inputs)
        .flat_map(|(v, x)| g.grad(*v).unwrap_or_else(|| Tensor::zeros(x.shape())).into_data())
        .collect();

    let flat: Vec<f64> = inputs.iter().flat_map(|x| x.data().to_vec()).collect();
    let numeric = numeric_grad(&flat, 1e-6, |p| {
        let mut off = 0;
        let vals: Vec<Tensor<f64>> = inputs
            .iter()
            .map(|x| {
                let v = t(x.shape(), p[off..off + x.len()].to_vec());
                off += x.len();
                v
            })
            .collect();
        let mut g = Graph::new();
        let (_, out) = forward(&vals, &mut g);
        let l = loss(&mut g, out);
        g.value(l).data()[0]
    });
    grad_rel_err(&analytic, &numeric)
}

/// Largest relative error of `c` over [`SEEDS`].
pub fn worst_grad_err(c: &GradCase) -> f64 {
    SEEDS
        .iter()
        .map(|&seed| gradcheck(seed, &(c.make)(&mut rng(seed)), &*c.f))
        .fold(0.0, f64::max)
}

pub fn elementwise_cases() -> Vec<GradCase> {
    const S: [usize; 3] = [2, 3, 4];
    vec![
        case("add", |r| vec![rand_t(r, &S, -1.0, 1.0), rand_t(r, &S, -1.0, 1.0)], |g, v| g.add(v[0], v[1])),
        case("mul", |r| vec![rand_t(r, &S, -1.0, 1.0), rand_t(r, &S, -1.0, 1.0)], |g, v| g.mul(v[0], v[1])),
        case("scale", |r| vec![rand_t(r, &S, -1.0, 1.0)], |g, v| g.scale(v[0], -2.5)),
        case("sum", |r| vec![rand_t(r, &S, -1.0, 1.0)], |g, v| g.sum(v[0])),
        case("relu", |r| vec![rand_t(r, &S, -1.0, 1.0)], |g, v| g.relu(v[0])),
        case("sigmoid", |r| vec![rand_t(r, &S, -3.0, 3.0)], |g, v| g.sigmoid(v[0])),
        case("reshape", |r| vec![rand_t(r, &S, -1.0, 1.0)], |g, v| g.reshape(v[0], &[6, 4])),
    ]
}

pub fn conv_cases() -> Vec<GradCase> {
    let mut out = Vec::new();
    for (stride, pad, k) in [(1, Padding::Same, 3), (2, Padding::Same, 3), (1, Padding::Valid, 3), (2, Padding::Same, 1), (1, Padding::Same, 5)] {
        out.push(case(
            format!("conv2d k{k} s{stride} {pad:?}"),
            move |r| vec![rand_t(r, &[2, 6, 5, 3], -1.0, 1.0), rand_t(r, &[k, k, 3, 2], -1.0, 1.0)],
            move |g, v| g.conv2d(v[0], v[1], stride, pad),
        ));
    }
    for stride in [1, 2] {
        out.push(case(
            format!("depthwise_conv2d s{stride}"),
            |r| vec![rand_t(r, &[2, 7, 6, 3], -1.0, 1.0), rand_t(r, &[5, 5, 3], -1.0, 1.0)],
            move |g, v| g.depthwise_conv2d(v[0], v[1], stride, Padding::Same),
        ));
    }
    out
}

pub fn batchnorm_cases() -> Vec<GradCase> {
    [true, false]
        .into_iter()
        .map(|training| {
            case(
                format!("batchnorm training={training}"),
                |r| vec![rand_t(r, &[3, 4, 2, 3], -2.0, 2.0), rand_t(r, &[3], 0.5, 1.5), rand_t(r, &[3], -1.0, 1.0)],
                move |g, v| {
                    let mut stats = BnStats::new(3);
                    stats.running_mean = vec![0.1, -0.2, 0.3];
                    stats.running_var = vec![0.5, 1.5, 2.0];
                    g.batchnorm(v[0], v[1], v[2], &mut stats, training)
                },
            )
        })
        .collect()
}

pub fn pooling_and_head_cases() -> Vec<GradCase> {
    vec![
        case("avg_pool2", |r| vec![rand_t(r, &[2, 5, 6, 2], -1.0, 1.0)], |g, v| g.avg_pool2(v[0])),
        case("max_pool3", |r| vec![rand_t(r, &[2, 7, 6, 2], -1.0, 1.0)], |g, v| g.max_pool3(v[0])),
        case("global_avg_pool", |r| vec![rand_t(r, &[2, 3, 4, 5], -1.0, 1.0)], |g, v| g.global_avg_pool(v[0])),
        case(
            "linear",
            |r| vec![rand_t(r, &[3, 5], -1.0, 1.0), rand_t(r, &[5, 4], -1.0, 1.0), rand_t(r, &[4], -1.0, 1.0)],
            |g, v| g.linear(v[0], v[1], v[2]),
        ),
        case("softmax_cross_entropy", |r| vec![rand_t(r, &[4, 6], -2.0, 2.0)], |g, v| {
            g.softmax_cross_entropy(v[0], &[0, 5, 2, 2])
        }),
    ]
}

pub fn sampler_cases() -> Vec<GradCase> {
    // positive map via sigmoid, then marginals -> weights -> sample
    let pipeline = |kernel: Kernel, inverse: bool| {
        move |g: &mut Graph<f64>, v: &[Var]| -> Result<Var> {
            let s = g.sigmoid(v[1])?;
            let sy = g.marginal(s, Axis::Y)?;
            let sx = g.marginal(s, Axis::X)?;
            let w = g.sampling_weights(sy, sx, 3, 2)?;
            if inverse {
                g.inverse_sample(v[0], w, kernel)
            } else {
                g.sample(v[0], w, kernel)
            }
        }
    };
    let mut out = Vec::new();
    for kernel in [Kernel::Dense, Kernel::Sparse] {
        out.push(case(
            format!("sample {kernel:?}"),
            |r| vec![rand_t(r, &[2, 5, 4, 2], -1.0, 1.0), rand_t(r, &[2, 5, 4], -2.0, 2.0)],
            pipeline(kernel, false),
        ));
        out.push(case(
            format!("inverse_sample {kernel:?}"),
            |r| vec![rand_t(r, &[2, 3, 2, 2], -1.0, 1.0), rand_t(r, &[2, 5, 4], -2.0, 2.0)],
            pipeline(kernel, true),
        ));
    }
    out.push(case("marginal", |r| vec![rand_t(r, &[2, 4, 3], 0.1, 1.0)], |g, v| g.marginal(v[0], Axis::X)));
    for (oh, ow) in [(3, 2), (7, 9), (5, 4)] {
        out.push(case(
            format!("resize {oh}x{ow}"),
            |r| vec![rand_t(r, &[2, 5, 4, 2], -1.0, 1.0)],
            move |g, v| g.resize(v[0], oh, ow),
        ));
    }
    out
}

/// Every differentiable primitive.
pub fn all_grad_cases() -> Vec<GradCase> {
    let mut all = elementwise_cases();
    all.extend(conv_cases());
    all.extend(batchnorm_cases());
    all.extend(pooling_and_head_cases());
    all.extend(sampler_cases());
    all
}

/// Output of an adaptive SSB layer (8x8x4 sampled to 4x4) whose branch is
/// conv + BN + relu. `v` = input, saliency conv, saliency gamma and beta,
/// branch kernel, branch gamma and beta.
pub fn tiny_layer(g: &mut Graph<f64>, v: &[Var], training: bool) -> Var {
    let cfg = SsbLayerConfig {
        sampling_size: (4, 4),
        variant: SamplerVariant::Adaptive,
        kernel: Kernel::Sparse,
    };
    let vars = SamplerVars::Adaptive {
        conv: v[1],
        gamma: v[2],
        beta: v[3],
    };
    let mut stats = BnStats::new(1);
    let (w, bg, bb) = (v[4], v[5], v[6]);
    let tr = ssb_layer(g, v[0], &cfg, vars, Some(&mut stats), training, |g, r| {
        let y = g.conv2d(r, w, 1, Padding::Same)?;
        let mut s = BnStats::new(4);
        let y = g.batchnorm(y, bg, bb, &mut s, training)?;
        g.relu(y)
    })
    .unwrap();
    tr.output
}

pub fn tiny_layer_inputs(seed: u64) -> Vec<Tensor<f64>> {
    let mut r = rng(500 + seed);
    vec![
        t(&[2, 8, 8, 4], uniform_vec(&mut r, 512, -1.0, 1.0)),
        t(&[1, 1, 4, 1], uniform_vec(&mut r, 4, -1.0, 1.0)),
        t(&[1], vec![1.5]),
        t(&[1], uniform_vec(&mut r, 1, -0.5, 0.5)),
        t(&[3, 3, 4, 4], uniform_vec(&mut r, 144, -0.5, 0.5)),
        t(&[4], uniform_vec(&mut r, 4, 0.5, 1.5)),
        t(&[4], uniform_vec(&mut r, 4, -0.5, 0.5)),
    ]
}

/// SSB layer gradient check; returns the relative error and the gradient
/// mass reaching the saliency head parameters.
pub fn ssb_layer_grad(seed: u64) -> (f64, f64) {
    let inputs = tiny_layer_inputs(seed);
    let err = gradcheck(seed, &inputs, &|g, v| Ok(tiny_layer(g, v, true)));
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone(), true)).collect();
    let out = tiny_layer(&mut g, &vars, true);
    let wv = g.constant(rand_t(&mut rng(seed), &[2, 8, 8, 4], -1.0, 1.0));
    let m = g.mul(out, wv).unwrap();
    let l = g.sum(m).unwrap();
    g.backward(l).unwrap();
    let head: f64 = vars[1..4].iter().flat_map(|v| g.grad(*v).unwrap().into_data()).map(f64::abs).sum();
    (err, head)
}
