mod common;

use common::suite::{self, rand_t, t};
use common::*;
use rand::Rng;
use ssb_core::autodiff::{BnStats, Graph, Padding};
use ssb_core::{Error, Tensor};

/// Direct cross-correlation, `[N,H,W,Ci] x [kh,kw,Ci,Co]`, pad `(top, left)`.
#[allow(clippy::too_many_arguments)]
fn naive_conv(
    x: &[f64],
    (n, h, w, ci): (usize, usize, usize, usize),
    k: &[f64],
    (kh, kw, co): (usize, usize, usize),
    stride: usize,
    (pt, pl): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let mut out = vec![0.0; n * oh * ow * co];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..co {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pt as isize;
                            let ix = (ox * stride + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for c in 0..ci {
                                acc += x[((b * h + iy as usize) * w + ix as usize) * ci + c]
                                    * k[((ky * kw + kx) * ci + c) * co + o];
                            }
                        }
                    }
                    out[((b * oh + oy) * ow + ox) * co + o] = acc;
                }
            }
        }
    }
    out
}

fn run_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, padding: Padding) -> Tensor<f64> {
    let mut g = Graph::new();
    let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
    let y = g.conv2d(xv, kv, stride, padding).unwrap();
    g.value(y).clone()
}

#[test]
fn conv_matches_naive_loops() {
    let mut rng = rng(1);
    let x = rand_t(&mut rng, &[1, 5, 5, 3], -1.0, 1.0);
    let k = rand_t(&mut rng, &[3, 3, 3, 4], -1.0, 1.0);
    let y = run_conv(&x, &k, 1, Padding::Same);
    assert_eq!(y.shape(), &[1, 5, 5, 4]);
    let want = naive_conv(x.data(), (1, 5, 5, 3), k.data(), (3, 3, 4), 1, (1, 1), (5, 5));
    assert!(max_abs_err(y.data(), &want) <= 1e-6);

    for (h, w, kh, kw, stride, pad) in [
        (7, 6, 3, 5, 2, Padding::Same),
        (8, 8, 1, 1, 2, Padding::Same),
        (9, 4, 3, 3, 1, Padding::Valid),
        (9, 7, 5, 3, 2, Padding::Valid),
        (4, 4, 5, 5, 1, Padding::Same),
    ] {
        let (ci, co, n) = (2, 3, 2);
        let x = rand_t(&mut rng, &[n, h, w, ci], -1.0, 1.0);
        let k = rand_t(&mut rng, &[kh, kw, ci, co], -1.0, 1.0);
        let y = run_conv(&x, &k, stride, pad);
        let (oh, ow, pt, pl) = match pad {
            Padding::Valid => ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0),
            Padding::Same => {
                let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
                let ph = ((oh - 1) * stride + kh).saturating_sub(h);
                let pw = ((ow - 1) * stride + kw).saturating_sub(w);
                (oh, ow, ph / 2, pw / 2)
            }
        };
        assert_eq!(y.shape(), &[n, oh, ow, co]);
        let want = naive_conv(x.data(), (n, h, w, ci), k.data(), (kh, kw, co), stride, (pt, pl), (oh, ow));
        assert!(max_abs_err(y.data(), &want) <= 1e-6, "{h}x{w} k{kh}x{kw} s{stride} {pad:?}");
    }
}

#[test]
fn conv_identity_and_zero_kernels() {
    let mut rng = rng(2);
    let x = rand_t(&mut rng, &[2, 4, 3, 3], -1.0, 1.0);
    let mut eye = vec![0.0; 9];
    for c in 0..3 {
        eye[c * 3 + c] = 1.0;
    }
    assert_eq!(run_conv(&x, &t(&[1, 1, 3, 3], eye), 1, Padding::Same), x);
    let z = run_conv(&x, &Tensor::zeros(&[3, 3, 3, 5]), 1, Padding::Same);
    assert!(z.data().iter().all(|v| *v == 0.0));
}

#[test]
fn conv_is_linear_in_input() {
    let mut rng = rng(3);
    let k = rand_t(&mut rng, &[3, 3, 2, 3], -1.0, 1.0);
    let x = rand_t(&mut rng, &[2, 6, 5, 2], -1.0, 1.0);
    let y = rand_t(&mut rng, &[2, 6, 5, 2], -1.0, 1.0);
    let (a, b) = (0.7, -1.3);
    let mix = t(x.shape(), x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect());
    let lhs = run_conv(&mix, &k, 2, Padding::Same);
    let (cx, cy) = (run_conv(&x, &k, 2, Padding::Same), run_conv(&y, &k, 2, Padding::Same));
    let rhs: Vec<f64> = cx.data().iter().zip(cy.data()).map(|(p, q)| a * p + b * q).collect();
    assert!(max_abs_err(lhs.data(), &rhs) <= 1e-5);
}

#[test]
fn conv_rejects_bad_shapes() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 4, 4, 3]));
    let k = g.constant(Tensor::zeros(&[3, 3, 2, 1]));
    assert!(matches!(g.conv2d(x, k, 1, Padding::Same), Err(Error::Shape { .. })));
    let k = g.constant(Tensor::zeros(&[2, 2, 3, 1]));
    assert!(g.conv2d(x, k, 1, Padding::Same).is_err());
}

fn bn_run(x: &Tensor<f64>, gamma: f64, beta: f64, stats: &mut BnStats<f64>, training: bool) -> Tensor<f64> {
    let c = *x.shape().last().unwrap();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let gv = g.constant(Tensor::full(&[c], gamma));
    let bv = g.constant(Tensor::full(&[c], beta));
    let y = g.batchnorm(xv, gv, bv, stats, training).unwrap();
    g.value(y).clone()
}

#[test]
fn batchnorm_cases() {
    let mut rng = rng(4);
    let x = rand_t(&mut rng, &[4, 3, 3, 2], -3.0, 3.0);
    // gamma = 0 leaves beta
    let y = bn_run(&x, 0.0, 0.25, &mut BnStats::new(2), true);
    assert!(y.data().iter().all(|v| *v == 0.25));

    // already standardized input passes through
    let mut data = x.data().to_vec();
    for c in 0..2 {
        let vals: Vec<f64> = data.iter().skip(c).step_by(2).copied().collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        for v in data.iter_mut().skip(c).step_by(2) {
            *v = (*v - mean) / var.sqrt();
        }
    }
    let z = t(x.shape(), data);
    let y = bn_run(&z, 1.0, 0.0, &mut BnStats::new(2), true);
    assert!(y.max_abs_diff(&z) <= 1e-4);

    // running mean, one step
    let mut stats = BnStats::new(2);
    stats.running_mean = vec![0.5, -1.0];
    bn_run(&x, 1.0, 0.0, &mut stats, true);
    for c in 0..2 {
        let vals: Vec<f64> = x.data().iter().skip(c).step_by(2).copied().collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let old = [0.5, -1.0][c];
        assert!((stats.running_mean[c] - (0.9 * old + 0.1 * mean)).abs() <= 1e-12);
        assert!(stats.running_var[c] >= 0.0);
    }

    // inference uses running stats and is deterministic
    let mut s2 = stats.clone();
    let a = bn_run(&x, 1.5, 0.1, &mut s2, false);
    let b = bn_run(&x, 1.5, 0.1, &mut s2, false);
    assert_eq!(a, b);
    assert_eq!(s2, stats);
    let want = (x.data()[0] - stats.running_mean[0]) / (stats.running_var[0] + 1e-5).sqrt() * 1.5 + 0.1;
    assert!((a.data()[0] - want).abs() <= 1e-12);
}

#[test]
fn elementwise_examples() {
    let mut g: Graph<f64> = Graph::new();
    let z = g.leaf(t(&[3], vec![0.0, -2.0, 3.0]), true);
    let s = g.sigmoid(z).unwrap();
    assert_eq!(g.value(s).data()[0], 0.5);
    let r = g.relu(z).unwrap();
    let l = g.sum(r).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(z).unwrap().data(), &[0.0, 0.0, 1.0]);

    for k in [2, 10, 1000] {
        let mut g: Graph<f64> = Graph::new();
        let logits = g.constant(Tensor::full(&[3, k], 0.3));
        let ce = g.softmax_cross_entropy(logits, &[0, k - 1, 1]).unwrap();
        assert!((g.value(ce).data()[0] - (k as f64).ln()).abs() <= 1e-12);
    }
    let mut g: Graph<f64> = Graph::new();
    let logits = g.constant(Tensor::zeros(&[1, 3]));
    assert!(matches!(
        g.softmax_cross_entropy(logits, &[3]),
        Err(Error::LabelOutOfRange { label: 3, classes: 3 })
    ));
}

#[test]
fn backward_basics() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(t(&[2, 2], vec![1.0, -2.0, 0.5, 3.0]), true);
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0; 4]);
    assert!(matches!(g.sum(x), Err(Error::Released)));

    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(t(&[3], vec![1.0, -2.0, 0.5]), true);
    let y = g.leaf(t(&[3], vec![4.0, 5.0, 6.0]), true);
    let a = g.add(x, y).unwrap();
    let up = g.constant(t(&[3], vec![0.3, -0.7, 2.0]));
    let m = g.mul(a, up).unwrap();
    let l = g.sum(m).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.3, -0.7, 2.0]);
    assert_eq!(g.grad(y).unwrap().data(), &[0.3, -0.7, 2.0]);

    let mut g: Graph<f64> = Graph::new();
    let x = g.leaf(t(&[2], vec![1.0, 2.0]), true);
    assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn non_finite_outputs_are_errors() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.constant(t(&[2], vec![f64::MAX, 1.0]));
    assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite { .. })));
}

fn assert_cases(cases: Vec<suite::GradCase>) {
    for c in cases {
        let err = suite::worst_grad_err(&c);
        assert!(err <= 1e-4, "{}: relative error {err:e}", c.name);
    }
}

#[test]
fn grad_elementwise() {
    assert_cases(suite::elementwise_cases());
}

#[test]
fn grad_conv() {
    assert_cases(suite::conv_cases());
}

#[test]
fn grad_batchnorm() {
    assert_cases(suite::batchnorm_cases());
}

#[test]
fn grad_pooling_and_head() {
    assert_cases(suite::pooling_and_head_cases());
}

#[test]
fn grad_sampler_ops() {
    assert_cases(suite::sampler_cases());
}

#[test]
fn random_shapes_conv_linear_gradcheck() {
    let mut rng = rng(77);
    for seed in 0..5 {
        let (h, w) = (rng.random_range(3..8), rng.random_range(3..8));
        let (ci, co) = (rng.random_range(1..4), rng.random_range(1..4));
        let inputs = vec![rand_t(&mut rng, &[2, h, w, ci], -1.0, 1.0), rand_t(&mut rng, &[3, 3, ci, co], -1.0, 1.0)];
        let err = suite::gradcheck(seed, &inputs, &|g, v| {
            let y = g.conv2d(v[0], v[1], 2, Padding::Same)?;
            let y = g.sigmoid(y)?;
            g.global_avg_pool(y)
        });
        assert!(err <= 1e-4, "{h}x{w} {ci}->{co}: {err:e}");
    }
}
