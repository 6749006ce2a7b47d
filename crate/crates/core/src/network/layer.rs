
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Axis, BatchNormParams, BnStats, Graph, Padding, Var};
use crate::sampler::{Kernel, SaliencyMap, SamplerVariant};
use crate::{Error, Real, Result, Tensor};

/// Deterministic per-tensor stream: the same `(seed, name)` always draws
/// the same values, whatever else the network contains.
pub(crate) fn named_rng(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}

/// Normal samples with standard deviation `std`.
pub(crate) fn normal_tensor<T: Real>(shape: &[usize], std: f64, seed: u64, name: &str) -> Tensor<T> {
    let mut rng = named_rng(seed, name);
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::from_f64(z * std)
    })
}

/// He-normal initialization, `std = sqrt(2 / fan_in)`.
pub(crate) fn he_normal<T: Real>(shape: &[usize], fan_in: usize, seed: u64, name: &str) -> Tensor<T> {
    normal_tensor(shape, libm::sqrt(2.0 / fan_in as f64), seed, name)
}

/// Parameters of the saliency head: one `k x k` convolution with a single
/// output filter, followed by batch norm whose scale starts at zero so the
/// initial map is the constant 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyHeadParams<T> {
    /// `[k, k, C, 1]`
    pub kernel: Tensor<T>,
    pub bn: BatchNormParams<T>,
}

impl<T: Real> SaliencyHeadParams<T> {
    pub fn new(channels: usize, k: usize, seed: u64) -> Result<Self> {
        if ![1, 3, 5].contains(&k) || channels == 0 {
            return Err(Error::Invalid(alloc::format!(
                "saliency head needs k in {{1, 3, 5}} and channels > 0 (k = {k}, channels = {channels})"
            )));
        }
        Ok(SaliencyHeadParams {
            kernel: he_normal(&[k, k, channels, 1], k * k * channels, seed, "saliency.conv"),
            bn: BatchNormParams::with_gamma(1, T::zero()),
        })
    }
}

/// conv -> batch norm -> sigmoid -> drop the channel axis: `[N,H,W,C] -> [N,H,W]`.
pub fn saliency_map_graph<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    conv: Var,
    gamma: Var,
    beta: Var,
    stats: &mut BnStats<T>,
    training: bool,
) -> Result<Var> {
    let (n, h, w, _) = g.value(x).dims4("saliency_head")?;
    if g.shape(conv).get(3) != Some(&1) {
        return Err(Error::shape("saliency_head", alloc::format!("kernel {:?} must have one filter", g.shape(conv))));
    }
    let s = g.conv2d(x, conv, 1, Padding::Same)?;
    let s = g.batchnorm(s, gamma, beta, stats, training)?;
    let s = g.sigmoid(s)?;
    g.reshape(s, &[n, h, w])
}

/// Saliency map of one `[H, W, C]` feature map.
pub fn saliency_head<T: Real>(x: &Tensor<T>, p: &mut SaliencyHeadParams<T>, training: bool) -> Result<SaliencyMap<T>> {
    let (h, w, c) = match x.shape() {
        &[h, w, c] => (h, w, c),
        s => return Err(Error::shape("saliency_head", alloc::format!("expected [H,W,C], got {s:?}"))),
    };
    let mut g = Graph::new();
    let xv = g.constant(x.clone().reshape(&[1, h, w, c])?);
    let conv = g.constant(p.kernel.clone());
    let gamma = g.constant(p.bn.gamma.clone());
    let beta = g.constant(p.bn.beta.clone());
    let s = saliency_map_graph(&mut g, xv, conv, gamma, beta, &mut p.bn.stats, training)?;
    SaliencyMap::new(h, w, g.value(s).data().to_vec())
}

/// Sampler inputs of one SSB layer, already bound to graph nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerVars {
    Adaptive { conv: Var, gamma: Var, beta: Var },
    Uniform,
    Bilinear,
    Depthwise { kernel: Var },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SsbLayerConfig {
    pub sampling_size: (usize, usize),
    pub variant: SamplerVariant,
    pub kernel: Kernel,
}

/// Nodes produced by one SSB layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SsbTrace {
    pub output: Var,
    /// `[N, H, W]` saliency, adaptive variant only.
    pub saliency: Option<Var>,
    /// Interval-overlap weights (adaptive and uniform variants).
    pub weights: Option<Var>,
    /// Reduced input handed to `f_t`.
    pub sampled: Var,
}

/// `relu(x + up(f_t(down(x))))`, where `down`/`up` are the configured
/// sampler and its inverse. `stats` is the saliency head's batch-norm
/// state (adaptive variant only).
pub fn ssb_layer<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    cfg: &SsbLayerConfig,
    sampler: SamplerVars,
    stats: Option<&mut BnStats<T>>,
    training: bool,
    f_t: impl FnOnce(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<SsbTrace> {
    let (n, h, w, d) = g.value(x).dims4("ssb_layer")?;
    let (h_r, w_r) = cfg.sampling_size;
    if h_r == 0 || w_r == 0 || h_r > h || w_r > w {
        return Err(Error::shape(
            "ssb_layer",
            alloc::format!("sampling size {h_r}x{w_r} does not fit the {h}x{w} input"),
        ));
    }
    let mut saliency = None;
    let mut weights = None;
    let sampled = match (cfg.variant, sampler) {
        (SamplerVariant::Adaptive, SamplerVars::Adaptive { conv, gamma, beta }) => {
            let stats = stats.ok_or_else(|| Error::Invalid("adaptive sampler needs saliency batch-norm state".into()))?;
            let s = saliency_map_graph(g, x, conv, gamma, beta, stats, training)?;
            let sy = g.marginal(s, Axis::Y)?;
            let sx = g.marginal(s, Axis::X)?;
            let wv = g.sampling_weights(sy, sx, h_r, w_r)?;
            saliency = Some(s);
            weights = Some(wv);
            g.sample(x, wv, cfg.kernel)?
        }
        (SamplerVariant::Uniform, SamplerVars::Uniform) => {
            let wv = g.uniform_sampling_weights(n, h, w, h_r, w_r)?;
            weights = Some(wv);
            g.sample(x, wv, cfg.kernel)?
        }
        (SamplerVariant::Bilinear, SamplerVars::Bilinear) => g.resize(x, h_r, w_r)?,
        (SamplerVariant::DepthwiseBilinear { stride, .. }, SamplerVars::Depthwise { kernel }) => {
            let y = g.depthwise_conv2d(x, kernel, stride, Padding::Same)?;
            let (_, yh, yw, _) = g.value(y).dims4("ssb_layer")?;
            if (yh, yw) != (h_r, w_r) {
                return Err(Error::shape(
                    "ssb_layer",
                    alloc::format!("depthwise stride {stride} gives {yh}x{yw}, sampling size is {h_r}x{w_r}"),
                ));
            }
            y
        }
        (v, s) => {
            return Err(Error::Invalid(alloc::format!(
                "sampler parameters {s:?} do not match variant {}",
                v.name()
            )))
        }
    };
    let reduced = f_t(g, sampled)?;
    let (_, rh, rw, rd) = g.value(reduced).dims4("ssb_layer")?;
    if (rh, rw, rd) != (h_r, w_r, d) {
        return Err(Error::shape(
            "ssb_layer",
            alloc::format!("f_t must keep the {h_r}x{w_r}x{d} shape, got {rh}x{rw}x{rd}"),
        ));
    }
    let restored = match weights {
        Some(wv) => g.inverse_sample(reduced, wv, cfg.kernel)?,
        None => g.resize(reduced, h, w)?,
    };
    let sum = g.add(x, restored)?;
    let output = g.relu(sum)?;
    Ok(SsbTrace {
        output,
        saliency,
        weights,
        sampled,
    })
}
