use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::layer::{he_normal, normal_tensor, ssb_layer, SamplerVars, SsbLayerConfig, SsbTrace};
use super::params::{Checkpoint, ParamId, ParamKind, ParamStore};
use super::spec::{NetworkSpec, StemSpec};
use crate::autodiff::{BnStats, Graph, Padding, Var};
use crate::sampler::{Kernel, SamplerVariant};
use crate::{Error, Real, Result, Tensor};

#[derive(Debug, Clone, Copy)]
struct Bn {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct ConvBn {
    w: ParamId,
    stride: usize,
    bn: Bn,
}

#[derive(Debug, Clone, Copy)]
enum SamplerIds {
    Adaptive { conv: ParamId, bn: Bn },
    Uniform,
    Bilinear,
    Depthwise { kernel: ParamId },
}

#[derive(Debug, Clone, Copy)]
struct Shortcut {
    pool: bool,
    proj: ConvBn,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    conv1: ConvBn,
    conv2: ConvBn,
    conv3: ConvBn,
    shortcut: Option<Shortcut>,
    sampler: Option<((usize, usize), SamplerIds)>,
}

/// Forward-pass settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    /// Batch statistics (and running-stat updates) instead of running stats.
    pub training: bool,
    pub kernel: Kernel,
}

impl Mode {
    pub const TRAIN: Mode = Mode {
        training: true,
        kernel: Kernel::Sparse,
    };
    pub const EVAL: Mode = Mode {
        training: false,
        kernel: Kernel::Sparse,
    };
}

/// Graph nodes of the parameters used by one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    vars: Vec<Option<Var>>,
}

impl Bindings {
    pub fn var(&self, id: ParamId) -> Option<Var> {
        self.vars.get(id.0).copied().flatten()
    }
}

/// Intermediate nodes of one sampled block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerProbe {
    /// 0-based group and block.
    pub group: usize,
    pub block: usize,
    pub input: Var,
    pub trace: SsbTrace,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Var,
    pub bindings: Bindings,
    pub probes: Vec<SamplerProbe>,
}

/// Bottleneck ResNet-D built from a [`NetworkSpec`].
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    seed: u64,
    store: ParamStore<T>,
    stem: Vec<ConvBn>,
    blocks: Vec<Vec<Block>>,
    fc_w: ParamId,
    fc_b: ParamId,
}

struct Builder<T> {
    store: ParamStore<T>,
    seed: u64,
}

impl<T: Real> Builder<T> {
    fn bn(&mut self, name: &str, c: usize, gamma: T) -> Bn {
        Bn {
            gamma: self.store.push(format!("{name}.gamma"), Tensor::full(&[c], gamma), ParamKind::Trainable),
            beta: self.store.push(format!("{name}.beta"), Tensor::zeros(&[c]), ParamKind::Trainable),
            mean: self.store.push(format!("{name}.running_mean"), Tensor::zeros(&[c]), ParamKind::Buffer),
            var: self.store.push(format!("{name}.running_var"), Tensor::ones(&[c]), ParamKind::Buffer),
        }
    }

    fn conv_bn(&mut self, name: &str, k: usize, cin: usize, cout: usize, stride: usize) -> ConvBn {
        let wname = format!("{name}.w");
        let w = he_normal(&[k, k, cin, cout], k * k * cin, self.seed, &wname);
        ConvBn {
            w: self.store.push(wname, w, ParamKind::Trainable),
            stride,
            bn: self.bn(&format!("{name}.bn"), cout, T::one()),
        }
    }
}

impl<T: Real> Network<T> {
    /// Builds and initializes the network. Every tensor is drawn from its
    /// own stream keyed by `(seed, name)`, so networks that differ only in
    /// their sampler share all other initial weights exactly.
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut b = Builder {
            store: ParamStore::new(),
            seed,
        };
        let c_in = spec.in_channels;
        let stem = match spec.stem {
            StemSpec::Single { width } => vec![b.conv_bn("stem.conv1", 3, c_in, width, 1)],
            StemSpec::Deep { widths } => vec![
                b.conv_bn("stem.conv1", 3, c_in, widths[0], 2),
                b.conv_bn("stem.conv2", 3, widths[0], widths[1], 1),
                b.conv_bn("stem.conv3", 3, widths[1], widths[2], 1),
            ],
        };
        let mut channels = spec.stem_out_channels();
        let mut blocks = Vec::new();
        for (gi, g) in spec.groups.iter().enumerate() {
            let out = g.width * spec.expansion;
            let mut group = Vec::new();
            for bi in 0..g.blocks {
                let p = format!("g{}.b{}", gi + 1, bi + 1);
                let stride = if bi == 0 { g.stride } else { 1 };
                let shortcut = (stride != 1 || channels != out).then(|| Shortcut {
                    pool: stride != 1,
                    proj: b.conv_bn(&format!("{p}.shortcut"), 1, channels, out, 1),
                });
                let conv1 = b.conv_bn(&format!("{p}.conv1"), 1, channels, g.width, 1);
                let conv2 = b.conv_bn(&format!("{p}.conv2"), 3, g.width, g.width, stride);
                let conv3 = b.conv_bn(&format!("{p}.conv3"), 1, g.width, out, 1);
                let sampler = match g.sampling {
                    Some(s) if bi > 0 => {
                        let ids = match spec.variant {
                            SamplerVariant::Adaptive => {
                                let k = spec.saliency_kernel;
                                let name = format!("{p}.saliency.conv.w");
                                let w = he_normal(&[k, k, out, 1], k * k * out, seed, &name);
                                SamplerIds::Adaptive {
                                    conv: b.store.push(name, w, ParamKind::Trainable),
                                    bn: b.bn(&format!("{p}.saliency.bn"), 1, T::zero()),
                                }
                            }
                            SamplerVariant::Uniform => SamplerIds::Uniform,
                            SamplerVariant::Bilinear => SamplerIds::Bilinear,
                            SamplerVariant::DepthwiseBilinear { kernel, .. } => {
                                let name = format!("{p}.dconv.w");
                                let w = he_normal(&[kernel, kernel, out], kernel * kernel, seed, &name);
                                SamplerIds::Depthwise {
                                    kernel: b.store.push(name, w, ParamKind::Trainable),
                                }
                            }
                        };
                        Some((s.size, ids))
                    }
                    _ => None,
                };
                group.push(Block {
                    conv1,
                    conv2,
                    conv3,
                    shortcut,
                    sampler,
                });
                channels = out;
            }
            blocks.push(group);
        }
        let f = spec.features();
        let fc_w = normal_tensor(&[f, spec.num_classes], libm::sqrt(1.0 / f as f64), seed, "fc.w");
        let fc_w = b.store.push("fc.w".into(), fc_w, ParamKind::Trainable);
        let fc_b = b.store.push("fc.b".into(), Tensor::zeros(&[spec.num_classes]), ParamKind::Trainable);
        Ok(Network {
            spec: spec.clone(),
            seed,
            store: b.store,
            stem,
            blocks,
            fc_w,
            fc_b,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn bind(&self, g: &mut Graph<T>, b: &mut Bindings, id: ParamId) -> Var {
        if let Some(v) = b.var(id) {
            return v;
        }
        let trainable = self.store.entries()[id.0].kind == ParamKind::Trainable;
        let v = g.leaf(self.store.get(id).clone(), trainable);
        if b.vars.len() <= id.0 {
            b.vars.resize(id.0 + 1, None);
        }
        b.vars[id.0] = Some(v);
        v
    }

    fn stats(&self, bn: &Bn) -> BnStats<T> {
        let mut s = BnStats::new(self.store.get(bn.mean).len());
        s.running_mean.copy_from_slice(self.store.get(bn.mean).data());
        s.running_var.copy_from_slice(self.store.get(bn.var).data());
        s
    }

    fn store_stats(&mut self, bn: &Bn, s: &BnStats<T>) {
        self.store.get_mut(bn.mean).data_mut().copy_from_slice(&s.running_mean);
        self.store.get_mut(bn.var).data_mut().copy_from_slice(&s.running_var);
    }

    fn batchnorm(&mut self, g: &mut Graph<T>, b: &mut Bindings, x: Var, bn: &Bn, training: bool) -> Result<Var> {
        let gamma = self.bind(g, b, bn.gamma);
        let beta = self.bind(g, b, bn.beta);
        let mut s = self.stats(bn);
        let y = g.batchnorm(x, gamma, beta, &mut s, training)?;
        if training {
            self.store_stats(bn, &s);
        }
        Ok(y)
    }

    fn conv_bn(&mut self, g: &mut Graph<T>, b: &mut Bindings, x: Var, c: &ConvBn, training: bool) -> Result<Var> {
        let w = self.bind(g, b, c.w);
        let y = g.conv2d(x, w, c.stride, Padding::Same)?;
        self.batchnorm(g, b, y, &c.bn, training)
    }

    /// conv1 -> conv2 -> conv3 with batch norm, relu between, none at the end.
    fn residual(&mut self, g: &mut Graph<T>, b: &mut Bindings, x: Var, blk: &Block, training: bool) -> Result<Var> {
        let y = self.conv_bn(g, b, x, &blk.conv1, training)?;
        let y = g.relu(y)?;
        let y = self.conv_bn(g, b, y, &blk.conv2, training)?;
        let y = g.relu(y)?;
        self.conv_bn(g, b, y, &blk.conv3, training)
    }

    /// Logits `[N, classes]` for `x: [N, H, W, C]`.
    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<ForwardPass> {
        let (_, h, w, c) = g.value(x).dims4("network input")?;
        if c != self.spec.in_channels {
            return Err(Error::shape(
                "network input",
                format!("{c} channels, network expects {}", self.spec.in_channels),
            ));
        }
        self.spec.validate_for_input((h, w))?;
        let training = mode.training;
        let mut b = Bindings::default();
        let mut probes = Vec::new();
        let mut y = x;
        for c in self.stem.clone() {
            y = self.conv_bn(g, &mut b, y, &c, training)?;
            y = g.relu(y)?;
        }
        if matches!(self.spec.stem, StemSpec::Deep { .. }) {
            y = g.max_pool3(y)?;
        }
        for (gi, group) in self.blocks.clone().iter().enumerate() {
            for (bi, blk) in group.iter().enumerate() {
                y = match blk.sampler {
                    None => {
                        let short = match blk.shortcut {
                            None => y,
                            Some(s) => {
                                let p = if s.pool { g.avg_pool2(y)? } else { y };
                                self.conv_bn(g, &mut b, p, &s.proj, training)?
                            }
                        };
                        let r = self.residual(g, &mut b, y, blk, training)?;
                        let sum = g.add(short, r)?;
                        g.relu(sum)?
                    }
                    Some((size, ids)) => {
                        let (vars, bn) = match ids {
                            SamplerIds::Adaptive { conv, bn } => (
                                SamplerVars::Adaptive {
                                    conv: self.bind(g, &mut b, conv),
                                    gamma: self.bind(g, &mut b, bn.gamma),
                                    beta: self.bind(g, &mut b, bn.beta),
                                },
                                Some(bn),
                            ),
                            SamplerIds::Uniform => (SamplerVars::Uniform, None),
                            SamplerIds::Bilinear => (SamplerVars::Bilinear, None),
                            SamplerIds::Depthwise { kernel } => (
                                SamplerVars::Depthwise {
                                    kernel: self.bind(g, &mut b, kernel),
                                },
                                None,
                            ),
                        };
                        let cfg = SsbLayerConfig {
                            sampling_size: size,
                            variant: self.spec.variant,
                            kernel: mode.kernel,
                        };
                        let mut stats = bn.map(|bn| self.stats(&bn));
                        let input = y;
                        let trace = ssb_layer(g, y, &cfg, vars, stats.as_mut(), training, |g, r| {
                            self.residual(g, &mut b, r, blk, training)
                        })?;
                        if let (true, Some(bn), Some(s)) = (training, bn, stats.as_ref()) {
                            self.store_stats(&bn, s);
                        }
                        probes.push(SamplerProbe {
                            group: gi,
                            block: bi,
                            input,
                            trace,
                        });
                        trace.output
                    }
                };
            }
        }
        let pooled = g.global_avg_pool(y)?;
        let fw = self.bind(g, &mut b, self.fc_w);
        let fb = self.bind(g, &mut b, self.fc_b);
        let logits = g.linear(pooled, fw, fb)?;
        Ok(ForwardPass {
            logits,
            bindings: b,
            probes,
        })
    }

    /// Gradients of the trainable tensors after `g.backward`, in
    /// [`ParamStore::trainable_ids`] order. Tensors not used by the pass
    /// get `None`.
    pub fn gradients(&self, g: &Graph<T>, b: &Bindings) -> Vec<Option<Tensor<T>>> {
        self.store
            .trainable_ids()
            .into_iter()
            .map(|id| b.var(id).and_then(|v| g.grad(v)))
            .collect()
    }

    /// Single-precision snapshot of every tensor.
    pub fn to_checkpoint(&self, epoch: u64) -> Checkpoint {
        Checkpoint {
            tensors: self
                .store
                .entries()
                .iter()
                .map(|e| (e.name.clone(), e.tensor.cast::<f32>()))
                .collect(),
            epoch,
            seed: self.seed,
        }
    }

    /// Loads every tensor and the seed; names and shapes must match this
    /// network.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let named: Vec<(String, Tensor<T>)> = ckpt.tensors.iter().map(|(n, t)| (n.clone(), t.cast::<T>())).collect();
        self.store.load(&named)?;
        self.seed = ckpt.seed;
        Ok(())
    }
}
