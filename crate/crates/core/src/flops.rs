//! Closed-form cost accounting for a [`NetworkSpec`].
//!
//! Convolutions cost `kh*kw*C_in*C_out*H'*W'` multiply-accumulates (MACs);
//! batch norm, activations, residual additions and pooling cost one MAC per
//! element (pooling: one per tap). A sampler costs its two separable
//! contractions, either dense (`H_r*H*W*D + H_r*W_r*W*D` for the forward
//! sample) or bounded by the band structure of the weights (`n + r`
//! non-zeros per axis).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::network::{NetworkSpec, StemSpec};
use crate::sampler::SamplerVariant;
use crate::{Error, Result};

/// How many floating-point operations one MAC counts as.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    OneMac,
    TwoMac,
}

impl Convention {
    pub fn factor(self) -> u64 {
        match self {
            Convention::OneMac => 1,
            Convention::TwoMac => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Convention::OneMac => "1xmac",
            Convention::TwoMac => "2xmac",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "1xmac" => Some(Convention::OneMac),
            "2xmac" => Some(Convention::TwoMac),
            _ => None,
        }
    }
}

/// Cost model for the interval-overlap sampler's contractions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplerCost {
    #[default]
    Dense,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Conv,
    DepthwiseConv,
    BatchNorm,
    Activation,
    Add,
    Pool,
    Linear,
    Saliency,
    Sample,
    InverseSample,
    Resize,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv => "conv",
            OpKind::DepthwiseConv => "dwconv",
            OpKind::BatchNorm => "bn",
            OpKind::Activation => "act",
            OpKind::Add => "add",
            OpKind::Pool => "pool",
            OpKind::Linear => "linear",
            OpKind::Saliency => "saliency",
            OpKind::Sample => "sample",
            OpKind::InverseSample => "inverse",
            OpKind::Resize => "resize",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostRow {
    pub name: String,
    pub kind: OpKind,
    pub macs: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub convention: Convention,
}

impl CostReport {
    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.total_macs() * self.convention.factor()
    }

    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn flops(&self, row: &CostRow) -> u64 {
        row.macs * self.convention.factor()
    }

    /// One line per row plus a header; the last line is the total.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,kind,macs,flops,params\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.name, r.kind.name(), r.macs, self.flops(r), r.params);
        }
        let _ = writeln!(
            s,
            "total,total,{},{},{}",
            self.total_macs(),
            self.total_flops(),
            self.total_params()
        );
        s
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:<8}  {:>14}  {:>14}  {:>10}", "layer", "kind", "MACs", "FLOPs", "params");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:<8}  {:>14}  {:>14}  {:>10}",
                r.name,
                r.kind.name(),
                r.macs,
                self.flops(r),
                r.params
            );
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:<8}  {:>14}  {:>14}  {:>10}",
            "total",
            "",
            self.total_macs(),
            self.total_flops(),
            self.total_params()
        );
        let _ = writeln!(
            s,
            "{:.3} GFLOPs ({}), {:.3} M params",
            self.total_flops() as f64 / 1e9,
            self.convention.name(),
            self.total_params() as f64 / 1e6
        );
        s
    }
}

struct Counter {
    rows: Vec<CostRow>,
}

impl Counter {
    fn row(&mut self, name: String, kind: OpKind, macs: usize, params: usize) {
        self.rows.push(CostRow {
            name,
            kind,
            macs: macs as u64,
            params: params as u64,
        });
    }

    /// Conv + batch norm (+ relu), output `h x w x cout`.
    fn conv_bn(&mut self, name: &str, k: usize, cin: usize, cout: usize, (h, w): (usize, usize), relu: bool) {
        self.row(name.into(), OpKind::Conv, k * k * cin * cout * h * w, k * k * cin * cout);
        self.row(format!("{name}.bn"), OpKind::BatchNorm, h * w * cout, 2 * cout);
        if relu {
            self.row(format!("{name}.relu"), OpKind::Activation, h * w * cout, 0);
        }
    }

    fn bottleneck(&mut self, p: &str, cin: usize, width: usize, out: usize, hw_in: (usize, usize), hw: (usize, usize)) {
        self.conv_bn(&format!("{p}.conv1"), 1, cin, width, hw_in, true);
        self.conv_bn(&format!("{p}.conv2"), 3, width, width, hw, true);
        self.conv_bn(&format!("{p}.conv3"), 1, width, out, hw, false);
    }
}

/// Per-layer costs of `spec` on an `input x input` image.
pub fn count(spec: &NetworkSpec, input: (usize, usize), convention: Convention, sampler: SamplerCost) -> Result<CostReport> {
    spec.validate_for_input(input)?;
    let mut c = Counter { rows: Vec::new() };
    let cin = spec.in_channels;
    let (mut h, mut w) = input;
    match spec.stem {
        StemSpec::Single { width } => c.conv_bn("stem.conv1", 3, cin, width, (h, w), true),
        StemSpec::Deep { widths } => {
            let hw = (h.div_ceil(2), w.div_ceil(2));
            c.conv_bn("stem.conv1", 3, cin, widths[0], hw, true);
            c.conv_bn("stem.conv2", 3, widths[0], widths[1], hw, true);
            c.conv_bn("stem.conv3", 3, widths[1], widths[2], hw, true);
            (h, w) = (hw.0.div_ceil(2), hw.1.div_ceil(2));
            c.row("stem.maxpool".into(), OpKind::Pool, 9 * h * w * widths[2], 0);
        }
    }
    let mut channels = spec.stem_out_channels();
    for (gi, g) in spec.groups.iter().enumerate() {
        let out = g.width * spec.expansion;
        for bi in 0..g.blocks {
            let p = format!("g{}.b{}", gi + 1, bi + 1);
            let stride = if bi == 0 { g.stride } else { 1 };
            let hw_in = (h, w);
            let hw = (h.div_ceil(stride), w.div_ceil(stride));
            match g.sampling.filter(|_| bi > 0) {
                None => {
                    if stride != 1 || channels != out {
                        if stride != 1 {
                            c.row(format!("{p}.shortcut.pool"), OpKind::Pool, 4 * hw.0 * hw.1 * channels, 0);
                        }
                        c.conv_bn(&format!("{p}.shortcut"), 1, channels, out, hw, false);
                    }
                    c.bottleneck(&p, channels, g.width, out, hw_in, hw);
                }
                Some(s) => {
                    let (hr, wr) = s.size;
                    let d = channels;
                    sampler_rows(&mut c, &p, spec, (h, w), (hr, wr), d, sampler);
                    c.bottleneck(&p, channels, g.width, out, (hr, wr), (hr, wr));
                }
            }
            c.row(format!("{p}.add"), OpKind::Add, hw.0 * hw.1 * out, 0);
            c.row(format!("{p}.relu"), OpKind::Activation, hw.0 * hw.1 * out, 0);
            channels = out;
            (h, w) = hw;
        }
    }
    c.row("head.pool".into(), OpKind::Pool, h * w * channels, 0);
    c.row("fc".into(), OpKind::Linear, channels * spec.num_classes, channels * spec.num_classes + spec.num_classes);
    Ok(CostReport {
        rows: c.rows,
        convention,
    })
}

fn sampler_rows(
    c: &mut Counter,
    p: &str,
    spec: &NetworkSpec,
    (h, w): (usize, usize),
    (hr, wr): (usize, usize),
    d: usize,
    cost: SamplerCost,
) {
    let bilinear_up = 4 * h * w * d;
    match spec.variant {
        SamplerVariant::Adaptive | SamplerVariant::Uniform => {
            if spec.variant == SamplerVariant::Adaptive {
                let k = spec.saliency_kernel;
                c.row(format!("{p}.saliency.conv"), OpKind::Saliency, k * k * d * h * w, k * k * d);
                c.row(format!("{p}.saliency.bn"), OpKind::Saliency, h * w, 2);
                c.row(format!("{p}.saliency.sigmoid"), OpKind::Saliency, h * w, 0);
                c.row(format!("{p}.saliency.marginals"), OpKind::Saliency, h * w, 0);
            }
            let (down, up) = match cost {
                SamplerCost::Dense => (hr * h * w * d + hr * wr * w * d, h * hr * wr * d + h * w * wr * d),
                SamplerCost::Sparse => ((h + hr) * w * d + hr * (w + wr) * d, (h + hr) * wr * d + h * (w + wr) * d),
            };
            c.row(format!("{p}.sample"), OpKind::Sample, down, 0);
            c.row(format!("{p}.inverse"), OpKind::InverseSample, up, 0);
        }
        SamplerVariant::Bilinear => {
            c.row(format!("{p}.resize.down"), OpKind::Resize, 4 * hr * wr * d, 0);
            c.row(format!("{p}.resize.up"), OpKind::Resize, bilinear_up, 0);
        }
        SamplerVariant::DepthwiseBilinear { kernel, .. } => {
            c.row(format!("{p}.dconv"), OpKind::DepthwiseConv, kernel * kernel * hr * wr * d, kernel * kernel * d);
            c.row(format!("{p}.resize.up"), OpKind::Resize, bilinear_up, 0);
        }
    }
}

/// Parses `224` or `224x160`.
pub fn parse_input_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Invalid(format!("input size `{s}` must be N or HxW with positive integers"));
    let (a, b) = s.split_once('x').unwrap_or((s, s));
    let (h, w): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}
