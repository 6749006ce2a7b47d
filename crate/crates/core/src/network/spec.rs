use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::sampler::SamplerVariant;
use crate::{Error, Result};

/// Input stem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StemSpec {
    /// One 3x3 stride-1 conv, for 32x32 inputs.
    Single { width: usize },
    /// Three 3x3 convs (first with stride 2) then 3x3/2 max pooling.
    Deep { widths: [usize; 3] },
}

/// Sampling applied to the non-first blocks of a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupSampling {
    pub size: (usize, usize),
    /// Whether the first (transition) block is wrapped too. Always
    /// rejected by validation; it exists so invalid specs can be expressed.
    pub wrap_first: bool,
}

impl GroupSampling {
    pub fn square(size: usize) -> Self {
        GroupSampling {
            size: (size, size),
            wrap_first: false,
        }
    }
}

/// Run of bottleneck blocks at one resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    pub blocks: usize,
    /// Bottleneck width; blocks output `width * expansion` channels.
    pub width: usize,
    /// Stride of the first block.
    pub stride: usize,
    pub sampling: Option<GroupSampling>,
}

/// Bottleneck residual network, optionally with sampled groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub name: String,
    pub in_channels: usize,
    pub stem: StemSpec,
    pub groups: Vec<GroupSpec>,
    pub expansion: usize,
    pub num_classes: usize,
    pub variant: SamplerVariant,
    /// Side of the saliency head's convolution (1, 3 or 5).
    pub saliency_kernel: usize,
}

/// Reduction ratio between a block's output and its bottleneck width.
pub const EXPANSION: usize = 4;

impl NetworkSpec {
    /// Three groups of two bottleneck blocks (widths 16/32/64) on 32x32
    /// inputs; the last two groups sample to 8x8 and 4x4.
    pub fn micro(num_classes: usize) -> Self {
        NetworkSpec {
            name: "micro".into(),
            in_channels: 3,
            stem: StemSpec::Single { width: 16 },
            groups: vec![
                GroupSpec {
                    blocks: 2,
                    width: 16,
                    stride: 1,
                    sampling: None,
                },
                GroupSpec {
                    blocks: 2,
                    width: 32,
                    stride: 2,
                    sampling: Some(GroupSampling::square(8)),
                },
                GroupSpec {
                    blocks: 2,
                    width: 64,
                    stride: 2,
                    sampling: Some(GroupSampling::square(4)),
                },
            ],
            expansion: EXPANSION,
            num_classes,
            variant: SamplerVariant::Adaptive,
            saliency_kernel: 1,
        }
    }

    /// ResNet-D-50: deep stem, groups of 3/4/6/3 blocks, no sampling.
    pub fn resnet_d50() -> Self {
        let groups = [(3, 64, 1), (4, 128, 2), (6, 256, 2), (3, 512, 2)]
            .into_iter()
            .map(|(blocks, width, stride)| GroupSpec {
                blocks,
                width,
                stride,
                sampling: None,
            })
            .collect();
        NetworkSpec {
            name: "resnet-d-50".into(),
            in_channels: 3,
            stem: StemSpec::Deep { widths: [32, 32, 64] },
            groups,
            expansion: EXPANSION,
            num_classes: 1000,
            variant: SamplerVariant::Adaptive,
            saliency_kernel: 1,
        }
    }

    /// ResNet-D-50 with the last three groups sampled to `sizes`.
    pub fn ssb_resnet_d50(sizes: [usize; 3]) -> Self {
        let mut spec = Self::resnet_d50();
        spec.name = "ssb-resnet-d-50".into();
        spec.set_sampling_sizes(&[None, Some(sizes[0]), Some(sizes[1]), Some(sizes[2])]);
        spec
    }

    /// Looks up a named spec: `micro`, `micro-plain`, `resnet-d-50`,
    /// `ssb-resnet-d-50`.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "micro" | "ssb-micro" => Some(Self::micro(10)),
            "micro-plain" => {
                let mut s = Self::micro(10);
                s.name = "micro-plain".into();
                s.set_sampling_sizes(&[None, None, None]);
                Some(s)
            }
            "resnet-d-50" => Some(Self::resnet_d50()),
            "ssb-resnet-d-50" => Some(Self::ssb_resnet_d50([16, 8, 4])),
            _ => None,
        }
    }

    pub const NAMES: [&'static str; 4] = ["micro", "micro-plain", "resnet-d-50", "ssb-resnet-d-50"];

    /// Square sampling size per group (`None` leaves a group unsampled).
    pub fn set_sampling_sizes(&mut self, sizes: &[Option<usize>]) {
        for (g, s) in self.groups.iter_mut().zip(sizes) {
            g.sampling = s.map(GroupSampling::square);
        }
    }

    pub fn with_variant(mut self, variant: SamplerVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn stem_out_channels(&self) -> usize {
        match self.stem {
            StemSpec::Single { width } => width,
            StemSpec::Deep { widths } => widths[2],
        }
    }

    pub fn features(&self) -> usize {
        self.groups.last().map_or(self.stem_out_channels(), |g| g.width * self.expansion)
    }

    /// Structural rules that do not depend on the input size.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Spec(msg));
        if self.in_channels == 0 || self.num_classes == 0 || self.expansion == 0 {
            return fail("channel, class and expansion counts must be positive".into());
        }
        match self.stem {
            StemSpec::Single { width: 0 } => return fail("stem width must be positive".into()),
            StemSpec::Deep { widths } if widths.contains(&0) => return fail("stem widths must be positive".into()),
            _ => {}
        }
        if self.groups.is_empty() {
            return fail("at least one group is required".into());
        }
        if ![1, 3, 5].contains(&self.saliency_kernel) {
            return fail(format!("saliency kernel must be 1, 3 or 5, got {}", self.saliency_kernel));
        }
        if let SamplerVariant::DepthwiseBilinear { kernel, stride } = self.variant {
            if kernel % 2 == 0 || stride == 0 {
                return fail(format!("depthwise sampler needs an odd kernel and stride >= 1 ({kernel}, {stride})"));
            }
        }
        for (i, g) in self.groups.iter().enumerate() {
            let gi = i + 1;
            if g.blocks == 0 || g.width == 0 {
                return fail(format!("group {gi}: block count and width must be positive"));
            }
            if !(1..=2).contains(&g.stride) {
                return fail(format!("group {gi}: stride must be 1 or 2, got {}", g.stride));
            }
            if let Some(s) = g.sampling {
                if s.wrap_first {
                    return fail(format!(
                        "group {gi}: first-block rule violated: the transition block of a group keeps its original form and cannot be sampled"
                    ));
                }
                if s.size.0 == 0 || s.size.1 == 0 {
                    return fail(format!("group {gi}: sampling size must be positive"));
                }
                if g.blocks < 2 {
                    return fail(format!("group {gi}: sampled group needs a non-first block to wrap"));
                }
            }
        }
        Ok(())
    }

    /// Spatial size of each group's output for an `h x w` input.
    pub fn group_resolutions(&self, (h, w): (usize, usize)) -> Vec<(usize, usize)> {
        let (mut h, mut w) = match self.stem {
            StemSpec::Single { .. } => (h, w),
            // stride-2 conv, then stride-2 max pool
            StemSpec::Deep { .. } => (h.div_ceil(2).div_ceil(2), w.div_ceil(2).div_ceil(2)),
        };
        self.groups
            .iter()
            .map(|g| {
                h = h.div_ceil(g.stride);
                w = w.div_ceil(g.stride);
                (h, w)
            })
            .collect()
    }

    /// Full validation for a concrete input size, including that every
    /// sampling size fits inside its group's resolution.
    pub fn validate_for_input(&self, input: (usize, usize)) -> Result<()> {
        self.validate()?;
        if input.0 == 0 || input.1 == 0 {
            return Err(Error::Spec("input size must be positive".into()));
        }
        for (i, (g, (h, w))) in self.groups.iter().zip(self.group_resolutions(input)).enumerate() {
            let Some(s) = g.sampling else { continue };
            let (hr, wr) = s.size;
            if hr > h || wr > w {
                return Err(Error::Spec(format!(
                    "group {}: sampling size {hr}x{wr} larger than its {h}x{w} feature map",
                    i + 1
                )));
            }
            if let SamplerVariant::DepthwiseBilinear { stride, .. } = self.variant {
                if (h.div_ceil(stride), w.div_ceil(stride)) != (hr, wr) {
                    return Err(Error::Spec(format!(
                        "group {}: depthwise stride {stride} maps {h}x{w} to {}x{}, not the configured {hr}x{wr}",
                        i + 1,
                        h.div_ceil(stride),
                        w.div_ceil(stride)
                    )));
                }
            }
        }
        Ok(())
    }

    /// `group-block` selectors (1-based) of every sampled block.
    pub fn sampled_layers(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (gi, g) in self.groups.iter().enumerate() {
            if g.sampling.is_some() {
                for b in 1..g.blocks {
                    out.push(format!("{}-{}", gi + 1, b + 1));
                }
            }
        }
        out
    }

    /// Parses `group-block` into 0-based indices of a sampled block.
    pub fn parse_selector(&self, selector: &str) -> Result<(usize, usize)> {
        let valid = self.sampled_layers();
        let bad = || {
            Error::Invalid(format!(
                "layer `{selector}` is not a sampled layer; valid selectors: {}",
                if valid.is_empty() { "(none)".to_string() } else { valid.join(", ") }
            ))
        };
        let (g, b) = selector.split_once('-').ok_or_else(bad)?;
        let (g, b): (usize, usize) = (g.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if !valid.iter().any(|v| *v == format!("{g}-{b}")) {
            return Err(bad());
        }
        Ok((g - 1, b - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_specs_validate() {
        for name in NetworkSpec::NAMES {
            let s = NetworkSpec::by_name(name).unwrap();
            s.validate().unwrap();
        }
        NetworkSpec::micro(10).validate_for_input((32, 32)).unwrap();
        NetworkSpec::ssb_resnet_d50([16, 8, 4]).validate_for_input((224, 224)).unwrap();
    }

    #[test]
    fn first_block_rule_is_enforced() {
        let mut s = NetworkSpec::micro(10);
        s.groups[1].sampling = Some(GroupSampling {
            size: (8, 8),
            wrap_first: true,
        });
        let err = s.validate().unwrap_err();
        assert!(matches!(&err, Error::Spec(m) if m.contains("first-block rule")), "{err}");
    }

    #[test]
    fn oversized_sampling_is_rejected() {
        let mut s = NetworkSpec::micro(10);
        s.set_sampling_sizes(&[None, Some(17), Some(4)]);
        assert!(s.validate_for_input((32, 32)).is_err());
    }

    #[test]
    fn resolutions() {
        assert_eq!(NetworkSpec::micro(10).group_resolutions((32, 32)), [(32, 32), (16, 16), (8, 8)]);
        assert_eq!(
            NetworkSpec::resnet_d50().group_resolutions((224, 224)),
            [(56, 56), (28, 28), (14, 14), (7, 7)]
        );
    }

    #[test]
    fn selectors() {
        let s = NetworkSpec::micro(10);
        assert_eq!(s.sampled_layers(), ["2-2", "3-2"]);
        assert_eq!(s.parse_selector("3-2").unwrap(), (2, 1));
        let err = s.parse_selector("1-2").unwrap_err().to_string();
        assert!(err.contains("2-2, 3-2"), "{err}");
        assert!(s.parse_selector("2-1").is_err());
    }
}
