//! Saliency-driven spatial sampling.
//!
//! A saliency map is reduced to one normalized marginal per axis. Each
//! axis is resampled independently: input position `j` owns a slice of the
//! unit interval proportional to its saliency, output position `i` owns
//! `[i/r, (i+1)/r)`, and the weight between them is the overlap length.
//! Salient regions therefore get more output rows/columns. The transposed
//! weights map the reduced tensor back to the input resolution.

mod kernels;
mod marginals;
mod resize;
mod weights;

pub use kernels::{
    inverse_sample, inverse_sample_sparse, inverse_sampler_backward, nnz, sample, sample_sparse, sampler_backward,
    Kernel, SamplerGrads, WeightGrads,
};
pub use marginals::{marginalize, marginalize_backward, SaliencyMap, SaliencyMarginals};
pub use resize::bilinear_resize;
pub use weights::{
    build_weights, overlap_matrix, uniform_marginal, uniform_weights, AxisWeights, Run, SamplingWeights, SparseAxis,
    NORMALIZATION_TOLERANCE, TIE_EPSILON,
};

pub(crate) use kernels::{down_backward_raw, down_raw, inverse_scale, sample_scale, up_backward_raw, up_raw};
pub(crate) use marginals::{marginalize_backward_raw, marginalize_raw};
pub(crate) use resize::resize_backward_raw;

/// Down/up sampling used inside an SSB layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerVariant {
    /// Saliency-driven interval-overlap weights.
    Adaptive,
    /// The same weight mechanism fed with constant saliency.
    Uniform,
    /// Bilinear resize down and back up.
    Bilinear,
    /// Strided depthwise convolution down, bilinear resize up.
    DepthwiseBilinear { kernel: usize, stride: usize },
}

impl SamplerVariant {
    pub const DEPTHWISE_DEFAULT: SamplerVariant = SamplerVariant::DepthwiseBilinear { kernel: 5, stride: 2 };

    pub fn name(&self) -> &'static str {
        match self {
            SamplerVariant::Adaptive => "adaptive",
            SamplerVariant::Uniform => "uniform",
            SamplerVariant::Bilinear => "bilinear",
            SamplerVariant::DepthwiseBilinear { .. } => "dconv-bilinear",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "adaptive" => Some(SamplerVariant::Adaptive),
            "uniform" | "uniform-mechanism" => Some(SamplerVariant::Uniform),
            "bilinear" => Some(SamplerVariant::Bilinear),
            "dconv-bilinear" | "dconv" => Some(SamplerVariant::DEPTHWISE_DEFAULT),
            _ => None,
        }
    }

    /// Whether the variant builds the interval-overlap weights.
    pub fn uses_weights(&self) -> bool {
        matches!(self, SamplerVariant::Adaptive | SamplerVariant::Uniform)
    }
}
