//! Bottleneck ResNet-D with optional SSB layers.
//!
//! A [`NetworkSpec`] describes the architecture; [`Network`] owns the
//! parameters and builds the forward graph. The first block of every group
//! keeps its original form; later blocks of a sampled group compute their
//! residual branch at the reduced resolution via [`ssb_layer`].

mod layer;
mod model;
mod params;
mod spec;

pub use layer::{
    saliency_head, saliency_map_graph, ssb_layer, SaliencyHeadParams, SamplerVars, SsbLayerConfig, SsbTrace,
};
pub use model::{Bindings, ForwardPass, Mode, Network, SamplerProbe};
pub use params::{Checkpoint, ParamEntry, ParamId, ParamKind, ParamStore, CHECKPOINT_MAGIC};
pub use spec::{GroupSampling, GroupSpec, NetworkSpec, StemSpec, EXPANSION};
