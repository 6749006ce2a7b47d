//! Host-side tooling for saliency sampling bottleneck networks: CIFAR-10
//! binary ingestion, checkpoint files, training and evaluation, sampler
//! benchmarks, FLOP reports and sampling visualizations. The `ssb` binary
//! exposes each of these as a subcommand.

pub mod bench;
pub mod cifar;
pub mod config;
pub mod error;
pub mod image;
pub mod metrics;
pub mod store;
pub mod train;
pub mod visualize;
