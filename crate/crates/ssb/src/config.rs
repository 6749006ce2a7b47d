//! JSON run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssb_core::network::NetworkSpec;
use ssb_core::sampler::{Kernel, SamplerVariant};

use crate::cifar;
use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "lowercase", deny_unknown_fields)]
pub enum LrSchedule {
    /// Linear warmup, then cosine decay to zero.
    Cosine {
        base: f64,
        #[serde(default = "one")]
        warmup_epochs: usize,
    },
    /// Multiply by `gamma` at each milestone epoch.
    Step { base: f64, milestones: Vec<usize>, gamma: f64 },
}

fn one() -> usize {
    1
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Cosine {
            base: 0.1,
            warmup_epochs: 1,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, step: usize, steps_per_epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Cosine { base, warmup_epochs } => ssb_core::autodiff::CosineSchedule {
                base_lr: *base,
                warmup_steps: warmup_epochs * steps_per_epoch,
                total_steps: epochs * steps_per_epoch,
            }
            .lr(step),
            LrSchedule::Step { base, milestones, gamma } => {
                let epoch = step / steps_per_epoch.max(1);
                base * gamma.powi(milestones.iter().filter(|m| epoch >= **m).count() as i32)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Name from the spec library, e.g. `micro`.
    pub spec: String,
    /// `adaptive`, `uniform`, `bilinear` or `dconv-bilinear`.
    #[serde(default = "adaptive")]
    pub variant: String,
    /// Square sampling size per group, `null` for unsampled groups.
    #[serde(default)]
    pub sampling_sizes: Option<Vec<Option<usize>>>,
    #[serde(default = "default_saliency_kernel")]
    pub saliency_kernel: usize,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub lr: LrSchedule,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    /// Directory holding the CIFAR-10 binary batches.
    pub data: PathBuf,
    /// Output directory for checkpoint and metrics.
    pub out: PathBuf,
    /// Use only the first N training records.
    #[serde(default)]
    pub train_subset: Option<usize>,
    /// Use only the first N test records.
    #[serde(default)]
    pub test_subset: Option<usize>,
    /// `sparse` or `dense`.
    #[serde(default = "sparse")]
    pub kernel: String,
    #[serde(default = "yes")]
    pub augment: bool,
}

fn adaptive() -> String {
    "adaptive".into()
}
fn sparse() -> String {
    "sparse".into()
}
fn default_saliency_kernel() -> usize {
    1
}
fn default_batch() -> usize {
    128
}
fn default_momentum() -> f64 {
    0.9
}
fn default_wd() -> f64 {
    5e-4
}
fn yes() -> bool {
    true
}

impl RunConfig {
    pub fn from_json(text: &str) -> AppResult<Self> {
        serde_json::from_str(text).map_err(|e| AppError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn variant(&self) -> AppResult<SamplerVariant> {
        SamplerVariant::from_name(&self.variant).ok_or_else(|| {
            AppError::Usage(format!(
                "unknown variant `{}` (expected adaptive, uniform, bilinear or dconv-bilinear)",
                self.variant
            ))
        })
    }

    pub fn kernel(&self) -> AppResult<Kernel> {
        match self.kernel.as_str() {
            "sparse" => Ok(Kernel::Sparse),
            "dense" => Ok(Kernel::Dense),
            k => Err(AppError::Usage(format!("unknown kernel `{k}` (expected sparse or dense)"))),
        }
    }

    /// Network spec with the configured variant, sampling sizes and
    /// saliency kernel applied, validated for 32x32 inputs.
    pub fn network_spec(&self) -> AppResult<NetworkSpec> {
        let mut spec = NetworkSpec::by_name(&self.spec).ok_or_else(|| {
            AppError::Usage(format!("unknown spec `{}` (known: {})", self.spec, NetworkSpec::NAMES.join(", ")))
        })?;
        spec = spec.with_variant(self.variant()?);
        if let Some(sizes) = &self.sampling_sizes {
            if sizes.len() != spec.groups.len() {
                return Err(AppError::Usage(format!(
                    "sampling_sizes has {} entries, spec `{}` has {} groups",
                    sizes.len(),
                    self.spec,
                    spec.groups.len()
                )));
            }
            spec.set_sampling_sizes(sizes);
        }
        spec.saliency_kernel = self.saliency_kernel;
        if spec.num_classes != cifar::CLASSES {
            return Err(AppError::Usage(format!(
                "spec `{}` has {} classes; CIFAR-10 needs {}",
                self.spec,
                spec.num_classes,
                cifar::CLASSES
            )));
        }
        spec.validate_for_input((cifar::SIDE, cifar::SIDE))?;
        Ok(spec)
    }

    /// Checks every setting and path before any work starts; creates the
    /// output directory.
    pub fn validate(&self) -> AppResult<()> {
        self.network_spec()?;
        self.kernel()?;
        if self.batch_size == 0 {
            return Err(AppError::Usage("batch_size must be positive".into()));
        }
        let (LrSchedule::Cosine { base, .. } | LrSchedule::Step { base, .. }) = &self.lr;
        if !base.is_finite() || *base < 0.0 {
            return Err(AppError::Usage(format!("learning rate must be finite and >= 0, got {base}")));
        }
        if !self.data.is_dir() {
            return Err(AppError::Data(format!("data directory {} does not exist", self.data.display())));
        }
        let (train, test) = cifar::files(&self.data);
        for f in train.iter().chain([&test]) {
            if !f.is_file() {
                return Err(AppError::Data(format!("missing CIFAR-10 file {}", f.display())));
            }
        }
        fs::create_dir_all(&self.out).map_err(|e| AppError::io(&self.out, e))?;
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out.join("checkpoint.bin")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.out.join("metrics.csv")
    }
}
