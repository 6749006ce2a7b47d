//! CIFAR-10 binary batches: records of one label byte followed by 3072
//! pixel bytes (1024 red, 1024 green, 1024 blue, row-major 32x32).

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use ssb_core::Tensor;

use crate::error::{AppError, AppResult};

pub const SIDE: usize = 32;
pub const PIXELS: usize = SIDE * SIDE * 3;
pub const RECORD: usize = PIXELS + 1;
pub const CLASSES: usize = 10;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// Per-channel normalization applied to every image.
pub const MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const STD: [f32; 3] = [0.2470, 0.2435, 0.2616];

/// Images kept in the on-disk planar layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub labels: Vec<u8>,
    pub pixels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn parse(bytes: &[u8], origin: &Path) -> AppResult<Self> {
        if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD) {
            let whole = bytes.len() / RECORD * RECORD;
            return Err(AppError::Data(format!(
                "{}: truncated record at byte offset {whole} ({} bytes, records are {RECORD} bytes)",
                origin.display(),
                bytes.len()
            )));
        }
        let mut ds = Dataset::default();
        for (i, rec) in bytes.chunks_exact(RECORD).enumerate() {
            if rec[0] as usize >= CLASSES {
                return Err(AppError::Data(format!(
                    "{}: label {} out of range at byte offset {}",
                    origin.display(),
                    rec[0],
                    i * RECORD
                )));
            }
            ds.labels.push(rec[0]);
            ds.pixels.extend_from_slice(&rec[1..]);
        }
        Ok(ds)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(&bytes, path)
    }

    pub fn load_all(paths: &[PathBuf]) -> AppResult<Self> {
        let mut ds = Dataset::default();
        for p in paths {
            let part = Self::load(p)?;
            ds.labels.extend(part.labels);
            ds.pixels.extend(part.pixels);
        }
        Ok(ds)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * RECORD);
        for (l, px) in self.labels.iter().zip(self.pixels.chunks_exact(PIXELS)) {
            out.push(*l);
            out.extend_from_slice(px);
        }
        out
    }

    pub fn truncate(&mut self, n: usize) {
        self.labels.truncate(n);
        self.pixels.truncate(n * PIXELS);
    }

    /// Raw planar image `i`.
    pub fn image(&self, i: usize) -> &[u8] {
        &self.pixels[i * PIXELS..(i + 1) * PIXELS]
    }

    /// Normalized NHWC batch. With `augment`, each image is zero-padded by
    /// 4, randomly cropped back to 32x32 and flipped with probability 1/2.
    pub fn batch(&self, idx: &[usize], augment: Option<&mut rand_chacha::ChaCha8Rng>) -> (Tensor<f32>, Vec<usize>) {
        let mut data = vec![0.0f32; idx.len() * PIXELS];
        let mut rng = augment;
        for (b, &i) in idx.iter().enumerate() {
            let (dy, dx, flip) = match rng.as_deref_mut() {
                Some(r) => (r.random_range(0..=8) as isize - 4, r.random_range(0..=8) as isize - 4, r.random_bool(0.5)),
                None => (0, 0, false),
            };
            let img = self.image(i);
            let out = &mut data[b * PIXELS..(b + 1) * PIXELS];
            for y in 0..SIDE {
                for x in 0..SIDE {
                    let xs = if flip { SIDE - 1 - x } else { x };
                    let (sy, sx) = (y as isize + dy, xs as isize + dx);
                    let inside = (0..SIDE as isize).contains(&sy) && (0..SIDE as isize).contains(&sx);
                    for c in 0..3 {
                        let v = if inside {
                            img[c * SIDE * SIDE + sy as usize * SIDE + sx as usize] as f32 / 255.0
                        } else {
                            0.0
                        };
                        out[(y * SIDE + x) * 3 + c] = (v - MEAN[c]) / STD[c];
                    }
                }
            }
        }
        let labels = idx.iter().map(|&i| self.labels[i] as usize).collect();
        (Tensor::new(&[idx.len(), SIDE, SIDE, 3], data).expect("batch shape"), labels)
    }
}

/// Training and test files of a CIFAR-10 binary directory.
pub fn files(dir: &Path) -> (Vec<PathBuf>, PathBuf) {
    (TRAIN_FILES.iter().map(|f| dir.join(f)).collect(), dir.join(TEST_FILE))
}
