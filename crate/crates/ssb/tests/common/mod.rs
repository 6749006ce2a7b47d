#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use ssb::cifar::{self, Dataset, PIXELS, SIDE};
use ssb::visualize::visualize;
use ssb_core::network::{Network, NetworkSpec};
use ssb_core::Tensor;

/// Learnable CIFAR-format images: each class has its own tint and a bright
/// square at a class-specific position, plus uniform noise. Labels cycle
/// through the classes so every split is balanced.
pub fn synthetic(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * PIXELS);
    for i in 0..n {
        let k = i % cifar::CLASSES;
        labels.push(k as u8);
        let tint = [(k * 23) % 100, (k * 59) % 100, (k * 37) % 100];
        let (py, px) = (4 + 6 * (k / 4), 4 + 6 * (k % 4));
        for t in tint {
            for y in 0..SIDE {
                for x in 0..SIDE {
                    let square = (py..py + 8).contains(&y) && (px..px + 8).contains(&x);
                    let base = 60 + t + if square { 90 } else { 0 };
                    let v = base as i32 + rng.random_range(-30..=30);
                    pixels.push(v.clamp(0, 255) as u8);
                }
            }
        }
    }
    Dataset { labels, pixels }
}

/// Writes the five training files and the test file.
pub fn write_cifar(dir: &Path, per_train_file: usize, test: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let (train_files, test_file) = cifar::files(dir);
    for (i, f) in train_files.iter().enumerate() {
        std::fs::write(f, synthetic(per_train_file, seed * 100 + i as u64).encode()).unwrap();
    }
    std::fs::write(test_file, synthetic(test, seed * 100 + 99).encode()).unwrap();
}

/// Run config JSON with small defaults; `extra` keys override.
pub fn config(data: &Path, out: &Path, extra: Value) -> Value {
    let mut v = json!({
        "spec": "micro",
        "epochs": 1,
        "batch_size": 32,
        "data": data,
        "out": out,
        "train_subset": 128,
        "test_subset": 100,
    });
    for (k, x) in extra.as_object().unwrap() {
        v[k] = x.clone();
    }
    v
}

pub fn write_config(path: &Path, cfg: &Value) -> PathBuf {
    std::fs::write(path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_path_buf()
}

pub fn ssb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssb"))
        .args(args)
        .env_remove("SSB_THREADS")
        .output()
        .unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Deterministic test picture: a diagonal color ramp with a bright disc.
pub fn test_picture(w: usize, h: usize) -> ssb::image::Rgb {
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 / w as f64, y as f64 / h as f64);
            let disc = (fx - 0.65).powi(2) + (fy - 0.4).powi(2) < 0.04;
            let r = if disc { 240.0 } else { 40.0 + 150.0 * fx };
            let g = if disc { 220.0 } else { 30.0 + 120.0 * fy };
            let b = 90.0 + 60.0 * (fx - fy);
            data.extend([r as u8, g as u8, b.clamp(0.0, 255.0) as u8]);
        }
    }
    ssb::image::Rgb { width: w, height: h, data }
}

pub fn fresh() -> Network<f64> {
    Network::new(&NetworkSpec::micro(10), 7).unwrap()
}

/// Fresh network with a live saliency head in every sampled block.
pub fn sharpened() -> Network<f64> {
    let mut net = fresh();
    for name in ["g2.b2.saliency.bn.gamma", "g3.b2.saliency.bn.gamma"] {
        let id = net.params().find(name).unwrap();
        *net.params_mut().get_mut(id) = Tensor::full(&[1], 2.0);
    }
    net
}

pub fn sha(path: &std::path::Path) -> String {
    let digest = Sha256::digest(std::fs::read(path).unwrap());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the three artifacts of layer 2-2 for the sharpened checkpoint and
/// the test picture; returns their hashes.
pub fn artifact_hashes(dir: &std::path::Path) -> [String; 3] {
    std::fs::create_dir_all(dir).unwrap();
    let ckpt = dir.join("ckpt.bin");
    ssb::store::save_checkpoint(&ckpt, &sharpened().to_checkpoint(0)).unwrap();
    let img = dir.join("pic.ppm");
    std::fs::write(&img, test_picture(45, 37).to_ppm()).unwrap();
    let arts = visualize(&NetworkSpec::micro(10), &ckpt, &img, "2-2", &dir.join("out")).unwrap();
    [sha(&arts.saliency), sha(&arts.resized), sha(&arts.sampled)]
}

/// SHA-256 of the saliency, resized and sampled artifacts.
pub const GOLDEN: [&str; 3] = [
    "9d9d2168a87bea0e638220ddaf47da776ca03bf0b06d884f291d307b7ba9bb7c",
    "32d5324c2ebe320825a98d2369c087933d5617388722d7e5ac9f1211a4690fb5",
    "a00a1e564c5319661f802f427d83a568440c248fbf655172954bb0f4f17859b7",
];
