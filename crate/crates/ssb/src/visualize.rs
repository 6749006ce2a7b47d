//! Saliency maps and sampled images of one sampled layer.

use std::fs;
use std::path::{Path, PathBuf};

use ssb_core::autodiff::Graph;
use ssb_core::network::{Mode, Network, NetworkSpec};
use ssb_core::sampler::{bilinear_resize, sample, Kernel};
use ssb_core::Tensor;

use crate::cifar::{MEAN, SIDE, STD};
use crate::error::{AppError, AppResult};
use crate::image::{pgm, to_byte, Rgb};
use crate::store;

/// Files written by [`visualize`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub saliency: PathBuf,
    pub resized: PathBuf,
    pub sampled: PathBuf,
}

/// In-memory results, pixel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Visualization {
    /// `[H, W]`.
    pub saliency: Tensor<f64>,
    /// `[H, W, 3]`, the input image at the layer's input resolution.
    pub resized: Tensor<f64>,
    /// `[H_r, W_r, 3]`.
    pub sampled: Tensor<f64>,
}

fn rgb_tensor(img: &Rgb) -> Tensor<f64> {
    let data = img.data.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(&[img.height, img.width, 3], data).expect("rgb shape")
}

fn rgb_bytes(t: &Tensor<f64>) -> Rgb {
    Rgb {
        height: t.shape()[0],
        width: t.shape()[1],
        data: t.data().iter().map(|&v| to_byte(v * 255.0)).collect(),
    }
}

/// Runs `net` in inference mode on `img` (resized to 32x32) and applies the
/// sampling weights of layer `selector` to the image resized to that
/// layer's input resolution.
pub fn render(net: &mut Network<f64>, img: &Rgb, selector: &str) -> AppResult<Visualization> {
    let (group, block) = net.spec().parse_selector(selector)?;
    if !net.spec().variant.uses_weights() {
        return Err(AppError::Usage(format!(
            "variant `{}` has no sampling weights to visualize",
            net.spec().variant.name()
        )));
    }
    let rgb = rgb_tensor(img);
    let small = bilinear_resize(&rgb, SIDE, SIDE)?;
    let mut x = small.data().to_vec();
    for (i, v) in x.iter_mut().enumerate() {
        let c = i % 3;
        *v = (*v - MEAN[c] as f64) / STD[c] as f64;
    }
    let mut g = Graph::new();
    let xv = g.constant(Tensor::new(&[1, SIDE, SIDE, 3], x)?);
    let fp = net.forward(&mut g, xv, Mode { training: false, kernel: Kernel::Sparse })?;
    let probe = fp
        .probes
        .iter()
        .find(|p| p.group == group && p.block == block)
        .ok_or_else(|| AppError::Usage(format!("layer `{selector}` was not sampled in this pass")))?;
    let (h, w) = (g.shape(probe.input)[1], g.shape(probe.input)[2]);
    let weights = probe
        .trace
        .weights
        .and_then(|v| g.weights_of(v))
        .and_then(|ws| ws.first())
        .ok_or_else(|| AppError::Usage(format!("layer `{selector}` has no sampling weights")))?;
    let saliency = match probe.trace.saliency {
        Some(s) => Tensor::new(&[h, w], g.value(s).data().to_vec())?,
        None => Tensor::full(&[h, w], 0.5),
    };
    let resized = bilinear_resize(&rgb, h, w)?;
    let sampled = sample(&resized, weights)?;
    Ok(Visualization {
        saliency,
        resized,
        sampled,
    })
}

fn write(path: &Path, bytes: &[u8]) -> AppResult<()> {
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

/// Loads the checkpoint into a network built from `spec` and writes
/// `saliency_{sel}.pgm`, `resized_{sel}.ppm` and `sampled_{sel}.ppm` to
/// `out`.
pub fn visualize(spec: &NetworkSpec, checkpoint: &Path, image: &Path, selector: &str, out: &Path) -> AppResult<Artifacts> {
    spec.parse_selector(selector)?;
    let ckpt = store::load_checkpoint(checkpoint)?;
    let mut net: Network<f64> = Network::new(spec, ckpt.seed)?;
    net.load_checkpoint(&ckpt)
        .map_err(|e| AppError::Data(format!("{}: {e} (does the config match the checkpoint?)", checkpoint.display())))?;
    let img = Rgb::load(image)?;
    let vis = render(&mut net, &img, selector)?;
    fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
    let arts = Artifacts {
        saliency: out.join(format!("saliency_{selector}.pgm")),
        resized: out.join(format!("resized_{selector}.ppm")),
        sampled: out.join(format!("sampled_{selector}.ppm")),
    };
    let (h, w) = (vis.saliency.shape()[0], vis.saliency.shape()[1]);
    let gray: Vec<u8> = vis.saliency.data().iter().map(|&v| to_byte(v * 255.0)).collect();
    write(&arts.saliency, &pgm(w, h, &gray))?;
    write(&arts.resized, &rgb_bytes(&vis.resized).to_ppm())?;
    write(&arts.sampled, &rgb_bytes(&vis.sampled).to_ppm())?;
    Ok(arts)
}
