//! Training and evaluation on CIFAR-10 format data.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssb_core::autodiff::{Graph, Sgd};
use ssb_core::network::{Mode, Network};
use ssb_core::sampler::Kernel;

use crate::cifar::{self, Dataset};
use crate::config::RunConfig;
use crate::error::{AppError, AppResult};
use crate::metrics::{EpochRow, MetricsLog};
use crate::store;

/// Evaluation batch size; evaluation results do not depend on it in
/// inference mode.
pub const EVAL_BATCH: usize = 100;

#[derive(Debug, Clone)]
pub struct Data {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_data(cfg: &RunConfig) -> AppResult<Data> {
    let (train_files, test_file) = cifar::files(&cfg.data);
    let mut train = Dataset::load_all(&train_files)?;
    let mut test = Dataset::load(&test_file)?;
    if let Some(n) = cfg.train_subset {
        train.truncate(n);
    }
    if let Some(n) = cfg.test_subset {
        test.truncate(n);
    }
    if train.is_empty() || test.is_empty() {
        return Err(AppError::Data("training and test sets must not be empty".into()));
    }
    Ok(Data { train, test })
}

/// Mean loss and top-1 accuracy. In `Mode::TRAIN` batch statistics are
/// used; the network's running statistics are left untouched.
pub fn evaluate(net: &Network<f32>, ds: &Dataset, batch: usize, mode: Mode) -> AppResult<(f64, f64)> {
    let mut net = net.clone();
    let (mut loss, mut correct) = (0.0f64, 0usize);
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, labels) = ds.batch(chunk, None);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let fp = net.forward(&mut g, xv, mode)?;
        let l = g.softmax_cross_entropy(fp.logits, &labels)?;
        loss += g.value(l).data()[0] as f64 * chunk.len() as f64;
        let logits = g.value(fp.logits);
        let k = logits.shape()[1];
        for (row, &label) in logits.data().chunks_exact(k).zip(&labels) {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
            correct += (best == label) as usize;
        }
    }
    Ok((loss / ds.len() as f64, correct as f64 / ds.len() as f64))
}

/// Test accuracy with inference-mode batch norm.
pub fn test_accuracy(net: &Network<f32>, ds: &Dataset, kernel: Kernel) -> AppResult<f64> {
    let mode = Mode { training: false, kernel };
    Ok(evaluate(net, ds, EVAL_BATCH, mode)?.1)
}

fn epoch_row(net: &Network<f32>, data: &Data, cfg: &RunConfig, kernel: Kernel, epoch: usize, start: Instant) -> AppResult<EpochRow> {
    let (train_loss, train_acc) = evaluate(net, &data.train, cfg.batch_size, Mode { training: true, kernel })?;
    if !train_loss.is_finite() {
        return Err(AppError::Numeric(format!("epoch {epoch}: training loss is {train_loss}")));
    }
    Ok(EpochRow {
        epoch,
        train_loss,
        train_acc,
        val_acc: test_accuracy(net, &data.test, kernel)?,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub log: MetricsLog,
}

/// Trains per `cfg`, writing `checkpoint.bin` and `metrics.csv` to the
/// output directory after every epoch. Row 0 evaluates the fresh network;
/// row `e` is measured after epoch `e`. The shuffling order and the
/// augmentation draws depend only on the seed.
pub fn train(cfg: &RunConfig, mut progress: impl FnMut(&EpochRow)) -> AppResult<TrainOutcome> {
    cfg.validate()?;
    let spec = cfg.network_spec()?;
    let kernel = cfg.kernel()?;
    let data = load_data(cfg)?;
    let mut net: Network<f32> = Network::new(&spec, cfg.seed)?;
    let start = Instant::now();
    let mut log = MetricsLog::default();
    let row = epoch_row(&net, &data, cfg, kernel, 0, start)?;
    progress(&row);
    log.push(row);
    store::save_checkpoint(&cfg.checkpoint_path(), &net.to_checkpoint(0))?;
    log.save(&cfg.metrics_path())?;

    let n = data.train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut opt = Sgd::new(0.0f32, cfg.momentum as f32, cfg.weight_decay as f32);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        order_rng.set_stream(2 * epoch as u64);
        let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        aug_rng.set_stream(2 * epoch as u64 + 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut order_rng);
        for idx in order.chunks(cfg.batch_size) {
            let (x, labels) = data.train.batch(idx, cfg.augment.then_some(&mut aug_rng));
            opt.lr = cfg.lr.lr(step, steps_per_epoch, cfg.epochs) as f32;
            let mut g = Graph::new();
            let xv = g.constant(x);
            let fp = net.forward(&mut g, xv, Mode { training: true, kernel })?;
            let loss = g.softmax_cross_entropy(fp.logits, &labels)?;
            g.backward(loss)?;
            let mut grads = net.gradients(&g, &fp.bindings);
            let (mut params, names) = net.params_mut().trainable_mut();
            opt.step(&mut params, &mut grads, &names)?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(AppError::Numeric(format!("epoch {epoch} step {step}: parameters became non-finite")));
            }
            step += 1;
        }
        let row = epoch_row(&net, &data, cfg, kernel, epoch, start)?;
        progress(&row);
        log.push(row);
        store::save_checkpoint(&cfg.checkpoint_path(), &net.to_checkpoint(epoch as u64))?;
        log.save(&cfg.metrics_path())?;
    }
    Ok(TrainOutcome { network: net, log })
}

/// Network from `cfg` with the checkpoint at `path` loaded.
pub fn load_network(cfg: &RunConfig, path: &Path) -> AppResult<Network<f32>> {
    let spec = cfg.network_spec()?;
    let ckpt = store::load_checkpoint(path)?;
    let mut net = Network::new(&spec, ckpt.seed)?;
    net.load_checkpoint(&ckpt)
        .map_err(|e| AppError::Data(format!("{}: {e} (does the config match the checkpoint?)", path.display())))?;
    Ok(net)
}

/// Test accuracy of the checkpoint at `path`.
pub fn eval(cfg: &RunConfig, path: &Path) -> AppResult<f64> {
    cfg.validate()?;
    let net = load_network(cfg, path)?;
    let data = load_data(cfg)?;
    test_accuracy(&net, &data.test, cfg.kernel()?)
}
