//! SGD training loop for the channel-estimation networks.
//!
//! Minimizes the per-element mean squared error between the network output
//! and the ground-truth channel image over the training split, with the
//! warmup-then-cosine rate schedule, momentum, and weight decay. Every run
//! is deterministic: parameter init, shuffling, and update order are all
//! fixed by the config seed, so identical configs produce byte-identical
//! loss curves and checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use nfmimo_core::metrics::lr_schedule;
use nfmimo_core::mssan::{Network, NetworkConfig};
use nfmimo_core::rng::{stream, StreamDomain};
use nfmimo_core::tensor::Graph;

use crate::checkpoint;
use crate::dataset::{self, DatasetFile, Split};

/// Hyper-parameters of one training run. The dataset directory is passed
/// separately so a config file stays machine-independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    /// Epoch count `T`. Runs shorter than the five warmup epochs never
    /// leave the warmup branch of the schedule; zero epochs returns the
    /// initialized checkpoint unchanged.
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate, reached at warmup's end.
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.batch_size == 0 {
            bail!("batch size must be at least 1");
        }
        if !(self.base_lr > 0.0) {
            bail!("base learning rate must be positive, got {}", self.base_lr);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bail!("momentum must lie in [0, 1), got {}", self.momentum);
        }
        if self.weight_decay < 0.0 {
            bail!("weight decay must be nonnegative, got {}", self.weight_decay);
        }
        Ok(())
    }
}

/// One line of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_loss: f64,
}

#[derive(Debug)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    /// Epoch whose checkpoint was kept (0 when no epoch ran).
    pub best_epoch: usize,
    pub best_test_loss: f64,
    pub checkpoint_path: PathBuf,
    pub loss_path: PathBuf,
}

/// Train `cfg.network` on the dataset in `data_dir`, writing `loss.csv`
/// and the best-test-loss checkpoint `model.nfpt` into `out_dir`.
pub fn train(cfg: &TrainConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    let manifest = dataset::read_manifest(data_dir)?;
    if manifest.config.nr != cfg.network.nr || manifest.config.nt != cfg.network.nt {
        bail!(
            "dataset is {}x{} but the network expects {}x{}",
            manifest.config.nr,
            manifest.config.nt,
            cfg.network.nr,
            cfg.network.nt
        );
    }
    let train_set = dataset::load_split(data_dir, Split::Train)?;
    let test_set = dataset::load_split(data_dir, Split::Test)?;
    if train_set.is_empty() || test_set.is_empty() {
        bail!("both splits must be nonempty to train and select a checkpoint");
    }
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    let mut net = Network::<f32>::new(cfg.network.clone(), cfg.seed)?;
    let per_element = (cfg.network.nr * cfg.network.nt * 2) as f64;

    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut best_store = net.store.clone();
    let mut best_epoch = 0usize;
    let mut best_test_loss = f64::INFINITY;

    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let lr = lr_schedule(epoch, cfg.base_lr, cfg.epochs)?;
        indices.shuffle(&mut stream(cfg.seed, StreamDomain::Shuffle, epoch as u64));

        let mut epoch_sse = 0.0f64;
        for chunk in indices.chunks(cfg.batch_size) {
            // One graph per sample keeps the peak working set small; the
            // batch gradient is accumulated externally in insertion-stable
            // (sorted) order so updates stay deterministic.
            let mut acc: BTreeMap<String, Vec<f32>> = BTreeMap::new();
            let scale = 1.0 / (chunk.len() as f64 * per_element);
            for &i in chunk {
                let mut g = Graph::new();
                let bindings = net.bind(&mut g);
                let x = g.leaf(train_set.input_tensor(i));
                let y = net.forward(&mut g, x, &bindings)?;
                let target = g.leaf(train_set.gt_tensor(i));
                let diff = g.sub(y, target);
                let sq = g.mul(diff, diff);
                let sse = g.sum(sq);
                let loss = g.scale(sse, scale);
                g.backward(loss)?;
                epoch_sse += g.value(sse).data()[0] as f64;
                for (name, id) in &bindings {
                    let grad = g.grad(*id);
                    let slot = acc
                        .entry(name.clone())
                        .or_insert_with(|| vec![0.0; grad.len()]);
                    for (a, &v) in slot.iter_mut().zip(grad) {
                        *a += v;
                    }
                }
            }
            for (name, grad) in &acc {
                net.store
                    .sgd_step(name, grad, lr, cfg.momentum, cfg.weight_decay);
            }
        }

        let train_loss = epoch_sse / (train_set.len() as f64 * per_element);
        let test_loss = mean_loss(&net, &test_set)?;
        rows.push(EpochRow {
            epoch,
            lr,
            train_loss,
            test_loss,
        });
        if test_loss < best_test_loss {
            best_test_loss = test_loss;
            best_epoch = epoch;
            best_store = net.store.clone();
        }
        eprintln!(
            "epoch {epoch}/{} lr {lr:.5} train {train_loss:.6} test {test_loss:.6} ({:.1} s)",
            cfg.epochs,
            started.elapsed().as_secs_f64()
        );
    }

    let loss_path = out_dir.join("loss.csv");
    let mut csv = String::from("epoch,lr,train_loss,test_loss\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.lr, row.train_loss, row.test_loss
        ));
    }
    fs::write(&loss_path, csv)?;

    let checkpoint_path = out_dir.join("model.nfpt");
    checkpoint::save(&best_store, &checkpoint_path)?;

    Ok(TrainReport {
        rows,
        best_epoch,
        best_test_loss,
        checkpoint_path,
        loss_path,
    })
}

/// Forward-only mean per-element squared error over a split.
pub fn mean_loss(net: &Network<f32>, set: &DatasetFile) -> Result<f64> {
    let per_element = (set.nr * set.nt * 2) as f64;
    let mut sse = 0.0f64;
    for i in 0..set.len() {
        let mut g = Graph::new();
        let bindings = net.bind(&mut g);
        let x = g.leaf(set.input_tensor(i));
        let y = net.forward(&mut g, x, &bindings)?;
        let target = g.leaf(set.gt_tensor(i));
        let diff = g.sub(y, target);
        let sq = g.mul(diff, diff);
        let s = g.sum(sq);
        sse += g.value(s).data()[0] as f64;
    }
    Ok(sse / (set.len() as f64 * per_element))
}
