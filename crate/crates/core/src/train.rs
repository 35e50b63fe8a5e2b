//! Joint loss and the deterministic training loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::mars::{MarsConfig, MarsModel, PreparedSample, TargetLabels};
use crate::nn::{Adam, Gradients, Graph, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Weight of the category loss, ω_c.
    pub wc: f64,
    /// Weight of the motion loss, ω_m.
    pub wm: f64,
    /// Samples per optimizer step.
    pub batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 3e-3,
            seed: 0,
            wc: 1.0,
            wm: 1.0,
            batch: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.wc >= 0.0) || !(self.wm >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative, got wc={} wm={}",
                self.wc, self.wm
            )));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub class: Var,
    pub motion: Var,
}

/// `ω_c · CE(category) + ω_m · BCE(motion)`, with the motion term restricted to points
/// whose ground-truth class is movable.
pub fn combined_loss(
    g: &mut Graph,
    class_logits: Var,
    motion_logits: Var,
    labels: &TargetLabels,
    wc: f64,
    wm: f64,
) -> Result<LossVars> {
    let class = g.softmax_cross_entropy(class_logits, &labels.semantic)?;
    let motion = g.bce_with_logits(motion_logits, &labels.moving, &labels.movable)?;
    let a = g.scale(class, wc);
    let b = g.scale(motion, wm);
    let total = g.add(a, b)?;
    Ok(LossVars { total, class, motion })
}

/// One prepared sample per sequence, in manifest order.
pub fn prepare_dataset(ds: &Dataset, cfg: &MarsConfig) -> Result<Vec<PreparedSample>> {
    (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let (frames, poses) = ds.read_sample(i, cfg.frames)?;
            PreparedSample::new(&frames, &poses, &cfg.bev, cfg.voxel, cfg.descriptor_scale(), &ds.taxonomy)
        })
        .collect()
}

/// Loss values and parameter gradients for one sample.
pub fn sample_gradients(
    model: &MarsModel,
    sample: &PreparedSample,
    wc: f64,
    wm: f64,
) -> Result<(Gradients, [f64; 3])> {
    let labels = sample.require_labels()?;
    let mut g = Graph::new();
    let b = model.params.bind(&mut g);
    let out = model.forward(&mut g, &b, sample)?;
    let loss = combined_loss(&mut g, out.class_logits, out.motion_logits, labels, wc, wm)?;
    g.backward(loss.total)?;
    let values = [
        g.value(loss.total).item(),
        g.value(loss.class).item(),
        g.value(loss.motion).item(),
    ];
    Ok((b.gradients(&g), values))
}

/// Mean losses over one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub loss_c: f64,
    pub loss_m: f64,
}

/// Trains in place. Sample order is reshuffled each epoch from `cfg.seed`; per-sample
/// gradients run in parallel but are summed in batch order, so results do not depend on
/// the thread count.
pub fn train_samples(
    model: &mut MarsModel,
    samples: &[PreparedSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        for batch in order.chunks(cfg.batch) {
            let results = batch
                .par_iter()
                .map(|&i| sample_gradients(model, &samples[i], cfg.wc, cfg.wm))
                .collect::<Result<Vec<_>>>()?;
            let mut total = Gradients::new();
            for (grads, values) in &results {
                total.accumulate(grads);
                for (s, v) in sums.iter_mut().zip(values) {
                    *s += v;
                }
            }
            total.scale(1.0 / batch.len() as f64);
            adam.step(&mut model.params, &total, cfg.lr)?;
        }
        let n = samples.len() as f64;
        let log = EpochLog {
            epoch: epoch + 1,
            loss: sums[0] / n,
            loss_c: sums[1] / n,
            loss_m: sums[2] / n,
        };
        if !log.loss.is_finite() {
            return Err(Error::State(format!("loss diverged at epoch {}", log.epoch)));
        }
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Reproducibility header shared by every artifact a run writes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunHeader {
    pub seed: u64,
    pub config_hash: String,
    pub dataset_hash: String,
}

impl RunHeader {
    pub fn to_comment(&self) -> String {
        format!(
            "# seed={} config={} dataset={}\n",
            self.seed, self.config_hash, self.dataset_hash
        )
    }
}

pub fn write_train_log(path: &Path, header: &RunHeader, logs: &[EpochLog]) -> Result<()> {
    let mut out = header.to_comment();
    out.push_str("epoch,loss,loss_c,loss_m\n");
    for l in logs {
        out.push_str(&format!("{},{:.10e},{:.10e},{:.10e}\n", l.epoch, l.loss, l.loss_c, l.loss_m));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
