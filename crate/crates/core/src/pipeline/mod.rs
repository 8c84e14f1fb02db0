//! Three-stage training: generic SSL pretraining, accent-adaptive SSL
//! (full or adapters-only) and CTC fine-tuning of the downstream head.

pub mod checkpoint;
pub mod stages;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AdamConfig, Decay, StageConfig};
use crate::error::{Error, Result};
use crate::params::{FreezeSet, ParamStore};
use crate::tensor::Mat;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use stages::{run_adapt, run_finetune, run_pretrain, StageOutput};

/// Learning rate at 1-based `step`: linear warmup to `peak_lr`, then the
/// configured decay.
pub fn lr_at(cfg: &StageConfig, step: usize) -> Result<f64> {
    if step == 0 || step > cfg.max_steps {
        return Err(Error::StepOutOfRange { step, max: cfg.max_steps });
    }
    if step <= cfg.warmup_steps {
        return Ok(cfg.peak_lr * step as f64 / cfg.warmup_steps as f64);
    }
    Ok(match cfg.decay {
        Decay::Constant => cfg.peak_lr,
        Decay::PolynomialToZero(p) => {
            let left = (cfg.max_steps - step) as f64 / (cfg.max_steps - cfg.warmup_steps) as f64;
            cfg.peak_lr * left.powf(p)
        }
    })
}

/// Adam with per-tensor moments keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    steps: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, steps: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// One Adam update over the trainable tensors in `grads`; tensors in frozen
/// groups are skipped and stay bit-identical. Any non-finite gradient aborts
/// the step before anything is modified.
pub fn train_step(
    params: &mut ParamStore,
    grads: &[(String, Mat)],
    opt: &mut Adam,
    lr: f64,
    freeze: &FreezeSet,
) -> Result<()> {
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
        let p = params.get(name).ok_or_else(|| Error::Shape(format!("gradient for unknown tensor `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!("`{name}`: gradient {:?} vs parameter {:?}", g.shape(), p.shape())));
        }
    }
    opt.steps += 1;
    let c = opt.cfg;
    let bc1 = 1.0 - c.beta1.powi(opt.steps as i32);
    let bc2 = 1.0 - c.beta2.powi(opt.steps as i32);
    for (name, g) in grads {
        if !freeze.name_trainable(name) {
            continue;
        }
        let p = params.get_mut(name).expect("checked above");
        let m = opt.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = opt.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
            *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
            let update = (*mi / bc1) / ((*vi / bc2).sqrt() + c.eps) + c.weight_decay * *w;
            *w -= lr * update;
        }
    }
    Ok(())
}

/// Length-bucketed batches under a frame budget, in seeded random order.
/// Utterances longer than the budget form singleton batches.
pub fn make_batches(lengths: &[usize], max_frames: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| lengths[i]);
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut used = 0;
    for i in order {
        if !cur.is_empty() && used + lengths[i] > max_frames {
            batches.push(std::mem::take(&mut cur));
            used = 0;
        }
        cur.push(i);
        used += lengths[i];
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches.shuffle(rng);
    batches
}

/// One `{step, split, metric, value}` line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(step: usize, split: &str, metric: &str, value: f64) -> Self {
        Self { step, split: split.to_string(), metric: metric.to_string(), value }
    }
}

pub fn metrics_to_jsonl(records: &[MetricRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(s, "{}", serde_json::to_string(r).expect("metric records serialize"));
    }
    s
}

pub fn metrics_from_jsonl(text: &str) -> Result<Vec<MetricRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Corrupt(format!("metric line `{l}`: {e}"))))
        .collect()
}

pub fn write_metrics(path: &Path, records: &[MetricRecord]) -> Result<()> {
    std::fs::write(path, metrics_to_jsonl(records))?;
    Ok(())
}
