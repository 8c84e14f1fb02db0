//! Stage runners. Every stage is single-threaded and fully determined by
//! the config seed: batch order, masks and initializations all come from one
//! ChaCha8 stream per stage.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{lr_at, make_batches, train_step, Adam, Checkpoint, MetricRecord};
use crate::asr_head::{bilstm_graph, ctc::min_frames, ctc_loss_with_grad, init_decoder, weighted_sum_graph};
use crate::autodiff::Tape;
use crate::config::{AdaptMode, Config, Decay, Stage, StageConfig, UnitsConfig};
use crate::data_io::{Manifest, ManifestRole, Waveform};
use crate::encoder::{
    encoder_forward, encoder_graph, frontend_forward, frontend_graph, init_adapters, init_base, top_graph,
    waveform_leaf, Bound, EncoderOutput, FrameSequence, ModelConfig,
};
use crate::error::{Error, Result};
use crate::masking::{sample_mask, MaskSet, MaskSpec};
use crate::params::{FreezeSet, Group, ParamStore};
use crate::ssl_head::{logits_graph, masked_nll_with_grad};
use crate::tensor::Mat;
use crate::units::{assign, fit_kmeans, ClusterCodebook, FeatureSource};
use crate::vocab;

const VAL_MASK_SALT: u64 = 0x7661_6c5f_6d61_736b;
const SPLIT_SALT: u64 = 0x7370_6c69_74;

#[derive(Clone, Debug)]
pub struct StageOutput {
    pub last: Checkpoint,
    /// Lowest validation loss (earliest on ties); equals `last` when the
    /// stage has no validation split.
    pub best: Checkpoint,
    pub best_step: usize,
    /// This stage's metric records only.
    pub metrics: Vec<MetricRecord>,
}

struct Corpus {
    waves: Vec<Waveform>,
    transcripts: Vec<Option<String>>,
    frames: Vec<usize>,
}

fn load_corpus(manifest: &Manifest, model: &ModelConfig) -> Result<(Corpus, usize)> {
    if manifest.is_empty() {
        return Err(Error::Data("manifest has no utterances".into()));
    }
    let mut c = Corpus { waves: Vec::new(), transcripts: Vec::new(), frames: Vec::new() };
    let mut short = 0;
    for u in &manifest.utterances {
        let w = u.load_audio()?;
        let t = model.frames_for(w.len());
        if t == 0 {
            short += 1;
            continue;
        }
        c.waves.push(w);
        c.transcripts.push(u.transcript.clone());
        c.frames.push(t);
    }
    if c.waves.is_empty() {
        return Err(Error::Data(format!(
            "all {} utterances are shorter than the frontend receptive field ({} samples)",
            manifest.len(),
            model.receptive_field()
        )));
    }
    Ok((c, short))
}

fn require_role(manifest: &Manifest, role: ManifestRole) -> Result<()> {
    if manifest.role != role {
        return Err(Error::Data(format!("expected a {role} manifest, got {}", manifest.role)));
    }
    Ok(())
}

/// Seeded train/validation split; both halves come back in ascending order.
fn split(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
    let mut k = (val_fraction * n as f64).round() as usize;
    if val_fraction > 0.0 && n >= 2 {
        k = k.clamp(1, n - 1);
    }
    let (val, train) = idx.split_at(k.min(n));
    let (mut train, mut val) = (train.to_vec(), val.to_vec());
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn stage_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64);
    rng
}

/// Everything needed to run the SSL forward pass on one corpus.
struct SslCtx<'a> {
    model: &'a ModelConfig,
    mask: MaskSpec,
    freeze: FreezeSet,
    adapters: bool,
    waves: &'a [Waveform],
    /// Frontend outputs, used when the frontend is frozen.
    frames: Option<Vec<Mat>>,
    lengths: &'a [usize],
}

impl SslCtx<'_> {
    /// Scaled masked NLL of utterance `i`; accumulates gradients when asked.
    fn pass(
        &self,
        params: &ParamStore,
        i: usize,
        targets: &[usize],
        mask: &MaskSet,
        scale: f64,
        grads: Option<&mut BTreeMap<String, Mat>>,
    ) -> Result<f64> {
        let freeze = if grads.is_some() { self.freeze } else { FreezeSet::default() };
        let mut tape = Tape::new();
        let b = Bound::new(&mut tape, params, freeze);
        let x = match &self.frames {
            Some(f) => tape.param(&f[i], false),
            None => {
                let w = waveform_leaf(&mut tape, &self.waves[i]);
                frontend_graph(&mut tape, &b, self.model, w)?
            }
        };
        let enc = encoder_graph(&mut tape, &b, self.model, x, Some(mask), self.adapters)?;
        let top = top_graph(&mut tape, &b, &enc);
        let logits = logits_graph(&mut tape, &b, top);
        let (value, g) = masked_nll_with_grad(tape.value(logits), targets, mask, scale)?;
        if let Some(acc) = grads {
            let root = tape.loss_with_grad(logits, value, g);
            let mut gr = tape.backward(root);
            for (name, g) in b.gradients(&mut gr, params) {
                match acc.get_mut(&name) {
                    Some(a) => a.add_assign(&g),
                    None => {
                        acc.insert(name, g);
                    }
                }
            }
        }
        Ok(value)
    }

    /// Pooled validation loss `Σ NLL / Σ |M|` under fixed per-utterance masks.
    fn val_loss(&self, params: &ParamStore, val: &[(usize, MaskSet)], targets: &[Vec<usize>]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0;
        for (i, m) in val {
            total += self.pass(params, *i, &targets[*i], m, 1.0, None)?;
            count += m.len();
        }
        Ok(total / count as f64)
    }
}

fn val_masks(ctx: &SslCtx, val: &[usize], seed: u64) -> Vec<(usize, MaskSet)> {
    val.iter()
        .filter_map(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ VAL_MASK_SALT);
            rng.set_stream(i as u64);
            let t = ctx.lengths[i];
            let m = sample_mask(t, &ctx.mask.scaled_for(t), &mut rng);
            (!m.is_empty()).then_some((i, m))
        })
        .collect()
}

/// Runs `stage.max_steps` SSL updates; `on_eval` fires every `eval_every`
/// steps and after the last one.
#[allow(clippy::too_many_arguments)]
fn ssl_train(
    ctx: &SslCtx,
    params: &mut ParamStore,
    opt: &mut Adam,
    stage: &StageConfig,
    train: &[usize],
    targets: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
    split: &str,
    metrics: &mut Vec<MetricRecord>,
    mut on_eval: impl FnMut(usize, &ParamStore, &mut Vec<MetricRecord>) -> Result<()>,
) -> Result<()> {
    let lengths: Vec<usize> = train.iter().map(|&i| ctx.lengths[i]).collect();
    let mut queue: Vec<Vec<usize>> = Vec::new();
    let mut window = (0.0, 0usize);
    for step in 1..=stage.max_steps {
        if queue.is_empty() {
            queue = make_batches(&lengths, stage.max_frames_per_batch, rng);
            queue.reverse();
        }
        let batch = queue.pop().expect("non-empty corpus");
        let masked: Vec<(usize, MaskSet)> = batch
            .iter()
            .map(|&j| {
                let i = train[j];
                let t = ctx.lengths[i];
                (i, sample_mask(t, &ctx.mask.scaled_for(t), rng))
            })
            .filter(|(_, m)| !m.is_empty())
            .collect();
        let total: usize = masked.iter().map(|(_, m)| m.len()).sum();
        if total == 0 {
            metrics.push(MetricRecord::new(step, split, "skipped_batch", 1.0));
        } else {
            let scale = 1.0 / total as f64;
            let mut grads = BTreeMap::new();
            let mut loss = 0.0;
            for (i, m) in &masked {
                loss += ctx.pass(params, *i, &targets[*i], m, scale, Some(&mut grads))?;
            }
            let grads: Vec<(String, Mat)> = grads.into_iter().collect();
            train_step(params, &grads, opt, lr_at(stage, step)?, &ctx.freeze)?;
            window.0 += loss;
            window.1 += 1;
        }
        if step % stage.eval_every == 0 || step == stage.max_steps {
            if window.1 > 0 {
                metrics.push(MetricRecord::new(step, split, "ssl_loss", window.0 / window.1 as f64));
            }
            window = (0.0, 0);
            on_eval(step, params, metrics)?;
        }
    }
    Ok(())
}

/// Features the codebook clusters: the frontend output or block `ℓ` of
/// `teacher` (no mask, no adapters).
fn teacher_features(teacher: &ParamStore, model: &ModelConfig, source: FeatureSource, w: &Waveform) -> Result<Mat> {
    let f = frontend_forward(w, teacher, model)?;
    match source {
        FeatureSource::Frontend => Ok(f.frames),
        FeatureSource::Layer(l) => {
            let shallow = ModelConfig { layers: l, ..model.clone() };
            Ok(encoder_forward(&f, teacher, &shallow, false, None)?.per_layer.pop().expect("l >= 1"))
        }
    }
}

/// Fits the codebook on an evenly strided subsample of the training frames.
fn fit_codebook(feats: &[Mat], units: &UnitsConfig, clusters: usize, seed: u64) -> Result<ClusterCodebook> {
    let total: usize = feats.iter().map(Mat::rows).sum();
    let stride = total.div_ceil(units.max_points.max(1)).max(1);
    let d = feats[0].cols();
    let mut rows = Vec::new();
    let mut k = 0;
    for f in feats {
        for r in 0..f.rows() {
            if k % stride == 0 {
                rows.extend_from_slice(f.row(r));
            }
            k += 1;
        }
    }
    let pts = Mat::from_vec(rows.len() / d, d, rows);
    Ok(fit_kmeans(&pts, clusters, units.max_iters, seed)?.codebook)
}

fn resolved_config(cfg: &Config, model: &ModelConfig, mode: Option<AdaptMode>) -> Result<String> {
    let mut c = cfg.clone();
    c.set_model(model);
    if let Some(m) = mode {
        c.set("stage.adapt_mode", m.as_str())?;
    }
    Ok(c.resolved())
}

/// Stage 1: SSL on generic unlabeled audio. A first codebook on the
/// randomly initialized frontend drives `units.warm_steps` updates; the warm
/// model then becomes the frozen teacher whose configured layer is clustered
/// into the codebook used for the rest of training (and for stage 2).
pub fn run_pretrain(cfg: &Config, manifest: &Manifest) -> Result<StageOutput> {
    require_role(manifest, ManifestRole::GenericUnlabeled)?;
    let model = cfg.model()?;
    let mask = cfg.mask()?;
    let units = cfg.units(&model)?;
    let stage = cfg.stage(Stage::Pretrain)?;
    let (corpus, short) = load_corpus(manifest, &model)?;
    let mut rng = stage_rng(stage.seed, Stage::Pretrain);
    let mut params = init_base(&model, &mut rng);
    let (train, val) = split(corpus.waves.len(), cfg.val_fraction()?, stage.seed);
    let mut metrics = vec![MetricRecord::new(0, "pretrain", "skipped_short", short as f64)];
    let ctx = SslCtx {
        model: &model,
        mask,
        freeze: FreezeSet::only(&[Group::Frontend, Group::Transformer, Group::Projection]),
        adapters: false,
        waves: &corpus.waves,
        frames: None,
        lengths: &corpus.frames,
    };
    let mut opt = Adam::new(stage.adam);

    let all: Vec<usize> = (0..corpus.waves.len()).collect();
    let label = |teacher: &ParamStore, source: FeatureSource| -> Result<Vec<Mat>> {
        all.iter().map(|&i| teacher_features(teacher, &model, source, &corpus.waves[i])).collect()
    };
    let targets_for = |cb: &ClusterCodebook, feats: &[Mat]| -> Result<Vec<Vec<usize>>> {
        feats.iter().map(|f| assign(cb, f)).collect()
    };
    let train_feats = |f: &[Mat]| train.iter().map(|&i| f[i].clone()).collect::<Vec<_>>();

    if units.warm_steps > 0 {
        let feats = label(&params, FeatureSource::Frontend)?;
        let cb0 = fit_codebook(&train_feats(&feats), &units, model.clusters, stage.seed)?;
        let z0 = targets_for(&cb0, &feats)?;
        let warm = StageConfig {
            max_steps: units.warm_steps,
            warmup_steps: units.warm_steps,
            decay: Decay::Constant,
            eval_every: units.warm_steps,
            ..stage.clone()
        };
        ssl_train(&ctx, &mut params, &mut opt, &warm, &train, &z0, &mut rng, "pretrain.warm", &mut metrics, |_, _, _| {
            Ok(())
        })?;
    }

    let teacher = params.clone();
    let feats = label(&teacher, units.feature_source)?;
    let mut codebook = fit_codebook(&train_feats(&feats), &units, model.clusters, stage.seed)?;
    codebook.feature_source = units.feature_source;
    let targets = targets_for(&codebook, &feats)?;
    drop(feats);

    let vmasks = val_masks(&ctx, &val, stage.seed);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    ssl_train(&ctx, &mut params, &mut opt, &stage, &train, &targets, &mut rng, "pretrain.train", &mut metrics, |step, p, m| {
        if vmasks.is_empty() {
            return Ok(());
        }
        let v = ctx.val_loss(p, &vmasks, &targets)?;
        m.push(MetricRecord::new(step, "pretrain.val", "ssl_loss", v));
        if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
            best = Some((v, step, p.clone()));
        }
        Ok(())
    })?;

    let last = Checkpoint {
        config: resolved_config(cfg, &model, None)?,
        model: model.clone(),
        provenance: vec![Stage::Pretrain.as_str().into()],
        params,
        teacher: Some(teacher),
        codebook: Some(codebook),
        rng,
        metrics: metrics.clone(),
    };
    Ok(finish(last, best, metrics, stage.max_steps))
}

fn finish(last: Checkpoint, best: Option<(f64, usize, ParamStore)>, metrics: Vec<MetricRecord>, steps: usize) -> StageOutput {
    match best {
        Some((_, step, p)) => {
            let best = Checkpoint { params: p, ..last.clone() };
            StageOutput { last, best, best_step: step, metrics }
        }
        None => StageOutput { best: last.clone(), last, best_step: steps, metrics },
    }
}

/// Stage 2: continue the SSL objective on unlabeled target-accent audio
/// with the stage-1 codebook and teacher. `Adapters` inserts identity
/// adapters when absent and trains only those.
pub fn run_adapt(cfg: &Config, base: &Checkpoint, manifest: &Manifest, mode: AdaptMode) -> Result<StageOutput> {
    require_role(manifest, ManifestRole::AccentUnlabeled)?;
    let codebook = base.codebook.clone().ok_or_else(|| Error::Config("base checkpoint has no codebook".into()))?;
    let teacher = base.teacher.as_ref().ok_or_else(|| Error::Config("base checkpoint has no teacher model".into()))?;
    let mut stage = cfg.stage(Stage::Adapt)?;
    if stage.adapt_mode != mode {
        let mut c = cfg.clone();
        c.set("stage.adapt_mode", mode.as_str())?;
        stage = c.stage(Stage::Adapt)?;
    }
    let mask = cfg.mask()?;
    let mut model = base.model.clone();
    let mut rng = stage_rng(stage.seed, Stage::Adapt);
    let mut params = base.params.clone();
    params.remove_group(Group::Decoder);
    let freeze = match mode {
        AdaptMode::Adapters => {
            if !params.has_group(Group::Adapter) {
                model.b_ada = cfg.model()?.b_ada;
                if model.b_ada == 0 {
                    return Err(Error::Config("adapters mode needs model.B_ada > 0".into()));
                }
                params.extend(init_adapters(&model, &mut rng));
            }
            FreezeSet::only(&[Group::Adapter])
        }
        AdaptMode::Full => FreezeSet::only(&[Group::Frontend, Group::Transformer, Group::Projection]),
    };
    let (corpus, short) = load_corpus(manifest, &model)?;
    let (train, val) = split(corpus.waves.len(), cfg.val_fraction()?, stage.seed);
    let mut metrics = vec![MetricRecord::new(0, "adapt", "skipped_short", short as f64)];

    let frames = if freeze.is_trainable(Group::Frontend) {
        None
    } else {
        Some(corpus.waves.iter().map(|w| Ok(frontend_forward(w, &params, &model)?.frames)).collect::<Result<Vec<_>>>()?)
    };
    let ctx = SslCtx {
        model: &model,
        mask,
        freeze,
        adapters: params.has_group(Group::Adapter),
        waves: &corpus.waves,
        frames,
        lengths: &corpus.frames,
    };
    let targets: Vec<Vec<usize>> = corpus
        .waves
        .iter()
        .map(|w| assign(&codebook, &teacher_features(teacher, &model, codebook.feature_source, w)?))
        .collect::<Result<_>>()?;

    let vmasks = val_masks(&ctx, &val, stage.seed);
    if !vmasks.is_empty() {
        metrics.push(MetricRecord::new(0, "adapt.val", "ssl_loss", ctx.val_loss(&params, &vmasks, &targets)?));
    }
    let mut opt = Adam::new(stage.adam);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    ssl_train(&ctx, &mut params, &mut opt, &stage, &train, &targets, &mut rng, "adapt.train", &mut metrics, |step, p, m| {
        if vmasks.is_empty() {
            return Ok(());
        }
        let v = ctx.val_loss(p, &vmasks, &targets)?;
        m.push(MetricRecord::new(step, "adapt.val", "ssl_loss", v));
        if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
            best = Some((v, step, p.clone()));
        }
        Ok(())
    })?;
    drop(ctx);

    let mut provenance = base.provenance.clone();
    provenance.push(Stage::Adapt.as_str().into());
    let mut all_metrics = base.metrics.clone();
    all_metrics.extend(metrics.iter().cloned());
    let last = Checkpoint {
        config: resolved_config(cfg, &model, Some(mode))?,
        model,
        provenance,
        params,
        teacher: base.teacher.clone(),
        codebook: Some(codebook),
        rng,
        metrics: all_metrics,
    };
    Ok(finish(last, best, metrics, stage.max_steps))
}

/// Encoder outputs of a checkpoint on one waveform; adapters participate
/// whenever the checkpoint has them.
pub fn encode_waveform(ckpt: &Checkpoint, w: &Waveform) -> Result<EncoderOutput> {
    encode_with(&ckpt.params, &ckpt.model, w)
}

fn encode_with(params: &ParamStore, model: &ModelConfig, w: &Waveform) -> Result<EncoderOutput> {
    let f: FrameSequence = frontend_forward(w, params, model)?;
    encoder_forward(&f, params, model, params.has_group(Group::Adapter), None)
}

/// Mean-per-utterance CTC loss of one batch, with gradients for θ_d.
fn ctc_batch(
    params: &ParamStore,
    model: &ModelConfig,
    feats: &[EncoderOutput],
    targets: &[Vec<usize>],
    batch: &[usize],
    grads: Option<&mut BTreeMap<String, Mat>>,
) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let freeze = if grads.is_some() { FreezeSet::only(&[Group::Decoder]) } else { FreezeSet::default() };
    let mut acc = grads;
    let mut total = 0.0;
    for &i in batch {
        let mut tape = Tape::new();
        let b = Bound::new(&mut tape, params, freeze);
        let layers: Vec<_> = feats[i].per_layer.iter().map(|m| tape.param(m, false)).collect();
        let x = weighted_sum_graph(&mut tape, &b, &layers);
        let logits = bilstm_graph(&mut tape, &b, model, x);
        let (loss, mut g) = ctc_loss_with_grad(tape.value(logits), &targets[i])?
            .ok_or_else(|| Error::Data("infeasible target reached the CTC batch".into()))?;
        total += loss;
        if let Some(acc) = acc.as_deref_mut() {
            g.scale_in_place(scale);
            let root = tape.loss_with_grad(logits, loss * scale, g);
            let mut gr = tape.backward(root);
            for (name, g) in b.gradients(&mut gr, params) {
                match acc.get_mut(&name) {
                    Some(a) => a.add_assign(&g),
                    None => {
                        acc.insert(name, g);
                    }
                }
            }
        }
    }
    Ok(total * scale)
}

/// Stage 3: trains θ_d on a frozen encoder (adapters included when present)
/// with CTC. Epoch 0 is a forward-only pass; training stops once the
/// relative decrease between consecutive epoch losses falls below
/// `stage.stop_threshold`, or after `stage.epochs`.
pub fn run_finetune(cfg: &Config, ckpt: &Checkpoint, manifest: &Manifest) -> Result<StageOutput> {
    require_role(manifest, ManifestRole::Labeled)?;
    let mut stage = cfg.stage(Stage::Finetune)?;
    let head = cfg.model()?;
    let model = ModelConfig { lstm_hidden: head.lstm_hidden, lstm_layers: head.lstm_layers, ..ckpt.model.clone() };
    let mut rng = stage_rng(stage.seed, Stage::Finetune);
    let mut params = ckpt.params.clone();
    if !params.has_group(Group::Decoder) {
        params.extend(init_decoder(&model, &mut rng));
    }
    let (corpus, short) = load_corpus(manifest, &model)?;
    let mut metrics = vec![MetricRecord::new(0, "finetune", "skipped_short", short as f64)];

    let mut feats = Vec::new();
    let mut targets = Vec::new();
    let mut lengths = Vec::new();
    let mut infeasible = 0;
    for (w, t) in corpus.waves.iter().zip(&corpus.transcripts) {
        let y = vocab::encode(t.as_deref().expect("labeled manifests carry transcripts"))?;
        let out = encode_with(&params, &model, w)?;
        let frames = out.per_layer[0].rows();
        if min_frames(&y) > frames {
            infeasible += 1;
            continue;
        }
        lengths.push(frames);
        feats.push(out);
        targets.push(y);
    }
    metrics.push(MetricRecord::new(0, "finetune", "infeasible_skipped", infeasible as f64));
    if feats.is_empty() {
        return Err(Error::Data("no CTC-feasible labeled utterances".into()));
    }

    let batches_per_epoch = make_batches(&lengths, stage.max_frames_per_batch, &mut rng.clone()).len();
    stage.max_steps = stage.epochs.max(1) * batches_per_epoch;
    if stage.warmup_steps > stage.max_steps {
        stage.warmup_steps = stage.max_steps;
    }
    let all: Vec<usize> = (0..feats.len()).collect();
    let mut prev = ctc_batch(&params, &model, &feats, &targets, &all, None)?;
    metrics.push(MetricRecord::new(0, "finetune.train", "ctc_loss", prev));
    let freeze = FreezeSet::only(&[Group::Decoder]);
    let mut opt = Adam::new(stage.adam);
    let mut step = 0;
    for epoch in 1..=stage.epochs.max(1) {
        let mut sum = 0.0;
        for batch in make_batches(&lengths, stage.max_frames_per_batch, &mut rng) {
            step += 1;
            let mut grads = BTreeMap::new();
            let loss = ctc_batch(&params, &model, &feats, &targets, &batch, Some(&mut grads))?;
            sum += loss * batch.len() as f64;
            let grads: Vec<(String, Mat)> = grads.into_iter().collect();
            train_step(&mut params, &grads, &mut opt, lr_at(&stage, step)?, &freeze)?;
        }
        let cur = sum / feats.len() as f64;
        metrics.push(MetricRecord::new(epoch, "finetune.train", "ctc_loss", cur));
        let rel = (prev - cur) / prev;
        prev = cur;
        if rel < stage.stop_threshold {
            break;
        }
    }

    let mut provenance = ckpt.provenance.clone();
    provenance.push(Stage::Finetune.as_str().into());
    let mut all_metrics = ckpt.metrics.clone();
    all_metrics.extend(metrics.iter().cloned());
    let last = Checkpoint {
        config: resolved_config(cfg, &model, None)?,
        model,
        provenance,
        params,
        teacher: ckpt.teacher.clone(),
        codebook: ckpt.codebook.clone(),
        rng,
        metrics: all_metrics,
    };
    Ok(finish(last, None, metrics, step))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_seeded() {
        let (t, v) = split(20, 0.1, 3);
        assert_eq!(v.len(), 2);
        assert_eq!(t.len(), 18);
        assert!(v.iter().all(|i| !t.contains(i)));
        assert_eq!(split(20, 0.1, 3), (t, v));
        let (t, v) = split(5, 0.0, 1);
        assert_eq!((t.len(), v.len()), (5, 0));
    }
}
