//! Waveform frontend, transformer encoder, residual adapters and exact
//! parameter accounting.
//!
//! Each block is pre-LN: `h = x + MHSA(LN₁(x))`, `y = h + FFN(LN₂(h))`. When
//! adapters are enabled the block output passes through
//! `y + ReLU(LN(y)·W_down + b_down)·W_up + b_up` before reaching the next block.

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{Grads, Tape, Var};
use crate::data_io::Waveform;
use crate::error::{Error, Result};
use crate::masking::MaskSet;
use crate::params::{normal, uniform, FreezeSet, Group, ParamStore};
use crate::tensor::Mat;
use crate::vocab::VOCAB_SIZE;

pub const HOP_SECONDS: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosEncoding {
    Sinusoidal,
    /// Grouped convolution over time (kernel, groups), added after a GELU.
    Conv { kernel: usize, groups: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Model width.
    pub d: usize,
    /// Number of transformer blocks.
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Adapter bottleneck; 0 disables adapters.
    pub b_ada: usize,
    /// Frontend conv stack; the last layer's `out_channels` must equal `d`.
    pub conv: Vec<ConvLayer>,
    pub pos: PosEncoding,
    /// Number of k-means clusters (SSL targets).
    pub clusters: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            layers: 4,
            heads: 4,
            ffn: 256,
            b_ada: 16,
            conv: vec![
                ConvLayer { out_channels: 32, kernel: 8, stride: 8 },
                ConvLayer { out_channels: 64, kernel: 8, stride: 8 },
                ConvLayer { out_channels: 64, kernel: 5, stride: 5 },
            ],
            pos: PosEncoding::Sinusoidal,
            clusters: 32,
            lstm_hidden: 64,
            lstm_layers: 2,
            vocab: VOCAB_SIZE,
        }
    }
}

impl ModelConfig {
    /// HuBERT-large dimensions: 7-layer 512-channel conv stack, convolutional
    /// positions (kernel 128, 16 groups), 500 clusters, 1024-unit BiLSTM.
    pub fn hubert_large() -> Self {
        let mut conv: Vec<ConvLayer> = [(10, 5), (3, 2), (3, 2), (3, 2), (3, 2), (2, 2), (2, 2)]
            .iter()
            .map(|&(kernel, stride)| ConvLayer { out_channels: 512, kernel, stride })
            .collect();
        conv.last_mut().unwrap().out_channels = 1024;
        Self {
            d: 1024,
            layers: 24,
            heads: 16,
            ffn: 4096,
            b_ada: 1024,
            conv,
            pos: PosEncoding::Conv { kernel: 128, groups: 16 },
            clusters: 500,
            lstm_hidden: 1024,
            lstm_layers: 2,
            vocab: VOCAB_SIZE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.d == 0 || self.heads == 0 {
            return bad("model.d, model.N and model.heads must be positive".into());
        }
        if self.d % self.heads != 0 {
            return bad(format!("model.d={} not divisible by model.heads={}", self.d, self.heads));
        }
        if self.conv.is_empty() {
            return bad("frontend needs at least one conv layer".into());
        }
        if self.conv.last().unwrap().out_channels != self.d {
            return bad("last conv layer must output model.d channels".into());
        }
        if let Some(l) = self.conv.iter().find(|l| l.kernel < l.stride || l.stride == 0) {
            return bad(format!("conv kernel {} smaller than stride {}", l.kernel, l.stride));
        }
        if let PosEncoding::Conv { kernel, groups } = self.pos {
            if groups == 0 || self.d % groups != 0 || kernel == 0 {
                return bad(format!("positional conv {kernel}/{groups} incompatible with d={}", self.d));
            }
        }
        if self.clusters == 0 || self.lstm_hidden == 0 || self.lstm_layers == 0 {
            return bad("model.C, model.H and decoder layers must be positive".into());
        }
        if self.vocab != VOCAB_SIZE {
            return bad(format!("vocabulary must have {VOCAB_SIZE} symbols"));
        }
        Ok(())
    }

    pub fn total_stride(&self) -> usize {
        self.conv.iter().map(|l| l.stride).product()
    }

    /// Smallest waveform that yields one frame.
    pub fn receptive_field(&self) -> usize {
        self.conv.iter().rev().fold(1, |need, l| (need - 1) * l.stride + l.kernel)
    }

    /// Frames produced from `samples` waveform samples (0 if too short).
    pub fn frames_for(&self, samples: usize) -> usize {
        self.conv.iter().fold(samples, |len, l| if len < l.kernel { 0 } else { (len - l.kernel) / l.stride + 1 })
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

pub fn block_name(i: usize, leaf: &str) -> String {
    format!("encoder.block{i:02}.{leaf}")
}

pub fn adapter_name(i: usize, leaf: &str) -> String {
    format!("adapter.block{i:02}.{leaf}")
}

/// Initializes θ_f, θ_T and θ_A.
pub fn init_base(cfg: &ModelConfig, rng: &mut impl Rng) -> ParamStore {
    let mut p = ParamStore::new();
    let mut cin = 1;
    for (i, l) in cfg.conv.iter().enumerate() {
        let fan_in = l.kernel * cin;
        p.insert(format!("frontend.conv{i}.weight"), normal(fan_in, l.out_channels, (2.0 / fan_in as f64).sqrt(), rng));
        cin = l.out_channels;
    }
    let d = cfg.d;
    p.insert("encoder.mask_emb", normal(1, d, 1.0, rng));
    if let PosEncoding::Conv { kernel, groups } = cfg.pos {
        let dg = d / groups;
        for g in 0..groups {
            p.insert(
                format!("encoder.pos_conv.g{g:02}.weight"),
                normal(kernel * dg, dg, (1.0 / (kernel * dg) as f64).sqrt(), rng),
            );
        }
        p.insert("encoder.pos_conv.bias", Mat::zeros(1, d));
    }
    let sd = (1.0 / d as f64).sqrt();
    for b in 0..cfg.layers {
        p.insert(block_name(b, "ln1.gamma"), Mat::filled(1, d, 1.0));
        p.insert(block_name(b, "ln1.beta"), Mat::zeros(1, d));
        for w in ["wq", "wk", "wv", "wo"] {
            p.insert(block_name(b, &format!("attn.{w}")), normal(d, d, sd, rng));
        }
        p.insert(block_name(b, "ln2.gamma"), Mat::filled(1, d, 1.0));
        p.insert(block_name(b, "ln2.beta"), Mat::zeros(1, d));
        p.insert(block_name(b, "ffn.w1"), normal(d, cfg.ffn, sd, rng));
        p.insert(block_name(b, "ffn.b1"), Mat::zeros(1, cfg.ffn));
        p.insert(block_name(b, "ffn.w2"), normal(cfg.ffn, d, (1.0 / cfg.ffn as f64).sqrt(), rng));
        p.insert(block_name(b, "ffn.b2"), Mat::zeros(1, d));
    }
    p.insert("encoder.final_ln.gamma", Mat::filled(1, d, 1.0));
    p.insert("encoder.final_ln.beta", Mat::zeros(1, d));
    p.insert("proj.weight", normal(d, cfg.clusters, sd, rng));
    p.insert("proj.bias", Mat::zeros(1, cfg.clusters));
    p
}

/// Identity-at-init adapters: `W_up = 0`, `b_up = 0`.
pub fn init_adapters(cfg: &ModelConfig, rng: &mut impl Rng) -> ParamStore {
    let mut p = ParamStore::new();
    let (d, b) = (cfg.d, cfg.b_ada);
    for i in 0..cfg.layers {
        p.insert(adapter_name(i, "ln.gamma"), Mat::filled(1, d, 1.0));
        p.insert(adapter_name(i, "ln.beta"), Mat::zeros(1, d));
        p.insert(adapter_name(i, "down.weight"), normal(d, b, (1.0 / d as f64).sqrt(), rng));
        p.insert(adapter_name(i, "down.bias"), Mat::zeros(1, b));
        p.insert(adapter_name(i, "up.weight"), Mat::zeros(b, d));
        p.insert(adapter_name(i, "up.bias"), Mat::zeros(1, d));
    }
    p
}

pub(crate) fn init_uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Mat {
    uniform(rows, cols, bound, rng)
}

/// Parameters bound as tape leaves, looked up by name.
pub struct Bound {
    vars: HashMap<String, Var>,
    trainable: Vec<(String, Var)>,
}

impl Bound {
    /// Binds every tensor; only those in trainable groups receive gradients.
    pub fn new<'a>(tape: &mut Tape<'a>, params: &'a ParamStore, freeze: FreezeSet) -> Self {
        let mut vars = HashMap::with_capacity(params.len());
        let mut trainable = Vec::new();
        for (name, m) in params.iter() {
            let ng = freeze.name_trainable(name);
            let v = tape.param(m, ng);
            if ng {
                trainable.push((name.clone(), v));
            }
            vars.insert(name.clone(), v);
        }
        Self { vars, trainable }
    }

    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// Gradients of all trainable tensors, in name order. Tensors the loss
    /// does not reach get zeros.
    pub fn gradients(&self, grads: &mut Grads, params: &ParamStore) -> Vec<(String, Mat)> {
        self.trainable
            .iter()
            .map(|(n, v)| {
                let g = grads.take(*v).unwrap_or_else(|| {
                    let m = params.expect(n);
                    Mat::zeros(m.rows(), m.cols())
                });
                (n.clone(), g)
            })
            .collect()
    }
}

/// `[T × d]` frames at a 20 ms hop.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Mat,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn hop(&self) -> f64 {
        HOP_SECONDS
    }
}

/// Per-block outputs (post-adapter when adapters are enabled).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub per_layer: Vec<Mat>,
}

pub fn waveform_leaf(tape: &mut Tape, w: &Waveform) -> Var {
    tape.constant(Mat::from_vec(w.len(), 1, w.samples.clone()))
}

/// Conv stack over a `samples × 1` column.
pub fn frontend_graph(tape: &mut Tape, b: &Bound, cfg: &ModelConfig, wave: Var) -> Result<Var> {
    let n = tape.value(wave).rows();
    if cfg.frames_for(n) == 0 {
        return Err(Error::TooShort { samples: n, needed: cfg.receptive_field() });
    }
    let mut x = wave;
    for (i, l) in cfg.conv.iter().enumerate() {
        let cols = tape.im2col(x, l.kernel, l.stride, 0);
        let y = tape.matmul(cols, b.var(&format!("frontend.conv{i}.weight")));
        x = tape.gelu(y);
    }
    Ok(x)
}

pub fn sinusoidal_table(t: usize, d: usize) -> Mat {
    Mat::from_fn(t, d, |pos, c| {
        let i = (c / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn conv_positions(tape: &mut Tape, b: &Bound, x: Var, kernel: usize, groups: usize) -> Var {
    let (t, d) = tape.value(x).shape();
    let dg = d / groups;
    let mut parts = Vec::with_capacity(groups);
    for g in 0..groups {
        let xg = tape.cols(x, g * dg, dg);
        let cols = tape.im2col(xg, kernel, 1, kernel / 2);
        parts.push(tape.matmul(cols, b.var(&format!("encoder.pos_conv.g{g:02}.weight"))));
    }
    let y = tape.concat_cols(&parts);
    let y = tape.add_row(y, b.var("encoder.pos_conv.bias"));
    let y = tape.rows(y, 0, t);
    let y = tape.gelu(y);
    tape.add(x, y)
}

pub fn attention_graph(tape: &mut Tape, b: &Bound, cfg: &ModelConfig, block: usize, a: Var) -> Var {
    attention_with_probs(tape, b, cfg, block, a).0
}

/// Multi-head self-attention; also returns the per-head attention matrices.
pub fn attention_with_probs(tape: &mut Tape, b: &Bound, cfg: &ModelConfig, block: usize, a: Var) -> (Var, Vec<Var>) {
    let q = tape.matmul(a, b.var(&block_name(block, "attn.wq")));
    let k = tape.matmul(a, b.var(&block_name(block, "attn.wk")));
    let v = tape.matmul(a, b.var(&block_name(block, "attn.wv")));
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut probs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = tape.cols(q, h * dh, dh);
        let kh = tape.cols(k, h * dh, dh);
        let vh = tape.cols(v, h * dh, dh);
        let s = tape.matmul_nt(qh, kh);
        let s = tape.scale(s, scale);
        let p = tape.softmax_rows(s);
        probs.push(p);
        heads.push(tape.matmul(p, vh));
    }
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
    (tape.matmul(cat, b.var(&block_name(block, "attn.wo"))), probs)
}

pub fn block_graph(tape: &mut Tape, b: &Bound, cfg: &ModelConfig, block: usize, x: Var) -> Var {
    let a = tape.layer_norm(x, b.var(&block_name(block, "ln1.gamma")), b.var(&block_name(block, "ln1.beta")));
    let att = attention_graph(tape, b, cfg, block, a);
    let h = tape.add(x, att);
    let f = tape.layer_norm(h, b.var(&block_name(block, "ln2.gamma")), b.var(&block_name(block, "ln2.beta")));
    let f = tape.matmul(f, b.var(&block_name(block, "ffn.w1")));
    let f = tape.add_row(f, b.var(&block_name(block, "ffn.b1")));
    let f = tape.gelu(f);
    let f = tape.matmul(f, b.var(&block_name(block, "ffn.w2")));
    let f = tape.add_row(f, b.var(&block_name(block, "ffn.b2")));
    tape.add(h, f)
}

pub fn adapter_graph(tape: &mut Tape, b: &Bound, block: usize, h: Var) -> Var {
    let n = tape.layer_norm(h, b.var(&adapter_name(block, "ln.gamma")), b.var(&adapter_name(block, "ln.beta")));
    let z = tape.matmul(n, b.var(&adapter_name(block, "down.weight")));
    let z = tape.add_row(z, b.var(&adapter_name(block, "down.bias")));
    let z = tape.relu(z);
    let z = tape.matmul(z, b.var(&adapter_name(block, "up.weight")));
    let z = tape.add_row(z, b.var(&adapter_name(block, "up.bias")));
    tape.add(h, z)
}

pub struct EncoderGraph {
    /// Input to block 0 (after masking and positions).
    pub block_input: Var,
    pub per_layer: Vec<Var>,
}

/// Masking (before positions), positions, then `N` blocks with optional adapters.
pub fn encoder_graph(
    tape: &mut Tape,
    b: &Bound,
    cfg: &ModelConfig,
    frames: Var,
    mask: Option<&MaskSet>,
    adapters_enabled: bool,
) -> Result<EncoderGraph> {
    let (t, d) = tape.value(frames).shape();
    if d != cfg.d {
        return Err(Error::Shape(format!("frames have width {d}, model expects {}", cfg.d)));
    }
    let mut x = frames;
    if let Some(m) = mask {
        if let Some(&bad) = m.indices().iter().find(|&&i| i >= t) {
            return Err(Error::MaskIndex { index: bad, frames: t });
        }
        if !m.is_empty() {
            x = tape.replace_rows(x, b.var("encoder.mask_emb"), m.indices());
        }
    }
    let pe = tape.constant(sinusoidal_table(t, d));
    x = tape.add(x, pe);
    if let PosEncoding::Conv { kernel, groups } = cfg.pos {
        x = conv_positions(tape, b, x, kernel, groups);
    }
    let block_input = x;
    if adapters_enabled && !b.has(&adapter_name(0, "up.weight")) {
        return Err(Error::Config("adapters enabled but the model has no adapter parameters".into()));
    }
    let mut per_layer = Vec::with_capacity(cfg.layers);
    for i in 0..cfg.layers {
        x = block_graph(tape, b, cfg, i, x);
        if adapters_enabled {
            x = adapter_graph(tape, b, i, x);
        }
        per_layer.push(x);
    }
    Ok(EncoderGraph { block_input, per_layer })
}

/// Final layer norm of the top block, as consumed by the SSL head.
pub fn top_graph(tape: &mut Tape, b: &Bound, enc: &EncoderGraph) -> Var {
    let last = *enc.per_layer.last().expect("at least one block");
    tape.layer_norm(last, b.var("encoder.final_ln.gamma"), b.var("encoder.final_ln.beta"))
}

pub fn frontend_forward(w: &Waveform, params: &ParamStore, cfg: &ModelConfig) -> Result<FrameSequence> {
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, params, FreezeSet::default());
    let wave = waveform_leaf(&mut tape, w);
    let out = frontend_graph(&mut tape, &b, cfg, wave)?;
    Ok(FrameSequence { frames: tape.value(out).clone() })
}

pub fn encoder_forward(
    x: &FrameSequence,
    params: &ParamStore,
    cfg: &ModelConfig,
    adapters_enabled: bool,
    mask: Option<&MaskSet>,
) -> Result<EncoderOutput> {
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, params, FreezeSet::default());
    let frames = tape.constant(x.frames.clone());
    let g = encoder_graph(&mut tape, &b, cfg, frames, mask, adapters_enabled)?;
    Ok(EncoderOutput { per_layer: g.per_layer.iter().map(|v| tape.value(*v).clone()).collect() })
}

/// Applies adapter `block` of `params` to `h` (no gradient tracking).
pub fn adapter_forward(h: &Mat, params: &ParamStore, block: usize) -> Result<Mat> {
    let down = params
        .get(&adapter_name(block, "down.weight"))
        .ok_or_else(|| Error::Config(format!("no adapter for block {block}")))?;
    if down.rows() != h.cols() {
        return Err(Error::Shape(format!("adapter width {} vs input width {}", down.rows(), h.cols())));
    }
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, params, FreezeSet::default());
    let x = tape.constant(h.clone());
    let y = adapter_graph(&mut tape, &b, block, x);
    Ok(tape.value(y).clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub frontend: u64,
    pub transformer: u64,
    pub projection: u64,
    pub adapter: u64,
    pub decoder: u64,
}

impl ParamReport {
    /// θ_f + θ_T + θ_A.
    pub fn base_total(&self) -> u64 {
        self.frontend + self.transformer + self.projection
    }

    /// θ_ada as a percentage of the base model.
    pub fn adapter_pct(&self) -> f64 {
        100.0 * self.adapter as f64 / self.base_total() as f64
    }

    pub fn get(&self, g: Group) -> u64 {
        match g {
            Group::Frontend => self.frontend,
            Group::Transformer => self.transformer,
            Group::Projection => self.projection,
            Group::Adapter => self.adapter,
            Group::Decoder => self.decoder,
        }
    }
}

/// Closed-form parameter counts per group.
pub fn count_params(cfg: &ModelConfig) -> ParamReport {
    let d = cfg.d as u64;
    let mut cin = 1u64;
    let mut frontend = 0;
    for l in &cfg.conv {
        frontend += l.kernel as u64 * cin * l.out_channels as u64;
        cin = l.out_channels as u64;
    }
    let ffn = cfg.ffn as u64;
    let block = 4 * d * d + 4 * d + d * ffn + ffn + ffn * d + d;
    let pos = match cfg.pos {
        PosEncoding::Sinusoidal => 0,
        PosEncoding::Conv { kernel, groups } => kernel as u64 * d * d / groups as u64 + d,
    };
    let transformer = cfg.layers as u64 * block + 2 * d + d + pos;
    let c = cfg.clusters as u64;
    let projection = d * c + c;
    let b = cfg.b_ada as u64;
    let adapter = if b == 0 { 0 } else { cfg.layers as u64 * (2 * d + d * b + b + b * d + d) };
    let h = cfg.lstm_hidden as u64;
    let mut decoder = cfg.layers as u64;
    let mut input = d;
    for _ in 0..cfg.lstm_layers {
        decoder += 2 * (input * 4 * h + h * 4 * h + 4 * h);
        input = 2 * h;
    }
    decoder += 2 * h * cfg.vocab as u64 + cfg.vocab as u64;
    ParamReport { frontend, transformer, projection, adapter, decoder }
}
