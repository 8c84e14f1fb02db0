//! Downstream ASR head: softmax-weighted layer sum, stacked BiLSTM, CTC loss
//! and decoding.

pub mod ctc;
pub mod decode;
pub mod lm;

use rand::Rng;

use crate::autodiff::{softmax_in_place, Tape, Var};
use crate::encoder::{init_uniform, Bound, EncoderOutput, ModelConfig};
use crate::error::{Error, Result};
use crate::params::{normal, FreezeSet, ParamStore};
use crate::tensor::Mat;

pub use ctc::{ctc_loss, ctc_loss_with_grad, CtcLoss};
pub use decode::{beam_decode, greedy_decode};
pub use lm::CharNgramLm;

pub const LAYER_WEIGHTS: &str = "decoder.layer_weights";

pub fn lstm_name(layer: usize, dir: &str, leaf: &str) -> String {
    format!("decoder.lstm{layer}.{dir}.{leaf}")
}

/// Initializes θ_d: uniform layer weights, BiLSTM stack, output projection.
pub fn init_decoder(cfg: &ModelConfig, rng: &mut impl Rng) -> ParamStore {
    let mut p = ParamStore::new();
    p.insert(LAYER_WEIGHTS, Mat::zeros(1, cfg.layers));
    let h = cfg.lstm_hidden;
    let bound = 1.0 / (h as f64).sqrt();
    let mut input = cfg.d;
    for l in 0..cfg.lstm_layers {
        for dir in ["fwd", "bwd"] {
            p.insert(lstm_name(l, dir, "w_ih"), init_uniform(input, 4 * h, bound, rng));
            p.insert(lstm_name(l, dir, "w_hh"), init_uniform(h, 4 * h, bound, rng));
            // Forget-gate bias starts at 1.
            p.insert(lstm_name(l, dir, "bias"), Mat::from_fn(1, 4 * h, |_, c| if (h..2 * h).contains(&c) { 1.0 } else { 0.0 }));
        }
        input = 2 * h;
    }
    p.insert("decoder.out.weight", normal(2 * h, cfg.vocab, (1.0 / (2 * h) as f64).sqrt(), rng));
    p.insert("decoder.out.bias", Mat::zeros(1, cfg.vocab));
    p
}

/// Effective (softmax-normalized) layer weights.
pub fn effective_weights(raw: &[f64]) -> Vec<f64> {
    let mut w = raw.to_vec();
    softmax_in_place(&mut w);
    w
}

/// `Σ_i softmax(raw)_i · per_layer[i]`.
pub fn weighted_sum(out: &EncoderOutput, raw: &[f64]) -> Result<Mat> {
    if out.per_layer.len() != raw.len() || raw.is_empty() {
        return Err(Error::Shape(format!("{} layers vs {} weights", out.per_layer.len(), raw.len())));
    }
    let w = effective_weights(raw);
    let (t, d) = out.per_layer[0].shape();
    let mut acc = Mat::zeros(t, d);
    for (layer, wi) in out.per_layer.iter().zip(&w) {
        if layer.shape() != (t, d) {
            return Err(Error::Shape("layer outputs differ in shape".into()));
        }
        for (a, v) in acc.data_mut().iter_mut().zip(layer.data()) {
            *a += wi * v;
        }
    }
    Ok(acc)
}

pub fn weighted_sum_graph(tape: &mut Tape, b: &Bound, layers: &[Var]) -> Var {
    let w = tape.softmax_rows(b.var(LAYER_WEIGHTS));
    let mut acc = tape.scale_by(layers[0], w, 0);
    for (i, l) in layers.iter().enumerate().skip(1) {
        let s = tape.scale_by(*l, w, i);
        acc = tape.add(acc, s);
    }
    acc
}

/// Stacked BiLSTM followed by the affine projection to vocabulary logits.
pub fn bilstm_graph(tape: &mut Tape, b: &Bound, cfg: &ModelConfig, x: Var) -> Var {
    let mut h = x;
    for l in 0..cfg.lstm_layers {
        let f = tape.lstm(
            h,
            b.var(&lstm_name(l, "fwd", "w_ih")),
            b.var(&lstm_name(l, "fwd", "w_hh")),
            b.var(&lstm_name(l, "fwd", "bias")),
            false,
        );
        let r = tape.lstm(
            h,
            b.var(&lstm_name(l, "bwd", "w_ih")),
            b.var(&lstm_name(l, "bwd", "w_hh")),
            b.var(&lstm_name(l, "bwd", "bias")),
            true,
        );
        h = tape.concat_cols(&[f, r]);
    }
    let y = tape.matmul(h, b.var("decoder.out.weight"));
    tape.add_row(y, b.var("decoder.out.bias"))
}

pub fn bilstm_forward(x: &Mat, params: &ParamStore, cfg: &ModelConfig) -> Result<Mat> {
    if x.rows() == 0 {
        return Err(Error::Shape("BiLSTM input has no frames".into()));
    }
    let w = params.get(&lstm_name(0, "fwd", "w_ih")).ok_or_else(|| Error::Config("decoder not initialized".into()))?;
    if w.rows() != x.cols() {
        return Err(Error::Shape(format!("BiLSTM expects width {}, got {}", w.rows(), x.cols())));
    }
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, params, FreezeSet::default());
    let xv = tape.constant(x.clone());
    let y = bilstm_graph(&mut tape, &b, cfg, xv);
    Ok(tape.value(y).clone())
}

/// Encoder layers → weighted sum → BiLSTM → logits.
pub fn decoder_logits(out: &EncoderOutput, params: &ParamStore, cfg: &ModelConfig) -> Result<Mat> {
    let raw = params.get(LAYER_WEIGHTS).ok_or_else(|| Error::Config("decoder not initialized".into()))?;
    let x = weighted_sum(out, raw.data())?;
    bilstm_forward(&x, params, cfg)
}
