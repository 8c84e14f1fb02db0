//! Flat `key=value` run configuration with dotted namespaces.
//!
//! Every accepted key appears in [`KEYS`]; anything else is rejected. Values
//! given as `--set` overrides win over the file. `auto` defers to the
//! stage-dependent default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data_io::{AccentSpec, ManifestRole};
use crate::encoder::{ConvLayer, ModelConfig, PosEncoding};
use crate::error::{Error, Result};
use crate::masking::MaskSpec;
use crate::units::FeatureSource;

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "master seed for every stochastic step"),
    ("model.d", "64", "model width"),
    ("model.N", "4", "transformer blocks"),
    ("model.heads", "4", "attention heads"),
    ("model.ffn", "256", "feed-forward width"),
    ("model.B_ada", "16", "adapter bottleneck (0 disables adapters)"),
    ("model.conv", "32:8:8,64:8:8,64:5:5", "frontend conv stack as out:kernel:stride"),
    ("model.pos", "sinusoidal", "positions: sinusoidal | conv:<kernel>:<groups>"),
    ("model.C", "32", "k-means clusters"),
    ("model.H", "64", "BiLSTM hidden size"),
    ("model.lstm_layers", "2", "stacked BiLSTM layers"),
    ("mask.span", "10", "mask span length l"),
    ("mask.start_prob", "0.065", "per-frame span start probability p"),
    ("units.feature_source", "auto", "frontend | layer:<l> (auto = layer N/2)"),
    ("units.max_iters", "50", "Lloyd iterations"),
    ("units.max_points", "20000", "frames sampled for k-means"),
    ("units.warm_steps", "40", "pretrain steps on frontend targets before the layer codebook"),
    ("stage.adapt_mode", "adapters", "adapt mode: full | adapters"),
    ("stage.peak_lr", "auto", "peak learning rate"),
    ("stage.warmup_steps", "auto", "linear warmup steps"),
    ("stage.decay", "auto", "polynomial | constant"),
    ("stage.power", "1", "polynomial decay power"),
    ("stage.max_steps", "auto", "optimizer steps (pretrain/adapt)"),
    ("stage.max_frames_per_batch", "auto", "frame budget per batch"),
    ("stage.epochs", "20", "fine-tune epoch cap"),
    ("stage.stop_threshold", "1e-3", "fine-tune relative loss-decrease stop threshold"),
    ("stage.eval_every", "auto", "validation cadence in steps"),
    ("stage.adam_beta1", "0.9", "Adam beta1"),
    ("stage.adam_beta2", "0.98", "Adam beta2"),
    ("stage.adam_eps", "1e-6", "Adam epsilon"),
    ("stage.weight_decay", "0", "decoupled weight decay"),
    ("data.val_fraction", "0.1", "held-out share of SSL manifests"),
    ("data.utterances", "100", "synth-data: utterance count"),
    ("data.min_words", "2", "synth-data: words per utterance (min)"),
    ("data.max_words", "4", "synth-data: words per utterance (max)"),
    ("data.text_seed", "0", "synth-data: transcript sampling seed"),
    ("data.role", "generic_unlabeled", "synth-data: manifest role"),
    ("data.accent", "canonical", "synth-data: accent id"),
    ("data.formant_factor", "1", "synth-data: tone frequency multiplier"),
    ("data.rate_factor", "1", "synth-data: per-character duration multiplier"),
    ("data.tilt", "0", "synth-data: one-pole spectral tilt"),
    ("data.snr_db", "inf", "synth-data: additive noise SNR"),
    ("decode.method", "beam", "greedy | beam"),
    ("decode.beam_width", "8", "prefix beam width"),
    ("decode.lm_weight", "0.3", "shallow-fusion weight lambda"),
    ("decode.length_bonus", "0.5", "per-character bonus beta"),
    ("decode.lm_order", "4", "character n-gram order"),
    ("decode.lm_k", "0.5", "add-k smoothing constant"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Adapt,
    Finetune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Adapt => "adapt",
            Stage::Finetune => "finetune",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdaptMode {
    Full,
    Adapters,
}

impl FromStr for AdaptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AdaptMode::Full),
            "adapters" => Ok(AdaptMode::Adapters),
            _ => Err(Error::Config(format!("adapt mode must be full or adapters, got `{s}`"))),
        }
    }
}

impl AdaptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AdaptMode::Full => "full",
            AdaptMode::Adapters => "adapters",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decay {
    PolynomialToZero(f64),
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.98, eps: 1e-6, weight_decay: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub stage: Stage,
    pub adapt_mode: AdaptMode,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub decay: Decay,
    /// For fine-tuning this is recomputed as `epochs × batches per epoch`.
    pub max_steps: usize,
    pub max_frames_per_batch: usize,
    pub epochs: usize,
    pub stop_threshold: f64,
    pub eval_every: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl StageConfig {
    /// Desk-scale defaults. Adapt schedules keep the warmup ratios 20k/150k
    /// (full) and 75k/150k (adapters).
    pub fn defaults(stage: Stage, mode: AdaptMode) -> Self {
        let (peak_lr, max_steps, warmup_frac, decay, eval_every) = match (stage, mode) {
            (Stage::Pretrain, _) => (1e-3, 300, 0.08, Decay::PolynomialToZero(1.0), 50),
            (Stage::Adapt, AdaptMode::Full) => (2e-4, 150, 0.13, Decay::PolynomialToZero(1.0), 25),
            (Stage::Adapt, AdaptMode::Adapters) => (1e-3, 150, 0.5, Decay::PolynomialToZero(1.0), 25),
            (Stage::Finetune, _) => (3e-3, 1, 0.0, Decay::Constant, 1),
        };
        // Fine-tuning uses small utterance batches, the SSL stages a large
        // frame budget.
        let max_frames_per_batch = if stage == Stage::Finetune { 512 } else { 2000 };
        Self {
            stage,
            adapt_mode: mode,
            peak_lr,
            warmup_steps: (warmup_frac * max_steps as f64).round() as usize,
            decay,
            max_steps,
            max_frames_per_batch,
            epochs: 20,
            stop_threshold: 1e-3,
            eval_every,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0) {
            return Err(Error::Config(format!("stage.peak_lr must be positive, got {}", self.peak_lr)));
        }
        if self.warmup_steps > self.max_steps {
            return Err(Error::Config(format!(
                "stage.warmup_steps {} exceeds stage.max_steps {}",
                self.warmup_steps, self.max_steps
            )));
        }
        if !(self.stop_threshold > 0.0) {
            return Err(Error::Config("stage.stop_threshold must be positive".into()));
        }
        if self.max_frames_per_batch == 0 || self.eval_every == 0 {
            return Err(Error::Config("stage.max_frames_per_batch and stage.eval_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitsConfig {
    pub feature_source: FeatureSource,
    pub max_iters: usize,
    pub max_points: usize,
    pub warm_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    pub beam: bool,
    pub beam_width: usize,
    pub lm_weight: f64,
    pub length_bonus: f64,
    pub lm_order: usize,
    pub lm_k: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub spec: AccentSpec,
    pub utterances: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub text_seed: u64,
    pub role: ManifestRole,
}

/// Raw key/value map with defaults filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect() }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::UnknownKey(key.to_string())),
        }
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut c = Config::default();
        if let Some(p) = path {
            if !p.exists() {
                return Err(Error::MissingFile(p.to_path_buf()));
            }
            c.apply_text(&std::fs::read_to_string(p)?)?;
        }
        for o in overrides {
            c.apply_override(o)?;
        }
        Ok(c)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        parse(key, self.raw(key))
    }

    fn auto<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            "auto" => Ok(default),
            v => parse(key, v),
        }
    }

    /// Canonical `key=value` listing of every key, sorted.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let conv = self
            .raw("model.conv")
            .split(',')
            .map(|spec| {
                let parts: Vec<usize> = spec.split(':').map(|p| parse("model.conv", p.trim())).collect::<Result<_>>()?;
                match parts[..] {
                    [out_channels, kernel, stride] => Ok(ConvLayer { out_channels, kernel, stride }),
                    _ => Err(Error::Config(format!("model.conv entry `{spec}` is not out:kernel:stride"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let pos = match self.raw("model.pos") {
            "sinusoidal" => PosEncoding::Sinusoidal,
            other => {
                let parts: Vec<&str> = other.split(':').collect();
                match parts[..] {
                    ["conv", k, g] => PosEncoding::Conv { kernel: parse("model.pos", k)?, groups: parse("model.pos", g)? },
                    _ => return Err(Error::Config(format!("model.pos `{other}` not understood"))),
                }
            }
        };
        let m = ModelConfig {
            d: self.get("model.d")?,
            layers: self.get("model.N")?,
            heads: self.get("model.heads")?,
            ffn: self.get("model.ffn")?,
            b_ada: self.get("model.B_ada")?,
            conv,
            pos,
            clusters: self.get("model.C")?,
            lstm_hidden: self.get("model.H")?,
            lstm_layers: self.get("model.lstm_layers")?,
            ..ModelConfig::default()
        };
        m.validate()?;
        Ok(m)
    }

    /// Writes `m` back into the `model.*` keys.
    pub fn set_model(&mut self, m: &ModelConfig) {
        let conv: Vec<String> = m.conv.iter().map(|l| format!("{}:{}:{}", l.out_channels, l.kernel, l.stride)).collect();
        let pos = match m.pos {
            PosEncoding::Sinusoidal => "sinusoidal".to_string(),
            PosEncoding::Conv { kernel, groups } => format!("conv:{kernel}:{groups}"),
        };
        for (k, v) in [
            ("model.d", m.d.to_string()),
            ("model.N", m.layers.to_string()),
            ("model.heads", m.heads.to_string()),
            ("model.ffn", m.ffn.to_string()),
            ("model.B_ada", m.b_ada.to_string()),
            ("model.conv", conv.join(",")),
            ("model.pos", pos),
            ("model.C", m.clusters.to_string()),
            ("model.H", m.lstm_hidden.to_string()),
            ("model.lstm_layers", m.lstm_layers.to_string()),
        ] {
            self.values.insert(k.to_string(), v);
        }
    }

    pub fn mask(&self) -> Result<MaskSpec> {
        let m = MaskSpec { span: self.get("mask.span")?, start_prob: self.get("mask.start_prob")? };
        m.validate()?;
        Ok(m)
    }

    pub fn units(&self, model: &ModelConfig) -> Result<UnitsConfig> {
        let feature_source = match self.raw("units.feature_source") {
            "auto" => FeatureSource::Layer((model.layers / 2).max(1)),
            v => v.parse()?,
        };
        if let FeatureSource::Layer(l) = feature_source {
            if l > model.layers {
                return Err(Error::Config(format!("units.feature_source layer {l} exceeds model.N={}", model.layers)));
            }
        }
        Ok(UnitsConfig {
            feature_source,
            max_iters: self.get("units.max_iters")?,
            max_points: self.get("units.max_points")?,
            warm_steps: self.get("units.warm_steps")?,
        })
    }

    pub fn stage(&self, stage: Stage) -> Result<StageConfig> {
        let mode: AdaptMode = self.get("stage.adapt_mode")?;
        let d = StageConfig::defaults(stage, mode);
        let max_steps = self.auto("stage.max_steps", d.max_steps)?;
        let default_warmup = if self.raw("stage.max_steps") == "auto" {
            d.warmup_steps
        } else {
            (d.warmup_steps as f64 / d.max_steps as f64 * max_steps as f64).round() as usize
        };
        let decay = match self.raw("stage.decay") {
            "auto" => match d.decay {
                Decay::PolynomialToZero(_) => Decay::PolynomialToZero(self.get("stage.power")?),
                c => c,
            },
            "polynomial" => Decay::PolynomialToZero(self.get("stage.power")?),
            "constant" => Decay::Constant,
            v => return Err(Error::Config(format!("stage.decay `{v}` is not polynomial or constant"))),
        };
        let s = StageConfig {
            stage,
            adapt_mode: mode,
            peak_lr: self.auto("stage.peak_lr", d.peak_lr)?,
            warmup_steps: self.auto("stage.warmup_steps", default_warmup)?,
            decay,
            max_steps,
            max_frames_per_batch: self.auto("stage.max_frames_per_batch", d.max_frames_per_batch)?,
            epochs: self.get("stage.epochs")?,
            stop_threshold: self.get("stage.stop_threshold")?,
            eval_every: self.auto("stage.eval_every", d.eval_every)?,
            seed: self.seed()?,
            adam: AdamConfig {
                beta1: self.get("stage.adam_beta1")?,
                beta2: self.get("stage.adam_beta2")?,
                eps: self.get("stage.adam_eps")?,
                weight_decay: self.get("stage.weight_decay")?,
            },
        };
        s.validate()?;
        Ok(s)
    }

    pub fn val_fraction(&self) -> Result<f64> {
        let v: f64 = self.get("data.val_fraction")?;
        if !(0.0..1.0).contains(&v) {
            return Err(Error::Config(format!("data.val_fraction {v} outside [0, 1)")));
        }
        Ok(v)
    }

    pub fn decode(&self) -> Result<DecodeConfig> {
        let beam = match self.raw("decode.method") {
            "beam" => true,
            "greedy" => false,
            v => return Err(Error::Config(format!("decode.method `{v}` is not greedy or beam"))),
        };
        Ok(DecodeConfig {
            beam,
            beam_width: self.get("decode.beam_width")?,
            lm_weight: self.get("decode.lm_weight")?,
            length_bonus: self.get("decode.length_bonus")?,
            lm_order: self.get("decode.lm_order")?,
            lm_k: self.get("decode.lm_k")?,
        })
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let spec = AccentSpec {
            accent_id: self.raw("data.accent").to_string(),
            formant_factor: self.get("data.formant_factor")?,
            rate_factor: self.get("data.rate_factor")?,
            tilt: self.get("data.tilt")?,
            snr_db: self.get("data.snr_db")?,
            seed: self.seed()?,
        };
        spec.validate()?;
        let s = SynthConfig {
            spec,
            utterances: self.get("data.utterances")?,
            min_words: self.get("data.min_words")?,
            max_words: self.get("data.max_words")?,
            text_seed: self.get("data.text_seed")?,
            role: self.get("data.role")?,
        };
        if s.min_words == 0 || s.min_words > s.max_words {
            return Err(Error::Config("data.min_words must be in 1..=data.max_words".into()));
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = Config::default();
        assert_eq!(c.model().unwrap(), ModelConfig::default());
        assert_eq!(c.mask().unwrap(), MaskSpec::default());
        let u = c.units(&c.model().unwrap()).unwrap();
        assert_eq!(u.feature_source, FeatureSource::Layer(2));
        let a = c.stage(Stage::Adapt).unwrap();
        assert_eq!((a.warmup_steps, a.max_steps), (75, 150));
    }

    #[test]
    fn overrides_beat_file_values() {
        let mut c = Config::default();
        c.apply_text("model.d = 32\n# comment\nmodel.conv=32:8:8,32:8:8,32:5:5\n").unwrap();
        c.apply_override("model.d=64").unwrap();
        assert_eq!(c.raw("model.d"), "64");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(Config::default().apply_override("model.depth=3"), Err(Error::UnknownKey(_))));
        assert!(Config::default().apply_text("bogus=1").is_err());
    }

    #[test]
    fn model_round_trips_through_keys() {
        let mut c = Config::default();
        let m = ModelConfig::hubert_large();
        c.set_model(&m);
        assert_eq!(c.model().unwrap(), m);
    }

    #[test]
    fn scaled_warmup_keeps_ratio() {
        let mut c = Config::default();
        c.apply_override("stage.max_steps=40").unwrap();
        c.apply_override("stage.adapt_mode=full").unwrap();
        assert_eq!(c.stage(Stage::Adapt).unwrap().warmup_steps, 5);
    }

    #[test]
    fn resolved_listing_is_sorted_and_complete() {
        let text = Config::default().resolved();
        assert_eq!(text.lines().count(), KEYS.len());
        let mut again = Config::default();
        again.apply_text(&text).unwrap();
        assert_eq!(again, Config::default());
    }
}
