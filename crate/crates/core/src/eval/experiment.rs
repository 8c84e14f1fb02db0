//! Desk-scale accent experiment: pretrain on canonical audio, adapt on an
//! unlabeled shifted accent, fine-tune every encoder on labeled canonical
//! data and score all of them on a held-out shifted eval set.

use std::path::Path;

use serde::Serialize;

use super::{experiment_report, Report};
use crate::asr_head::lm::fit_char_ngram;
use crate::config::{AdaptMode, Config};
use crate::data_io::{generate_texts, synth_corpus, AccentSpec, Manifest, ManifestRole};
use crate::error::{Error, Result};
use crate::pipeline::{run_adapt, run_finetune, run_pretrain, StageOutput};

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub canonical_utterances: usize,
    pub shifted_utterances: usize,
    pub eval_utterances: usize,
    pub formant_factor: f64,
    pub rate_factor: f64,
    pub tilt: f64,
    /// `key=value` overrides applied on top of the defaults.
    pub overrides: Vec<String>,
    /// Extra overrides for the two SSL stages only.
    pub ssl_overrides: Vec<String>,
}

impl ExperimentSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            canonical_utterances: 500,
            shifted_utterances: 300,
            eval_utterances: 100,
            formant_factor: 1.25,
            rate_factor: 1.2,
            tilt: 0.4,
            overrides: Vec::new(),
            ssl_overrides: vec!["stage.max_frames_per_batch=1000".into()],
        }
    }

    fn shifted(&self, seed: u64) -> AccentSpec {
        AccentSpec {
            accent_id: "shifted".into(),
            formant_factor: self.formant_factor,
            rate_factor: self.rate_factor,
            tilt: self.tilt,
            snr_db: f64::INFINITY,
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Accent-val SSL loss of the pretrained encoder.
    pub val_ssl_baseline: f64,
    pub val_ssl_full: f64,
    pub val_ssl_adapters: f64,
    pub wer_baseline: f64,
    pub wer_full: f64,
    pub wer_adapters: f64,
    pub werr_full: Option<f64>,
    pub werr_adapters: Option<f64>,
    pub report: Report,
}

fn val_at(out: &StageOutput, step: usize) -> Result<f64> {
    out.metrics
        .iter()
        .find(|m| m.split == "adapt.val" && m.metric == "ssl_loss" && m.step == step)
        .map(|m| m.value)
        .ok_or_else(|| Error::Data(format!("no accent-val loss at step {step}")))
}

/// Runs one seed end to end; corpora are written under `work`.
pub fn run_seed(spec: &ExperimentSpec, work: &Path) -> Result<SeedOutcome> {
    let mut cfg = Config::default();
    for o in &spec.overrides {
        cfg.apply_override(o)?;
    }
    cfg.set("seed", &spec.seed.to_string())?;
    let mut ssl = cfg.clone();
    for o in &spec.ssl_overrides {
        ssl.apply_override(o)?;
    }
    let s = spec.seed;
    let synth = cfg.synth()?;
    let (min_w, max_w) = (synth.min_words, synth.max_words);

    let canon_texts = generate_texts(spec.canonical_utterances, s * 7 + 1, min_w, max_w);
    let labeled = synth_corpus(&AccentSpec::canonical(s * 7 + 1), &canon_texts, ManifestRole::Labeled, &work.join("canonical"))?;
    let mut generic = labeled.clone();
    generic.role = ManifestRole::GenericUnlabeled;
    generic.utterances.iter_mut().for_each(|u| u.transcript = None);

    let shift_texts = generate_texts(spec.shifted_utterances, s * 7 + 2, min_w, max_w);
    let shifted = synth_corpus(&spec.shifted(s * 7 + 2), &shift_texts, ManifestRole::AccentUnlabeled, &work.join("shifted"))?;
    let eval_texts = generate_texts(spec.eval_utterances, s * 7 + 3, min_w, max_w);
    let eval = synth_corpus(&spec.shifted(s * 7 + 3), &eval_texts, ManifestRole::Eval, &work.join("shifted-eval"))?;

    let base = run_pretrain(&ssl, &generic)?.best;
    let full = run_adapt(&ssl, &base, &shifted, AdaptMode::Full)?;
    let ada = run_adapt(&ssl, &base, &shifted, AdaptMode::Adapters)?;

    let tuned_base = run_finetune(&cfg, &base, &labeled)?.best;
    let tuned_full = run_finetune(&cfg, &full.best, &labeled)?.best;
    let tuned_ada = run_finetune(&cfg, &ada.best, &labeled)?.best;

    let d = cfg.decode()?;
    let lm = fit_char_ngram(&canon_texts, d.lm_order, d.lm_k)?;
    let evals: [(&str, &Manifest); 1] = [("shifted", &eval)];
    let report = experiment_report(
        ("baseline", &tuned_base),
        &[("full", &tuned_full), ("adapters", &tuned_ada)],
        &evals,
        &d,
        Some(&lm),
    )?;
    let row = |c: &str| report.row(c, "shifted").expect("every pair is scored").clone();
    let (rb, rf, ra) = (row("baseline"), row("full"), row("adapters"));
    Ok(SeedOutcome {
        seed: s,
        val_ssl_baseline: val_at(&ada, 0)?,
        val_ssl_full: val_at(&full, full.best_step)?,
        val_ssl_adapters: val_at(&ada, ada.best_step)?,
        wer_baseline: rb.wer.wer,
        wer_full: rf.wer.wer,
        wer_adapters: ra.wer.wer,
        werr_full: rf.werr_pct,
        werr_adapters: ra.werr_pct,
        report,
    })
}

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
