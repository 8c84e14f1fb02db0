//! WER/WERR, decoding of whole manifests and the comparison report.

pub mod experiment;
pub mod gradcheck;

use std::fmt::Write as _;

use serde::Serialize;

use crate::asr_head::{beam_decode, decoder_logits, greedy_decode, CharNgramLm};
use crate::config::DecodeConfig;
use crate::data_io::Manifest;
use crate::error::{Error, Result};
use crate::params::Group;
use crate::pipeline::stages::encode_waveform;
use crate::pipeline::Checkpoint;

pub use gradcheck::{gradcheck, GradcheckReport, COMPONENTS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct WerResult {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_words: usize,
    pub wer: f64,
}

impl WerResult {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Corpus-level pooling: total edits over total reference words.
    pub fn pool<'a>(items: impl IntoIterator<Item = &'a WerResult>) -> WerResult {
        let mut p = WerResult::default();
        for r in items {
            p.substitutions += r.substitutions;
            p.deletions += r.deletions;
            p.insertions += r.insertions;
            p.ref_words += r.ref_words;
        }
        p.wer = if p.ref_words == 0 { 0.0 } else { p.edits() as f64 / p.ref_words as f64 };
        p
    }
}

/// Splits on single spaces after collapsing runs of spaces.
pub fn words(text: &str) -> Vec<&str> {
    text.split(' ').filter(|w| !w.is_empty()).collect()
}

/// Minimum-edit alignment with unit costs. Among equal-cost alignments the
/// one with fewer insertions wins, then the one with fewer deletions.
pub fn wer(reference: &[&str], hypothesis: &[&str]) -> Result<WerResult> {
    if reference.is_empty() {
        return Err(Error::Data("WER needs a non-empty reference".into()));
    }
    // (cost, insertions, deletions, substitutions), compared lexicographically
    // on the first three.
    type Cell = (usize, usize, usize, usize);
    let key = |c: &Cell| (c.0, c.1, c.2);
    let (n, m) = (reference.len(), hypothesis.len());
    let mut prev: Vec<Cell> = (0..=m).map(|j| (j, j, 0, 0)).collect();
    for i in 1..=n {
        let mut cur: Vec<Cell> = vec![(i, 0, i, 0); m + 1];
        for j in 1..=m {
            let diag = prev[j - 1];
            let same = reference[i - 1] == hypothesis[j - 1];
            let sub = if same { diag } else { (diag.0 + 1, diag.1, diag.2, diag.3 + 1) };
            let del = (prev[j].0 + 1, prev[j].1, prev[j].2 + 1, prev[j].3);
            let ins = (cur[j - 1].0 + 1, cur[j - 1].1 + 1, cur[j - 1].2, cur[j - 1].3);
            cur[j] = [sub, del, ins].into_iter().min_by_key(key).unwrap();
        }
        prev = cur;
    }
    let (cost, ins, del, sub) = prev[m];
    Ok(WerResult { substitutions: sub, deletions: del, insertions: ins, ref_words: n, wer: cost as f64 / n as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WerrResult {
    pub wer_base: f64,
    pub wer_new: f64,
    pub werr_pct: f64,
}

/// Relative WER reduction `100·(base − new)/base`.
pub fn werr(wer_base: f64, wer_new: f64) -> Result<WerrResult> {
    if !(wer_base > 0.0) {
        return Err(Error::Data(format!("WERR needs a positive baseline WER, got {wer_base}")));
    }
    Ok(WerrResult { wer_base, wer_new, werr_pct: 100.0 * (wer_base - wer_new) / wer_base })
}

/// Decodes every utterance of `manifest`; returns `(id, hypothesis)` in
/// manifest order.
pub fn decode_manifest(
    ckpt: &Checkpoint,
    manifest: &Manifest,
    decode: &DecodeConfig,
    lm: Option<&CharNgramLm>,
) -> Result<Vec<(String, String)>> {
    if !ckpt.params.has_group(Group::Decoder) {
        return Err(Error::Config("checkpoint has no fine-tuned decoder".into()));
    }
    let lm = lm.cloned().map(|l| l.with_fusion(decode.lm_weight, decode.length_bonus));
    manifest
        .utterances
        .iter()
        .map(|u| {
            let out = encode_waveform(ckpt, &u.load_audio()?)?;
            let logits = decoder_logits(&out, &ckpt.params, &ckpt.model)?;
            let hyp = if decode.beam { beam_decode(&logits, decode.beam_width, lm.as_ref()) } else { greedy_decode(&logits) };
            Ok((u.id.clone(), hyp))
        })
        .collect()
}

/// WER of hypotheses against the manifest's transcripts, pooled.
pub fn score(manifest: &Manifest, hyps: &[(String, String)]) -> Result<WerResult> {
    let per: Vec<WerResult> = manifest
        .utterances
        .iter()
        .zip(hyps)
        .map(|(u, (id, h))| {
            debug_assert_eq!(&u.id, id);
            let r = u.transcript.as_deref().ok_or_else(|| Error::Data(format!("`{}` has no transcript", u.id)))?;
            wer(&words(r), &words(h))
        })
        .collect::<Result<_>>()?;
    Ok(WerResult::pool(&per))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub checkpoint: String,
    pub manifest: String,
    pub wer: WerResult,
    /// Against the baseline on the same manifest; absent when the baseline
    /// WER is zero.
    pub werr_pct: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("checkpoint\tmanifest\tS\tD\tI\tref_words\twer\twerr_pct\n");
        for r in &self.rows {
            let werr = r.werr_pct.map_or("NA".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}",
                r.checkpoint, r.manifest, r.wer.substitutions, r.wer.deletions, r.wer.insertions, r.wer.ref_words, r.wer.wer, werr
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn row(&self, checkpoint: &str, manifest: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.checkpoint == checkpoint && r.manifest == manifest)
    }
}

/// Decodes every manifest with the baseline and each other checkpoint and
/// tabulates WER plus WERR against the baseline.
pub fn experiment_report(
    baseline: (&str, &Checkpoint),
    others: &[(&str, &Checkpoint)],
    evals: &[(&str, &Manifest)],
    decode: &DecodeConfig,
    lm: Option<&CharNgramLm>,
) -> Result<Report> {
    let vocab = baseline.1.model.vocab;
    if let Some((name, _)) = others.iter().find(|(_, c)| c.model.vocab != vocab) {
        return Err(Error::Config(format!("checkpoint `{name}` uses a different vocabulary")));
    }
    let mut report = Report::default();
    for (mname, manifest) in evals {
        let base = score(manifest, &decode_manifest(baseline.1, manifest, decode, lm)?)?;
        let werr_of = |w: &WerResult| werr(base.wer, w.wer).ok().map(|r| r.werr_pct);
        report.rows.push(ReportRow {
            checkpoint: baseline.0.to_string(),
            manifest: mname.to_string(),
            wer: base,
            werr_pct: werr_of(&base),
        });
        for (cname, ckpt) in others {
            let w = score(manifest, &decode_manifest(ckpt, manifest, decode, lm)?)?;
            report.rows.push(ReportRow {
                checkpoint: cname.to_string(),
                manifest: mname.to_string(),
                werr_pct: werr_of(&w),
                wer: w,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_substituted() {
        assert_eq!(wer(&["a", "b"], &["a", "b"]).unwrap().wer, 0.0);
        let r = wer(&["a", "b", "c"], &["a", "x", "c"]).unwrap();
        assert_eq!((r.substitutions, r.deletions, r.insertions), (1, 0, 0));
        assert!((r.wer - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_hypothesis_is_all_deletions() {
        let r = wer(&["a", "b", "c", "d"], &[]).unwrap();
        assert_eq!((r.deletions, r.wer), (4, 1.0));
    }

    #[test]
    fn insertions_can_push_wer_past_one() {
        let r = wer(&["a"], &["b", "c", "d"]).unwrap();
        assert_eq!(r.edits(), 3);
        assert_eq!(r.wer, 3.0);
    }

    #[test]
    fn ties_prefer_substitutions_over_insert_delete_pairs() {
        // "a b" vs "b a": two substitutions or one deletion + one insertion
        // both cost 2; fewer insertions wins.
        let r = wer(&["a", "b"], &["b", "a"]).unwrap();
        assert_eq!((r.substitutions, r.insertions, r.deletions), (2, 0, 0));
    }

    #[test]
    fn empty_reference_is_rejected() {
        assert!(wer(&[], &["a"]).is_err());
    }

    #[test]
    fn tokenization_collapses_spaces() {
        assert_eq!(words("  the  cat "), vec!["the", "cat"]);
    }

    #[test]
    fn werr_values() {
        assert_eq!(werr(7.5, 7.5).unwrap().werr_pct, 0.0);
        assert_eq!(werr(50.0, 0.0).unwrap().werr_pct, 100.0);
        assert!(werr(0.0, 1.0).is_err());
        assert!(werr(-1.0, 1.0).is_err());
    }
}
