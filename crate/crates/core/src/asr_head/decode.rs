//! Best-path and prefix beam-search CTC decoding.

use std::collections::BTreeMap;

use super::lm::CharNgramLm;
use crate::autodiff::log_sum_exp;
use crate::tensor::Mat;
use crate::vocab::{self, BLANK};

/// Per-frame argmax (lowest index on ties), collapse repeats, drop blanks.
pub fn greedy_decode(logits: &Mat) -> String {
    let mut out = Vec::new();
    let mut prev = None;
    for t in 0..logits.rows() {
        let row = logits.row(t);
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        if Some(best) != prev && best != BLANK {
            out.push(best);
        }
        prev = Some(best);
    }
    vocab::decode_ids(&out)
}

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Clone, Copy)]
struct Entry {
    blank: f64,
    non_blank: f64,
    /// Accumulated `log P_lm` of the prefix.
    lm: f64,
}

impl Entry {
    fn empty() -> Self {
        Entry { blank: f64::NEG_INFINITY, non_blank: f64::NEG_INFINITY, lm: 0.0 }
    }

    fn total(&self) -> f64 {
        lse2(self.blank, self.non_blank)
    }
}

fn score(prefix: &[usize], e: &Entry, lm: Option<&CharNgramLm>) -> f64 {
    match lm {
        Some(lm) => e.total() + lm.lambda * e.lm + lm.beta * prefix.len() as f64,
        None => e.total(),
    }
}

/// Sort key: score descending, then lexicographic prefix.
fn rank(entries: BTreeMap<Vec<usize>, Entry>, lm: Option<&CharNgramLm>) -> Vec<(Vec<usize>, Entry, f64)> {
    let mut v: Vec<_> = entries
        .into_iter()
        .map(|(p, e)| {
            let s = score(&p, &e, lm);
            (p, e, s)
        })
        .filter(|(_, e, _)| e.total() > f64::NEG_INFINITY)
        .collect();
    v.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    v
}

/// CTC prefix beam search. With an LM, prefixes are ranked by
/// `log P_ctc + λ·log P_lm + β·|prefix|`.
pub fn beam_decode(logits: &Mat, beam_width: usize, lm: Option<&CharNgramLm>) -> String {
    let beam_width = beam_width.max(1);
    let v = logits.cols();
    let mut lp = logits.clone();
    for t in 0..lp.rows() {
        let z = log_sum_exp(logits.row(t));
        lp.row_mut(t).iter_mut().for_each(|x| *x -= z);
    }
    let mut beam: Vec<(Vec<usize>, Entry)> = vec![(Vec::new(), Entry { blank: 0.0, ..Entry::empty() })];
    for t in 0..lp.rows() {
        let row = lp.row(t);
        let mut next: BTreeMap<Vec<usize>, Entry> = BTreeMap::new();
        for (prefix, e) in &beam {
            let total = e.total();
            let stay = next.entry(prefix.clone()).or_insert(Entry { lm: e.lm, ..Entry::empty() });
            stay.blank = lse2(stay.blank, total + row[BLANK]);
            let last = prefix.last().copied();
            if let Some(l) = last {
                stay.non_blank = lse2(stay.non_blank, e.non_blank + row[l]);
            }
            let history: Vec<usize> = prefix.iter().map(|&id| id - 1).collect();
            for c in 1..v {
                let mass = if Some(c) == last { e.blank + row[c] } else { total + row[c] };
                if mass == f64::NEG_INFINITY {
                    continue;
                }
                let mut ext = prefix.clone();
                ext.push(c);
                let lm_step = lm.map_or(0.0, |m| m.log_prob(&history, c - 1));
                let slot = next.entry(ext).or_insert(Entry { lm: e.lm + lm_step, ..Entry::empty() });
                slot.non_blank = lse2(slot.non_blank, mass);
            }
        }
        beam = rank(next, lm).into_iter().take(beam_width).map(|(p, e, _)| (p, e)).collect();
    }
    beam.first().map(|(p, _)| vocab::decode_ids(p)).unwrap_or_default()
}
