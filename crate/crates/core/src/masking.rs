//! Span masking: the masked index set `M` and the corruption `r(X, M)`.

use rand::Rng;

use crate::encoder::FrameSequence;
use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskSpec {
    /// Span length `l ≥ 1`.
    pub span: usize,
    /// Probability that a frame starts a span.
    pub start_prob: f64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self { span: 10, start_prob: 0.065 }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.span == 0 || !(0.0..=1.0).contains(&self.start_prob) {
            return Err(Error::Config(format!("mask span {} / start prob {} invalid", self.span, self.start_prob)));
        }
        Ok(())
    }

    /// Span shortened for short utterances: `min(l, max(1, T/5))`.
    pub fn scaled_for(&self, frames: usize) -> MaskSpec {
        MaskSpec { span: self.span.min((frames / 5).max(1)), ..*self }
    }
}

/// Sorted, de-duplicated frame indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskSet {
    indices: Vec<usize>,
}

impl MaskSet {
    pub fn from_indices(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.indices.binary_search(&t).is_ok()
    }
}

/// Union of spans `{s, …, min(s + l, T) − 1}` over independently drawn starts.
pub fn sample_mask(frames: usize, spec: &MaskSpec, rng: &mut impl Rng) -> MaskSet {
    let mut hit = vec![false; frames];
    for s in 0..frames {
        if rng.gen_bool(spec.start_prob) {
            for h in hit.iter_mut().take((s + spec.span).min(frames)).skip(s) {
                *h = true;
            }
        }
    }
    MaskSet { indices: hit.iter().enumerate().filter_map(|(i, &h)| h.then_some(i)).collect() }
}

/// Rows in `m` become `emb`; the input is left untouched.
pub fn corrupt(x: &FrameSequence, m: &MaskSet, emb: &[f64]) -> Result<FrameSequence> {
    let (t, d) = x.frames.shape();
    if emb.len() != d {
        return Err(Error::Shape(format!("mask embedding width {} vs frame width {d}", emb.len())));
    }
    if let Some(&bad) = m.indices().iter().find(|&&i| i >= t) {
        return Err(Error::MaskIndex { index: bad, frames: t });
    }
    let mut out: Mat = x.frames.clone();
    for &i in m.indices() {
        out.row_mut(i).copy_from_slice(emb);
    }
    Ok(FrameSequence { frames: out })
}
