//! Add-k smoothed character n-gram model used for shallow fusion.

use std::collections::BTreeMap;

use crate::container::{Container, Record};
use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::vocab::{self, NUM_CHARS};

/// Outcome alphabet: the 28 characters plus an end marker.
pub const ALPHABET: usize = NUM_CHARS + 1;
pub const END: usize = NUM_CHARS;
/// Context padding symbol; never an outcome.
pub const START: usize = NUM_CHARS + 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CharNgramLm {
    pub order: usize,
    pub k: f64,
    /// Fusion weight λ.
    pub lambda: f64,
    /// Per-character length bonus β.
    pub beta: f64,
    counts: BTreeMap<Vec<u8>, Vec<f64>>,
}

impl CharNgramLm {
    fn context_of(&self, history: &[usize]) -> Vec<u8> {
        let n = self.order - 1;
        let mut ctx = vec![START as u8; n];
        let take = history.len().min(n);
        for (slot, &c) in ctx[n - take..].iter_mut().zip(&history[history.len() - take..]) {
            *slot = c as u8;
        }
        ctx
    }

    /// `P(c | history)` with `c` a character index (0..28) or [`END`].
    pub fn prob(&self, history: &[usize], c: usize) -> f64 {
        let denom_k = self.k * ALPHABET as f64;
        match self.counts.get(&self.context_of(history)) {
            Some(row) => {
                let total: f64 = row.iter().sum();
                (row[c] + self.k) / (total + denom_k)
            }
            None => 1.0 / ALPHABET as f64,
        }
    }

    pub fn log_prob(&self, history: &[usize], c: usize) -> f64 {
        self.prob(history, c).ln()
    }

    /// Distribution over the alphabet for a context.
    pub fn distribution(&self, history: &[usize]) -> Vec<f64> {
        (0..ALPHABET).map(|c| self.prob(history, c)).collect()
    }

    pub fn with_fusion(mut self, lambda: f64, beta: f64) -> Self {
        self.lambda = lambda;
        self.beta = beta;
        self
    }

    pub fn to_container(&self) -> Container {
        let n = self.order - 1;
        let ctx = Mat::from_fn(self.counts.len(), n, |r, c| self.counts.keys().nth(r).unwrap()[c] as f64);
        let counts = Mat::from_rows(&self.counts.values().cloned().collect::<Vec<_>>());
        let meta = format!("order={}\nk={}\nlambda={}\nbeta={}\n", self.order, self.k, self.lambda, self.beta);
        Container {
            records: vec![
                Record::text("lm.meta", meta),
                Record::tensor("lm.contexts", ctx),
                Record::tensor("lm.counts", counts),
            ],
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta = c.text("lm.meta")?;
        let field = |key: &str| -> Result<f64> {
            meta.lines()
                .find_map(|l| l.strip_prefix(&format!("{key}=")))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Corrupt(format!("lm.meta lacks {key}")))
        };
        let order = field("order")? as usize;
        let ctx = c.tensor("lm.contexts")?;
        let counts = c.tensor("lm.counts")?;
        if order == 0 || ctx.rows() != counts.rows() || counts.cols() != ALPHABET {
            return Err(Error::Corrupt("inconsistent LM tables".into()));
        }
        let map = (0..ctx.rows())
            .map(|r| (ctx.row(r).iter().map(|&v| v as u8).collect(), counts.row(r).to_vec()))
            .collect();
        Ok(Self { order, k: field("k")?, lambda: field("lambda")?, beta: field("beta")?, counts: map })
    }
}

/// Counts every character event with its `order − 1` preceding symbols
/// (start-padded). End-of-text is part of the outcome alphabet but is not
/// counted as an event.
pub fn fit_char_ngram(texts: &[String], order: usize, k: f64) -> Result<CharNgramLm> {
    if texts.is_empty() || texts.iter().all(|t| t.is_empty()) {
        return Err(Error::Data("cannot fit an n-gram model on an empty corpus".into()));
    }
    if order == 0 || !(k > 0.0) {
        return Err(Error::Config(format!("n-gram order {order} / k {k} invalid")));
    }
    let mut lm = CharNgramLm { order, k, lambda: 0.3, beta: 0.5, counts: BTreeMap::new() };
    for t in texts {
        let ids: Vec<usize> = t
            .chars()
            .map(|c| vocab::char_index(c).ok_or_else(|| Error::IllegalChar { ch: c, text: t.clone() }))
            .collect::<Result<_>>()?;
        for i in 0..ids.len() {
            let ctx = lm.context_of(&ids[..i]);
            lm.counts.entry(ctx).or_insert_with(|| vec![0.0; ALPHABET])[ids[i]] += 1.0;
        }
    }
    Ok(lm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bigram_count_arithmetic() {
        let lm = fit_char_ngram(&["aa".to_string()], 2, 1.0).unwrap();
        assert!((lm.prob(&[0], 0) - 1.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn unseen_context_is_uniform() {
        let lm = fit_char_ngram(&["abc".to_string()], 3, 0.5).unwrap();
        let d = lm.distribution(&[25, 25]);
        assert!(d.iter().all(|p| (p - 1.0 / 29.0).abs() < 1e-15));
    }

    #[test]
    fn distributions_normalize() {
        let lm = fit_char_ngram(&["the cat".to_string(), "it's a dog".to_string()], 3, 0.1).unwrap();
        for h in [vec![], vec![19], vec![19, 7], vec![26, 0]] {
            assert!((lm.distribution(&h).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(fit_char_ngram(&[], 2, 1.0).is_err());
    }

    #[test]
    fn container_round_trip() {
        let lm = fit_char_ngram(&["we go".to_string()], 3, 0.5).unwrap().with_fusion(0.7, 0.25);
        let back = CharNgramLm::from_container(&Container::from_bytes(&lm.to_container().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, lm);
    }
}
