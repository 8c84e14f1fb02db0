//! Projection head `p(c | X̃, t)` and the masked-prediction loss.

use crate::autodiff::{log_sum_exp, softmax_in_place, Tape, Var};
use crate::encoder::Bound;
use crate::error::{Error, Result};
use crate::masking::MaskSet;
use crate::params::ParamStore;
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SslLoss {
    /// Mean negative log-likelihood per masked frame.
    pub value: f64,
    pub masked_count: usize,
}

pub fn logits_graph(tape: &mut Tape, b: &Bound, features: Var) -> Var {
    let l = tape.matmul(features, b.var("proj.weight"));
    tape.add_row(l, b.var("proj.bias"))
}

/// `features · W_proj + b_proj`.
pub fn ssl_logits(features: &Mat, params: &ParamStore) -> Result<Mat> {
    let w = params.expect("proj.weight");
    let bias = params.expect("proj.bias");
    if features.cols() != w.rows() {
        return Err(Error::Shape(format!("features width {} vs projection {}", features.cols(), w.rows())));
    }
    let mut out = features.matmul(w);
    for r in 0..out.rows() {
        for (o, b) in out.row_mut(r).iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

pub fn probabilities(logits: &Mat) -> Mat {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        softmax_in_place(p.row_mut(r));
    }
    p
}

fn check(logits: &Mat, targets: &[usize], mask: &MaskSet) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    if targets.len() != logits.rows() {
        return Err(Error::Shape(format!("{} targets for {} frames", targets.len(), logits.rows())));
    }
    if let Some(&bad) = mask.indices().iter().find(|&&t| t >= logits.rows()) {
        return Err(Error::MaskIndex { index: bad, frames: logits.rows() });
    }
    if let Some(&z) = targets.iter().find(|&&z| z >= logits.cols()) {
        return Err(Error::Shape(format!("target {z} outside {} classes", logits.cols())));
    }
    Ok(())
}

/// `−(1/|M|) Σ_{t∈M} log softmax(logits_t)[z_t]`.
pub fn ssl_loss(logits: &Mat, targets: &[usize], mask: &MaskSet) -> Result<SslLoss> {
    check(logits, targets, mask)?;
    let total: f64 = mask.indices().iter().map(|&t| log_sum_exp(logits.row(t)) - logits.get(t, targets[t])).sum();
    Ok(SslLoss { value: total / mask.len() as f64, masked_count: mask.len() })
}

/// `scale · Σ_{t∈M} NLL_t` and its gradient w.r.t. the logits.
pub fn masked_nll_with_grad(logits: &Mat, targets: &[usize], mask: &MaskSet, scale: f64) -> Result<(f64, Mat)> {
    check(logits, targets, mask)?;
    let mut grad = Mat::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for &t in mask.indices() {
        let row = logits.row(t);
        total += log_sum_exp(row) - row[targets[t]];
        let g = grad.row_mut(t);
        g.copy_from_slice(row);
        softmax_in_place(g);
        g[targets[t]] -= 1.0;
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((scale * total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let l = Mat::zeros(5, 4);
        let m = MaskSet::from_indices(vec![1, 3]);
        let loss = ssl_loss(&l, &[0, 1, 2, 3, 0], &m).unwrap();
        assert!((loss.value - 4f64.ln()).abs() < 1e-12);
        assert_eq!(loss.masked_count, 2);
    }

    #[test]
    fn confident_prediction_is_near_zero() {
        let mut l = Mat::zeros(2, 3);
        l.set(0, 2, 1000.0);
        let loss = ssl_loss(&l, &[2, 0], &MaskSet::from_indices(vec![0])).unwrap();
        assert!(loss.value >= 0.0 && loss.value <= 1e-6);
    }

    #[test]
    fn empty_mask_is_an_error() {
        assert!(matches!(ssl_loss(&Mat::zeros(2, 2), &[0, 1], &MaskSet::default()), Err(Error::EmptyMask)));
    }

    #[test]
    fn closed_form_two_class() {
        let mut p = ParamStore::new();
        p.insert("proj.weight", Mat::from_rows(&[vec![1.0, -1.0]]));
        p.insert("proj.bias", Mat::zeros(1, 2));
        let logits = ssl_logits(&Mat::filled(1, 1, 1.0), &p).unwrap();
        let probs = probabilities(&logits);
        assert!((probs.get(0, 0) - 1.0 / (1.0 + (-2f64).exp())).abs() < 1e-15);
    }
}
