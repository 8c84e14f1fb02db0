//! CTC loss via the log-space forward–backward recursion over the
//! blank-extended label sequence.

use crate::autodiff::{log_sum_exp, softmax_in_place};
use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::vocab::BLANK;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CtcLoss {
    /// `−log p(y | x)`.
    Finite(f64),
    /// No alignment of the target fits in the available frames.
    Infeasible,
}

impl CtcLoss {
    pub fn value(self) -> f64 {
        match self {
            CtcLoss::Finite(v) => v,
            CtcLoss::Infeasible => f64::INFINITY,
        }
    }
}

/// Minimum frame count for `target`: one per label plus one blank between
/// each adjacent repeated pair.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
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

fn log_softmax(logits: &Mat) -> Mat {
    let mut lp = logits.clone();
    for t in 0..lp.rows() {
        let z = log_sum_exp(logits.row(t));
        lp.row_mut(t).iter_mut().for_each(|v| *v -= z);
    }
    lp
}

fn extended(target: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &y in target {
        ext.push(y);
        ext.push(BLANK);
    }
    ext
}

fn validate(logits: &Mat, target: &[usize]) -> Result<()> {
    if let Some(&bad) = target.iter().find(|&&y| y == BLANK || y >= logits.cols()) {
        return Err(Error::Shape(format!("CTC target symbol {bad} is blank or outside {} classes", logits.cols())));
    }
    if logits.rows() == 0 {
        return Err(Error::Shape("CTC needs at least one frame".into()));
    }
    Ok(())
}

fn skip_allowed(ext: &[usize], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

fn forward(lp: &Mat, ext: &[usize]) -> (Vec<Vec<f64>>, f64) {
    let t_len = lp.rows();
    let s_len = ext.len();
    let mut alpha = vec![vec![f64::NEG_INFINITY; s_len]; t_len];
    alpha[0][0] = lp.get(0, ext[0]);
    if s_len > 1 {
        alpha[0][1] = lp.get(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[t - 1][s];
            if s >= 1 {
                a = lse2(a, alpha[t - 1][s - 1]);
            }
            if skip_allowed(ext, s) {
                a = lse2(a, alpha[t - 1][s - 2]);
            }
            alpha[t][s] = if a == f64::NEG_INFINITY { a } else { a + lp.get(t, ext[s]) };
        }
    }
    let last = &alpha[t_len - 1];
    let ll = if s_len > 1 { lse2(last[s_len - 1], last[s_len - 2]) } else { last[0] };
    (alpha, ll)
}

/// `−log Σ_{π ∈ B⁻¹(y)} Π_t p(π_t | t)` with `p = softmax(logits)`.
pub fn ctc_loss(logits: &Mat, target: &[usize]) -> Result<CtcLoss> {
    validate(logits, target)?;
    if min_frames(target) > logits.rows() {
        return Ok(CtcLoss::Infeasible);
    }
    let (_, ll) = forward(&log_softmax(logits), &extended(target));
    Ok(if ll.is_finite() { CtcLoss::Finite(-ll) } else { CtcLoss::Infeasible })
}

/// Loss and its gradient w.r.t. the logits (`softmax − γ`), or `None` when
/// the target is infeasible.
pub fn ctc_loss_with_grad(logits: &Mat, target: &[usize]) -> Result<Option<(f64, Mat)>> {
    validate(logits, target)?;
    if min_frames(target) > logits.rows() {
        return Ok(None);
    }
    let lp = log_softmax(logits);
    let ext = extended(target);
    let (alpha, ll) = forward(&lp, &ext);
    if !ll.is_finite() {
        return Ok(None);
    }
    let t_len = lp.rows();
    let s_len = ext.len();
    // beta[t][s]: log mass of completing the path from (t, s), excluding the
    // emission at t.
    let mut beta = vec![vec![f64::NEG_INFINITY; s_len]; t_len];
    beta[t_len - 1][s_len - 1] = 0.0;
    if s_len > 1 {
        beta[t_len - 1][s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[t + 1][s] + lp.get(t + 1, ext[s]);
            if s + 1 < s_len {
                b = lse2(b, beta[t + 1][s + 1] + lp.get(t + 1, ext[s + 1]));
            }
            if s + 2 < s_len && skip_allowed(&ext, s + 2) {
                b = lse2(b, beta[t + 1][s + 2] + lp.get(t + 1, ext[s + 2]));
            }
            beta[t][s] = b;
        }
    }
    let mut grad = logits.clone();
    for t in 0..t_len {
        let g = grad.row_mut(t);
        softmax_in_place(g);
        for s in 0..s_len {
            let occ = alpha[t][s] + beta[t][s] - ll;
            if occ > f64::NEG_INFINITY {
                g[ext[s]] -= occ.exp();
            }
        }
    }
    Ok(Some((-ll, grad)))
}
