//! Central-difference gradient checks on small random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::asr_head::{bilstm_graph, ctc_loss, ctc_loss_with_grad, init_decoder, weighted_sum_graph, LAYER_WEIGHTS};
use crate::autodiff::{Tape, Var};
use crate::data_io::Waveform;
use crate::encoder::{adapter_graph, block_graph, frontend_graph, init_adapters, init_base, waveform_leaf, Bound, ConvLayer, ModelConfig};
use crate::error::{Error, Result};
use crate::masking::MaskSet;
use crate::params::{FreezeSet, Group, ParamStore};
use crate::ssl_head::{logits_graph, masked_nll_with_grad};
use crate::tensor::Mat;

pub const COMPONENTS: &[&str] = &["frontend", "block", "adapter", "ssl_head", "weighted_sum", "bilstm", "ctc"];

/// Denominator floor for the relative error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub component: String,
    pub parameters: usize,
    pub max_rel_err: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: (String, usize),
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// A probe builds the scalar loss on a tape; gradients flow to every tensor
/// in the store.
fn check(
    component: &str,
    params: ParamStore,
    eps: f64,
    probe: impl Fn(&mut Tape, &Bound) -> Result<Var>,
) -> Result<GradcheckReport> {
    let all = FreezeSet::only(&Group::ALL);
    let analytic = {
        let mut tape = Tape::new();
        let b = Bound::new(&mut tape, &params, all);
        let root = probe(&mut tape, &b)?;
        let mut g = tape.backward(root);
        b.gradients(&mut g, &params)
    };
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let b = Bound::new(&mut tape, p, FreezeSet::default());
        let root = probe(&mut tape, &b)?;
        Ok(tape.value(root).get(0, 0))
    };
    let mut report = GradcheckReport {
        component: component.to_string(),
        parameters: 0,
        max_rel_err: 0.0,
        worst: (String::new(), 0),
    };
    let mut work = params.clone();
    for (name, g) in &analytic {
        for k in 0..g.len() {
            let orig = work.expect(name).data()[k];
            work.get_mut(name).unwrap().data_mut()[k] = orig + eps;
            let up = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[k] = orig - eps;
            let down = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = g.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.parameters += 1;
            if rel > report.max_rel_err || report.worst.0.is_empty() {
                report.max_rel_err = rel;
                report.worst = (name.clone(), k);
            }
        }
    }
    Ok(report)
}

/// Tiny configuration shared by the encoder-side probes.
fn tiny_model() -> ModelConfig {
    ModelConfig {
        d: 8,
        layers: 1,
        heads: 2,
        ffn: 16,
        b_ada: 2,
        conv: vec![ConvLayer { out_channels: 4, kernel: 6, stride: 3 }, ConvLayer { out_channels: 8, kernel: 4, stride: 2 }],
        clusters: 5,
        lstm_hidden: 3,
        lstm_layers: 2,
        ..ModelConfig::default()
    }
}

/// Compares analytic and central-difference gradients for one component.
pub fn gradcheck(component: &str, seed: u64, eps: f64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tiny_model();
    match component {
        "frontend" => {
            let base = init_base(&cfg, &mut rng);
            let mut p = ParamStore::new();
            for (n, m) in base.group(Group::Frontend) {
                p.insert(n.clone(), m.clone());
            }
            let wave = Waveform::new((0..60).map(|_| rng.gen_range(-0.9..0.9)).collect(), 16_000)?;
            let t = cfg.frames_for(60);
            let w = random(t, cfg.d, &mut rng);
            check(component, p, eps, |tape, b| {
                let x = waveform_leaf(tape, &wave);
                let y = frontend_graph(tape, b, &cfg, x)?;
                Ok(tape.dot_const(y, w.clone()))
            })
        }
        "block" => {
            let mut p = ParamStore::new();
            for (n, m) in init_base(&cfg, &mut rng).group(Group::Transformer).filter(|(n, _)| n.contains("block")) {
                // Break the LN initialization symmetry.
                let jitter = random(m.rows(), m.cols(), &mut rng);
                let mut m = m.clone();
                m.data_mut().iter_mut().zip(jitter.data()).for_each(|(v, j)| *v += 0.1 * j);
                p.insert(n.clone(), m);
            }
            let x = random(5, cfg.d, &mut rng);
            let w = random(5, cfg.d, &mut rng);
            check(component, p, eps, |tape, b| {
                let xv = tape.constant(x.clone());
                let y = block_graph(tape, b, &cfg, 0, xv);
                Ok(tape.dot_const(y, w.clone()))
            })
        }
        "adapter" => {
            let small = ModelConfig { d: 4, b_ada: 2, ..cfg.clone() };
            let mut p = init_adapters(&small, &mut rng);
            for (_, m) in p.iter_mut() {
                let j = random(m.rows(), m.cols(), &mut rng);
                m.data_mut().iter_mut().zip(j.data()).for_each(|(v, j)| *v += 0.5 * j);
            }
            let x = random(3, 4, &mut rng);
            let w = random(3, 4, &mut rng);
            check(component, p, eps, |tape, b| {
                let xv = tape.constant(x.clone());
                let y = adapter_graph(tape, b, 0, xv);
                Ok(tape.dot_const(y, w.clone()))
            })
        }
        "ssl_head" => {
            let mut p = ParamStore::new();
            p.insert("proj.weight", random(cfg.d, cfg.clusters, &mut rng));
            p.insert("proj.bias", random(1, cfg.clusters, &mut rng));
            let feats = random(6, cfg.d, &mut rng);
            let targets: Vec<usize> = (0..6).map(|_| rng.gen_range(0..cfg.clusters)).collect();
            let mask = MaskSet::from_indices(vec![0, 2, 3, 5]);
            check(component, p, eps, |tape, b| {
                let f = tape.constant(feats.clone());
                let logits = logits_graph(tape, b, f);
                let (v, g) = masked_nll_with_grad(tape.value(logits), &targets, &mask, 1.0 / mask.len() as f64)?;
                Ok(tape.loss_with_grad(logits, v, g))
            })
        }
        "weighted_sum" => {
            let mut p = ParamStore::new();
            p.insert(LAYER_WEIGHTS, random(1, 3, &mut rng));
            let layers: Vec<Mat> = (0..3).map(|_| random(4, 5, &mut rng)).collect();
            let w = random(4, 5, &mut rng);
            check(component, p, eps, |tape, b| {
                let vs: Vec<Var> = layers.iter().map(|m| tape.constant(m.clone())).collect();
                let y = weighted_sum_graph(tape, b, &vs);
                Ok(tape.dot_const(y, w.clone()))
            })
        }
        "bilstm" => {
            let small = ModelConfig { d: 4, ..cfg.clone() };
            let p = init_decoder(&small, &mut rng);
            let x = random(4, 4, &mut rng);
            let w = random(4, small.vocab, &mut rng);
            check(component, p, eps, |tape, b| {
                let xv = tape.constant(x.clone());
                let y = bilstm_graph(tape, b, &small, xv);
                Ok(tape.dot_const(y, w.clone()))
            })
        }
        "ctc" => {
            let mut p = ParamStore::new();
            p.insert("decoder.probe_logits", random(4, 5, &mut rng));
            let y = vec![rng.gen_range(1..5), rng.gen_range(1..5)];
            check(component, p, eps, |tape, b| {
                let l = b.var("decoder.probe_logits");
                let logits = tape.value(l).clone();
                match ctc_loss_with_grad(&logits, &y)? {
                    Some((v, g)) => {
                        debug_assert!((v - ctc_loss(&logits, &y)?.value()).abs() < 1e-12);
                        Ok(tape.loss_with_grad(l, v, g))
                    }
                    None => Err(Error::Data("probe target infeasible".into())),
                }
            })
        }
        other => Err(Error::UnknownComponent(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_component_is_an_error() {
        assert!(matches!(gradcheck("lstm9", 0, 1e-5), Err(Error::UnknownComponent(_))));
    }

    #[test]
    fn every_component_checks_out() {
        for c in COMPONENTS {
            let r = gradcheck(c, 7, 1e-5).unwrap();
            assert!(r.parameters > 0 && r.parameters <= 5000, "{c}: {}", r.parameters);
            assert!(r.max_rel_err <= 1e-4, "{c}: {r:?}");
        }
    }
}
