//! Command-line entry point. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error, 3 data or config error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::asr_head::lm::{fit_char_ngram, CharNgramLm};
use crate::config::{AdaptMode, Config};
use crate::container::Container;
use crate::data_io::{generate_texts, load_manifest, synth_corpus, Manifest};
use crate::encoder::{count_params, ModelConfig};
use crate::error::{Error, Result};
use crate::eval::{decode_manifest, experiment_report, gradcheck, score};
use crate::params::Group;
use crate::pipeline::{load_checkpoint, run_adapt, run_finetune, run_pretrain, save_checkpoint, write_metrics, MetricRecord, StageOutput};

#[derive(Debug, Parser)]
#[command(name = "accent-ssl", version, about = "Accent-adaptive continual self-supervision toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key (repeatable); wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize an accented toy corpus and its manifest.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Stage 1: SSL pretraining on a generic unlabeled manifest.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Stage 2: continued SSL on an accent manifest.
    Adapt {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_parser = ["full", "adapters"])]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Stage 3: CTC fine-tuning of the downstream head.
    Finetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Decode a manifest to `id<TAB>hypothesis`.
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Character LM written by `finetune`.
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// WER/WERR table of checkpoints against a baseline.
    Evaluate {
        #[arg(long)]
        baseline: PathBuf,
        /// Additional checkpoint as NAME=PATH (repeatable).
        #[arg(long = "ckpt", value_name = "NAME=PATH")]
        ckpts: Vec<String>,
        /// Eval manifest as NAME=PATH (repeatable).
        #[arg(long = "manifest", value_name = "NAME=PATH", required = true)]
        manifests: Vec<String>,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Parameter counts per group and the adapter share.
    Params {
        /// Start from a named reference architecture.
        #[arg(long, value_parser = ["hubert-large"])]
        reference: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference gradient check of one component.
    Gradcheck {
        #[arg(long)]
        component: String,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Exit 1 when the max relative error exceeds this.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common, base: Option<&ModelConfig>) -> Result<Config> {
    let mut cfg = Config::default();
    if let Some(m) = base {
        cfg.set_model(m);
    }
    if let Some(p) = &common.config {
        if !p.exists() {
            return Err(Error::MissingFile(p.clone()));
        }
        cfg.apply_text(&fs::read_to_string(p)?)?;
    }
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = common.seed {
        cfg.set("seed", &s.to_string())?;
    }
    eprint!("{}", cfg.resolved().lines().map(|l| format!("config: {l}\n")).collect::<String>());
    Ok(cfg)
}

fn prepare_out(out: &Path, cfg: &Config) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.resolved"), cfg.resolved())?;
    Ok(())
}

fn named(pairs: &[String]) -> Result<Vec<(String, PathBuf)>> {
    pairs
        .iter()
        .map(|p| {
            p.split_once('=')
                .map(|(n, v)| (n.to_string(), PathBuf::from(v)))
                .ok_or_else(|| Error::Config(format!("expected NAME=PATH, got `{p}`")))
        })
        .collect()
}

fn load_lm(path: Option<&Path>) -> Result<Option<CharNgramLm>> {
    path.map(|p| CharNgramLm::from_container(&Container::load(p)?)).transpose()
}

fn write_stage(out: &Path, r: &StageOutput) -> Result<PathBuf> {
    save_checkpoint(&r.last, &out.join("final.ckpt"))?;
    save_checkpoint(&r.best, &out.join("best.ckpt"))?;
    let metrics = out.join("metrics.jsonl");
    write_metrics(&metrics, &r.metrics)?;
    Ok(metrics)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData { out, common } => {
            let cfg = resolve(&common, None)?;
            let s = cfg.synth()?;
            prepare_out(&out, &cfg)?;
            let texts = generate_texts(s.utterances, s.text_seed, s.min_words, s.max_words);
            let m = synth_corpus(&s.spec, &texts, s.role, &out)?;
            println!("synthesized {} utterances ({}) -> {}", m.len(), s.spec.accent_id, out.join("manifest.tsv").display());
        }
        Command::Pretrain { manifest, out, common } => {
            let cfg = resolve(&common, None)?;
            let m = load_manifest(&manifest)?;
            prepare_out(&out, &cfg)?;
            let r = run_pretrain(&cfg, &m)?;
            let metrics = write_stage(&out, &r)?;
            println!("pretrain done: best step {} -> {}; metrics {}", r.best_step, out.join("best.ckpt").display(), metrics.display());
        }
        Command::Adapt { base, manifest, mode, out, common } => {
            let mut cfg = resolve(&common, None)?;
            cfg.set("stage.adapt_mode", &mode)?;
            let mode: AdaptMode = mode.parse()?;
            let base = load_checkpoint(&base)?;
            let m = load_manifest(&manifest)?;
            prepare_out(&out, &cfg)?;
            let r = run_adapt(&cfg, &base, &m, mode)?;
            let metrics = write_stage(&out, &r)?;
            for g in [Group::Frontend, Group::Transformer, Group::Projection, Group::Adapter] {
                eprintln!("hash {}: {}", g.label(), r.best.params.group_hash(g));
            }
            println!("adapt ({}) done: best step {} -> {}; metrics {}", mode.as_str(), r.best_step, out.join("best.ckpt").display(), metrics.display());
        }
        Command::Finetune { ckpt, manifest, out, common } => {
            let cfg = resolve(&common, None)?;
            let ck = load_checkpoint(&ckpt)?;
            let m = load_manifest(&manifest)?;
            prepare_out(&out, &cfg)?;
            let r = run_finetune(&cfg, &ck, &m)?;
            let metrics = write_stage(&out, &r)?;
            let d = cfg.decode()?;
            let texts: Vec<String> = m.utterances.iter().filter_map(|u| u.transcript.clone()).collect();
            fit_char_ngram(&texts, d.lm_order, d.lm_k)?.to_container().save(&out.join("lm.bin"))?;
            println!("finetune done -> {}; metrics {}", out.join("final.ckpt").display(), metrics.display());
        }
        Command::Decode { ckpt, manifest, lm, out, common } => {
            let cfg = resolve(&common, None)?;
            let ck = load_checkpoint(&ckpt)?;
            let m = load_manifest(&manifest)?;
            let lm = load_lm(lm.as_deref())?;
            prepare_out(&out, &cfg)?;
            let hyps = decode_manifest(&ck, &m, &cfg.decode()?, lm.as_ref())?;
            let tsv: String = hyps.iter().map(|(id, h)| format!("{id}\t{h}\n")).collect();
            fs::write(out.join("hyp.tsv"), tsv)?;
            let mut metrics = Vec::new();
            if m.utterances.iter().all(|u| u.transcript.is_some()) && !m.is_empty() {
                metrics.push(MetricRecord::new(0, "decode", "wer", score(&m, &hyps)?.wer));
            }
            let mpath = out.join("metrics.jsonl");
            write_metrics(&mpath, &metrics)?;
            println!("decoded {} utterances -> {}; metrics {}", hyps.len(), out.join("hyp.tsv").display(), mpath.display());
        }
        Command::Evaluate { baseline, ckpts, manifests, lm, out, common } => {
            let cfg = resolve(&common, None)?;
            let base = load_checkpoint(&baseline)?;
            let others: Vec<(String, _)> =
                named(&ckpts)?.into_iter().map(|(n, p)| Ok((n, load_checkpoint(&p)?))).collect::<Result<_>>()?;
            let evals: Vec<(String, Manifest)> =
                named(&manifests)?.into_iter().map(|(n, p)| Ok((n, load_manifest(&p)?))).collect::<Result<_>>()?;
            let lm = load_lm(lm.as_deref())?;
            prepare_out(&out, &cfg)?;
            let o: Vec<(&str, _)> = others.iter().map(|(n, c)| (n.as_str(), c)).collect();
            let e: Vec<(&str, &Manifest)> = evals.iter().map(|(n, m)| (n.as_str(), m)).collect();
            let report = experiment_report(("baseline", &base), &o, &e, &cfg.decode()?, lm.as_ref())?;
            fs::write(out.join("report.tsv"), report.to_tsv())?;
            fs::write(out.join("report.json"), report.to_json())?;
            let metrics: Vec<MetricRecord> = report
                .rows
                .iter()
                .flat_map(|r| {
                    let split = format!("{}/{}", r.checkpoint, r.manifest);
                    let mut v = vec![MetricRecord::new(0, &split, "wer", r.wer.wer)];
                    if let Some(w) = r.werr_pct {
                        v.push(MetricRecord::new(0, &split, "werr_pct", w));
                    }
                    v
                })
                .collect();
            let mpath = out.join("metrics.jsonl");
            write_metrics(&mpath, &metrics)?;
            print!("{}", report.to_tsv());
            println!("report -> {}; metrics {}", out.join("report.tsv").display(), mpath.display());
        }
        Command::Params { reference, common } => {
            let base = reference.map(|_| ModelConfig::hubert_large());
            let cfg = resolve(&common, base.as_ref())?;
            let model = cfg.model()?;
            let r = count_params(&model);
            for g in Group::ALL {
                println!("{:<10} {:>12}", g.label(), r.get(g));
            }
            println!("{:<10} {:>12}", "base", r.base_total());
            println!("B_ada={} theta_ada={} share={:.2}% of base {:.2}M", model.b_ada, r.adapter, r.adapter_pct(), r.base_total() as f64 / 1e6);
        }
        Command::Gradcheck { component, eps, tol, common } => {
            let cfg = resolve(&common, None)?;
            let r = gradcheck(&component, cfg.seed()?, eps)?;
            println!(
                "{} params={} max_rel_err={:.3e} at {}[{}]",
                r.component, r.parameters, r.max_rel_err, r.worst.0, r.worst.1
            );
            if r.max_rel_err > tol {
                return Err(Error::NonFiniteGradient(format!("{component}: relative error above {tol:e}")));
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                3
            } else {
                1
            }
        }
    }
}
