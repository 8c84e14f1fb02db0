use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_accent-ssl")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const QUICK: &[&str] = &[
    "--set", "model.d=16", "--set", "model.conv=16:8:8,16:8:8,16:5:5", "--set", "model.N=2", "--set", "model.heads=2",
    "--set", "model.ffn=32", "--set", "model.C=6", "--set", "model.H=8", "--set", "stage.max_steps=4",
    "--set", "stage.eval_every=2", "--set", "units.warm_steps=2", "--set", "stage.epochs=2",
];

fn quick<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(QUICK);
    v
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = walk(dir).into_iter().map(|p| p.strip_prefix(dir).unwrap().display().to_string()).collect();
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        }
        out.push(p);
    }
    out
}

#[test]
fn usage_and_input_errors_map_to_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["frobnicate"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&run(d.path(), &["adapt", "--mode", "sideways", "--base", "x", "--manifest", "y", "--out", "z"])), 2);
    assert_eq!(code(&run(d.path(), &["params", "--set", "model.depth=3"])), 3);
    assert_eq!(code(&run(d.path(), &["pretrain", "--manifest", "missing.tsv", "--out", "o"])), 3);
    assert_eq!(code(&run(d.path(), &["gradcheck", "--component", "lstm9"])), 3);
    assert_eq!(code(&run(d.path(), &["--help"])), 0);
}

#[test]
fn params_reports_the_reference_adapter_share() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["params", "--set", "model.B_ada=1024", "--reference", "hubert-large"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().any(|l| l.starts_with("B_ada=1024") && l.contains("share=15.97%")), "{out}");
    // The resolved config is logged to stderr.
    assert!(String::from_utf8_lossy(&o.stderr).contains("config: model.B_ada=1024"));
    assert!(listing(d.path()).is_empty());
}

#[test]
fn gradcheck_prints_a_report() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["gradcheck", "--component", "adapter"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("adapter params="));
}

#[test]
fn full_workflow_is_reproducible_and_stays_in_its_directories() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let ok = |args: Vec<&str>| {
        let o = run(p, &args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    ok(vec!["synth-data", "--out", "gen", "--set", "data.utterances=16"]);
    ok(vec!["synth-data", "--out", "gen2", "--set", "data.utterances=16"]);
    for f in ["manifest.tsv", "canonical-00003.wav"] {
        assert_eq!(fs::read(p.join("gen").join(f)).unwrap(), fs::read(p.join("gen2").join(f)).unwrap());
    }
    ok(vec!["synth-data", "--out", "acc", "--set", "data.utterances=12", "--set", "data.role=accent_unlabeled", "--set", "data.accent=shifted", "--set", "data.formant_factor=1.25"]);
    ok(vec!["synth-data", "--out", "lab", "--set", "data.utterances=12", "--set", "data.role=labeled", "--set", "data.text_seed=5"]);
    ok(vec!["synth-data", "--out", "ev", "--set", "data.utterances=6", "--set", "data.role=eval", "--set", "data.text_seed=6"]);

    let before = listing(p);
    let line = ok(quick(&["pretrain", "--manifest", "gen/manifest.tsv", "--out", "pre"]));
    assert!(line.contains("metrics pre/metrics.jsonl"), "{line}");
    let after = listing(p);
    assert!(after.iter().filter(|f| !before.contains(f)).all(|f| f.starts_with("pre")), "{after:?}");
    ok(quick(&["pretrain", "--manifest", "gen/manifest.tsv", "--out", "pre2"]));
    for f in ["metrics.jsonl", "final.ckpt", "best.ckpt", "config.resolved"] {
        assert_eq!(fs::read(p.join("pre").join(f)).unwrap(), fs::read(p.join("pre2").join(f)).unwrap(), "{f}");
    }

    ok(quick(&["adapt", "--mode", "adapters", "--base", "pre/best.ckpt", "--manifest", "acc/manifest.tsv", "--out", "ada"]));
    ok(quick(&["finetune", "--ckpt", "pre/best.ckpt", "--manifest", "lab/manifest.tsv", "--out", "ft0"]));
    ok(quick(&["finetune", "--ckpt", "ada/best.ckpt", "--manifest", "lab/manifest.tsv", "--out", "ft1"]));
    ok(quick(&["decode", "--ckpt", "ft1/final.ckpt", "--manifest", "ev/manifest.tsv", "--lm", "ft1/lm.bin", "--out", "dec"]));
    let hyp = fs::read_to_string(p.join("dec/hyp.tsv")).unwrap();
    assert_eq!(hyp.lines().count(), 6);
    assert!(hyp.lines().all(|l| l.split('\t').count() == 2));
    let table = ok(quick(&[
        "evaluate", "--baseline", "ft0/final.ckpt", "--ckpt", "ada=ft1/final.ckpt", "--manifest", "ev=ev/manifest.tsv", "--out", "rep",
    ]));
    assert!(table.starts_with("checkpoint\tmanifest"));
    assert!(p.join("rep/report.json").exists() && p.join("rep/metrics.jsonl").exists());

    // A checkpoint without a decoder cannot be decoded: a config error.
    let o = run(p, &quick(&["decode", "--ckpt", "ada/best.ckpt", "--manifest", "ev/manifest.tsv", "--out", "bad"]));
    assert_eq!(code(&o), 3);
}
