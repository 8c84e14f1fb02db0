use accent_ssl::asr_head::{effective_weights, greedy_decode, weighted_sum, CharNgramLm};
use accent_ssl::asr_head::lm::fit_char_ngram;
use accent_ssl::autodiff::Tape;
use accent_ssl::container::{Container, Record};
use accent_ssl::data_io::{read_wav, synth_waveform, write_wav, AccentSpec};
use accent_ssl::encoder::{
    attention_with_probs, encoder_forward, encoder_graph, init_base, sinusoidal_table, Bound, EncoderOutput, FrameSequence,
    ModelConfig,
};
use accent_ssl::eval::{wer, werr};
use accent_ssl::masking::{corrupt, sample_mask, MaskSet, MaskSpec};
use accent_ssl::params::FreezeSet;
use accent_ssl::ssl_head::ssl_loss;
use accent_ssl::units::{assign, fit_kmeans};
use accent_ssl::vocab::{decode_ids, BLANK, VOCAB_SIZE};
use accent_ssl::Mat;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Mat::from_vec(rows, cols, v))
}

fn tiny() -> ModelConfig {
    ModelConfig { d: 8, layers: 2, heads: 2, ffn: 16, clusters: 5, ..ModelConfig::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn werr_is_antisymmetric(b in 0.01f64..200.0, d in 0.0f64..50.0) {
        let up = werr(b, b + d).unwrap().werr_pct;
        let down = werr(b, b - d).unwrap().werr_pct;
        prop_assert!((up + down).abs() <= 1e-12 * (1.0 + up.abs()));
    }

    #[test]
    fn wer_counts_reconcile(r in prop::collection::vec(0u8..4, 1..10), h in prop::collection::vec(0u8..4, 0..10)) {
        let names = ["a", "b", "c", "d"];
        let r: Vec<&str> = r.iter().map(|&i| names[i as usize]).collect();
        let h: Vec<&str> = h.iter().map(|&i| names[i as usize]).collect();
        let w = wer(&r, &h).unwrap();
        prop_assert!((w.wer - w.edits() as f64 / r.len() as f64).abs() <= 1e-15);
        prop_assert_eq!(r.len() + w.insertions - w.deletions, h.len());
        prop_assert!(w.edits() <= r.len().max(h.len()));
        prop_assert_eq!(wer(&r, &r).unwrap().wer, 0.0);
    }

    #[test]
    fn ssl_loss_is_shift_invariant_and_nonnegative(
        logits in mat(6, 5),
        targets in prop::collection::vec(0usize..5, 6),
        shift in -50.0f64..50.0,
        row in 0usize..6,
    ) {
        let mask = MaskSet::from_indices(vec![0, 2, row]);
        let a = ssl_loss(&logits, &targets, &mask).unwrap().value;
        let mut moved = logits.clone();
        moved.row_mut(row).iter_mut().for_each(|v| *v += shift);
        let b = ssl_loss(&moved, &targets, &mask).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-9);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn layer_weights_form_a_distribution(raw in prop::collection::vec(-20.0f64..20.0, 1..8)) {
        let w = effective_weights(&raw);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        let argmax = |v: &[f64]| v.iter().enumerate().fold(0, |b, (i, x)| if *x > v[b] { i } else { b });
        prop_assert_eq!(argmax(&raw), argmax(&w));
    }

    #[test]
    fn swapping_layers_with_their_weights_is_invisible(
        l0 in mat(3, 4), l1 in mat(3, 4), l2 in mat(3, 4),
        raw in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let a = weighted_sum(&EncoderOutput { per_layer: vec![l0.clone(), l1.clone(), l2.clone()] }, &raw).unwrap();
        let b = weighted_sum(&EncoderOutput { per_layer: vec![l2, l1, l0] }, &[raw[2], raw[1], raw[0]]).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn greedy_reproduces_collapse_of_one_hot_paths(path in prop::collection::vec(0usize..VOCAB_SIZE, 1..20)) {
        let logits = Mat::from_fn(path.len(), VOCAB_SIZE, |t, c| if c == path[t] { 5.0 } else { 0.0 });
        let mut want = Vec::new();
        let mut prev = None;
        for &s in &path {
            if Some(s) != prev && s != BLANK {
                want.push(s);
            }
            prev = Some(s);
        }
        prop_assert_eq!(greedy_decode(&logits), decode_ids(&want));
    }

    #[test]
    fn masks_stay_in_range_and_reproduce(t in 1usize..200, span in 1usize..12, p in 0.0f64..1.0, seed in any::<u64>()) {
        let spec = MaskSpec { span, start_prob: p };
        let a = sample_mask(t, &spec, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = sample_mask(t, &spec, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&a, &b);
        prop_assert!(a.len() <= t);
        prop_assert!(a.indices().iter().all(|&i| i < t));
        prop_assert!(a.indices().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn corrupt_is_identity_on_empty_and_idempotent(x in mat(7, 3), emb in prop::collection::vec(-1.0f64..1.0, 3), rows in prop::collection::btree_set(0usize..7, 0..7)) {
        let seq = FrameSequence { frames: x };
        prop_assert_eq!(&corrupt(&seq, &MaskSet::from_indices(vec![]), &emb).unwrap(), &seq);
        let m = MaskSet::from_indices(rows.into_iter().collect());
        let once = corrupt(&seq, &m, &emb).unwrap();
        prop_assert_eq!(&corrupt(&once, &m, &emb).unwrap(), &once);
    }

    #[test]
    fn assign_is_permutation_equivariant(x in mat(9, 2), seed in any::<u64>()) {
        let fit = fit_kmeans(&x, 3, 20, seed).unwrap();
        let ids = assign(&fit.codebook, &x).unwrap();
        let perm: Vec<usize> = (0..9).rev().collect();
        let permuted = assign(&fit.codebook, &x.select_rows(&perm)).unwrap();
        prop_assert_eq!(permuted, perm.iter().map(|&i| ids[i]).collect::<Vec<_>>());
    }

    #[test]
    fn kmeans_is_monotone_and_reproducible(x in mat(30, 3), seed in any::<u64>(), k in 1usize..6) {
        let a = fit_kmeans(&x, k, 30, seed).unwrap();
        let b = fit_kmeans(&x, k, 30, seed).unwrap();
        prop_assert!(a.inertia_history.windows(2).all(|w| w[1] <= w[0]));
        let bits = |m: &Mat| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.codebook.centroids), bits(&b.codebook.centroids));
    }

    #[test]
    fn char_lm_distributions_normalize(ctx in prop::collection::vec(0u8..28, 0..6)) {
        let texts: Vec<String> = ["the cat", "a dog's day", "we go"].iter().map(|s| s.to_string()).collect();
        let lm: CharNgramLm = fit_char_ngram(&texts, 3, 0.5).unwrap();
        let h: Vec<usize> = ctx.iter().map(|&c| c as usize).collect();
        let total: f64 = lm.distribution(&h).iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn containers_round_trip(v in prop::collection::vec(any::<f64>(), 0..20), text in "[a-z ]{0,30}", blob in prop::collection::vec(any::<u8>(), 0..40)) {
        let mut c = Container::default();
        c.push(Record::tensor("t", Mat::from_vec(1, v.len(), v.clone())));
        c.push(Record::text("s", text));
        c.push(Record::bytes("b", blob));
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn encoder_shapes_and_attention_rows(t in 1usize..12, seed in any::<u64>(), with_mask in any::<bool>()) {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = init_base(&cfg, &mut rng);
        let x = FrameSequence { frames: Mat::from_fn(t, cfg.d, |r, c| ((r * 7 + c * 3) % 11) as f64 / 5.0 - 1.0) };
        let mask = MaskSet::from_indices((0..t).step_by(3).collect());
        let out = encoder_forward(&x, &p, &cfg, false, with_mask.then_some(&mask)).unwrap();
        prop_assert_eq!(out.per_layer.len(), cfg.layers);
        prop_assert!(out.per_layer.iter().all(|m| m.shape() == (t, cfg.d)));

        let mut tape = Tape::new();
        let b = Bound::new(&mut tape, &p, FreezeSet::default());
        let xv = tape.constant(x.frames.clone());
        let (_, probs) = attention_with_probs(&mut tape, &b, &cfg, 0, xv);
        for pv in probs {
            let pm = tape.value(pv);
            for r in 0..pm.rows() {
                prop_assert!((pm.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn masked_rows_become_embedding_plus_position() {
    let cfg = tiny();
    let p = init_base(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
    let frames = Mat::from_fn(9, cfg.d, |r, c| (r + c) as f64 * 0.1);
    let mask = MaskSet::from_indices(vec![1, 2, 7]);
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, &p, FreezeSet::default());
    let fv = tape.constant(frames.clone());
    let g = encoder_graph(&mut tape, &b, &cfg, fv, Some(&mask), false).unwrap();
    let input = tape.value(g.block_input);
    let pe = sinusoidal_table(9, cfg.d);
    let emb = p.expect("encoder.mask_emb");
    for t in 0..9 {
        for c in 0..cfg.d {
            let base = if mask.contains(t) { emb.get(0, c) } else { frames.get(t, c) };
            assert_eq!(input.get(t, c), base + pe.get(t, c));
        }
    }
}

#[test]
fn mask_coverage_matches_closed_form() {
    // Frame t is covered unless none of the min(l, t+1) starts that reach it fire.
    let spec = MaskSpec { span: 4, start_prob: 0.1 };
    let t = 30;
    let trials = 20_000;
    let mut hits = vec![0usize; t];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..trials {
        for &i in sample_mask(t, &spec, &mut rng).indices() {
            hits[i] += 1;
        }
    }
    for (i, &h) in hits.iter().enumerate() {
        let want = 1.0 - (1.0 - spec.start_prob).powi(spec.span.min(i + 1) as i32);
        let got = h as f64 / trials as f64;
        let sd = (want * (1.0 - want) / trials as f64).sqrt();
        assert!((got - want).abs() <= 5.0 * sd + 1e-12, "frame {i}: {got} vs {want}");
    }
}

#[test]
fn synthesis_is_deterministic_and_survives_pcm16() {
    let dir = tempfile::tempdir().unwrap();
    let spec = AccentSpec { snr_db: 20.0, ..AccentSpec::canonical(4) };
    let a = synth_waveform(&spec, "it's a cat", 3).unwrap();
    assert_eq!(a, synth_waveform(&spec, "it's a cat", 3).unwrap());
    let path = dir.path().join("x.wav");
    write_wav(&path, &a).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.len(), a.len());
    for (x, y) in a.samples.iter().zip(&back.samples) {
        assert!((x - y).abs() <= 1.0 / 32768.0);
    }
}

#[test]
fn canonical_seed_only_changes_noise() {
    let clean = |seed| synth_waveform(&AccentSpec::canonical(seed), "we go", 0).unwrap();
    assert_eq!(clean(1), clean(2));
    let noisy = |seed| synth_waveform(&AccentSpec { snr_db: 10.0, ..AccentSpec::canonical(seed) }, "we go", 0).unwrap();
    let (a, b) = (noisy(1), noisy(2));
    assert_eq!(a.len(), b.len());
    assert_ne!(a, b);
}
