use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::text::{BOS, EOS, PAD};
use crate::Error;

fn random_example(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Example {
    let v = cfg.vocab_size as u32;
    let n_in = rng.random_range(3..=cfg.max_input_len.min(10));
    let n_out = rng.random_range(1..cfg.max_output_len - 1);
    let mut target = vec![BOS];
    target.extend((0..n_out).map(|_| rng.random_range(14..v)));
    target.push(EOS);
    Example {
        input: (0..n_in).map(|_| rng.random_range(14..v)).collect(),
        target,
        embedding: cfg
            .use_embedding_channel
            .then(|| (0..cfg.embedding_dim).map(|_| rng.random_range(-1.0..1.0)).collect()),
    }
}

fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let n_heads = [1, 2][rng.random_range(0..2)];
    ModelConfig {
        vocab_size: rng.random_range(16..24),
        d_model: 4 * n_heads,
        n_heads,
        n_enc_layers: rng.random_range(1..3),
        n_dec_layers: rng.random_range(1..3),
        d_ff: rng.random_range(4..12),
        max_input_len: 12,
        max_output_len: 6,
        dropout_rate: 0.0,
        use_embedding_channel: rng.random_bool(0.5),
        embedding_dim: 5,
    }
}

/// Relative error with an absolute floor so that near-zero gradients compare
/// on absolute terms.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 1e-4;
    for trial in 0..6 {
        let cfg = random_config(&mut rng);
        let m = Seq2Seq::new(cfg.clone(), trial).unwrap();
        let examples: Vec<_> = (0..2).map(|_| random_example(&mut rng, &cfg)).collect();
        let batch = TrainBatch::from_examples(&examples);
        let (_, grads) = m.loss_and_grads(&batch).unwrap();
        let analytic = grads.flatten();
        let base = m.params.flatten();
        for _ in 0..30 {
            let k = rng.random_range(0..base.len());
            let at = |delta: f64| {
                let mut p = m.params.clone();
                let mut idx = 0;
                p.for_each_mut(|_, t| {
                    for x in t.iter_mut() {
                        if idx == k {
                            *x += delta;
                        }
                        idx += 1;
                    }
                });
                Seq2Seq::from_parts(cfg.clone(), p).unwrap().loss(&batch).unwrap()
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            let e = rel_err(analytic[k], numeric);
            assert!(e < 1e-4, "trial {trial} coord {k}: analytic {} numeric {numeric} err {e}", analytic[k]);
        }
    }
}

fn nudge(params: &mut Parameters, k: usize, delta: f64) {
    let mut idx = 0;
    params.for_each_mut(|_, t| {
        if (idx..idx + t.len()).contains(&k) {
            *t.iter_mut().nth(k - idx).unwrap() += delta;
        }
        idx += t.len();
    });
}

/// At d_model = 4 layer norm is curved enough that the O(h^2) truncation
/// error of plain central differences reaches 1e-3 relative on some
/// coordinates. Richardson extrapolation over h and h/2 cancels that term.
#[test]
fn narrow_models_match_extrapolated_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let h = 1e-4;
    for trial in 0..4 {
        let cfg = ModelConfig {
            d_model: 4,
            n_heads: 2,
            ..random_config(&mut rng)
        };
        let mut m = Seq2Seq::new(cfg.clone(), trial).unwrap();
        let examples: Vec<_> = (0..3).map(|_| random_example(&mut rng, &cfg)).collect();
        let batch = TrainBatch::from_examples(&examples);
        let analytic = m.loss_and_grads(&batch).unwrap().1.flatten();
        for (k, &a) in analytic.iter().enumerate() {
            let mut central = |step: f64| {
                nudge(&mut m.params, k, step);
                let up = m.loss(&batch).unwrap();
                nudge(&mut m.params, k, -2.0 * step);
                let down = m.loss(&batch).unwrap();
                nudge(&mut m.params, k, step);
                (up - down) / (2.0 * step)
            };
            let (coarse, fine) = (central(h), central(h / 2.0));
            let numeric = (4.0 * fine - coarse) / 3.0;
            let e = rel_err(a, numeric);
            assert!(e < 1e-5, "trial {trial} coord {k}: analytic {a} numeric {numeric} err {e}");
        }
    }
}

#[test]
fn uniform_output_gives_log_vocab_loss() {
    let cfg = ModelConfig::tiny(20);
    let mut m = Seq2Seq::new(cfg.clone(), 1).unwrap();
    m.params.output.w.fill(0.0);
    m.params.output.b.fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = TrainBatch::from_examples(&[random_example(&mut rng, &cfg), random_example(&mut rng, &cfg)]);
    let loss = m.loss_and_grads(&batch).unwrap().0;
    assert!((loss - (20f64).ln()).abs() < 1e-12);
}

#[test]
fn duplicated_batch_keeps_mean_loss() {
    let cfg = ModelConfig::tiny(20);
    let m = Seq2Seq::new(cfg.clone(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ex: Vec<_> = (0..3).map(|_| random_example(&mut rng, &cfg)).collect();
    let doubled: Vec<_> = ex.iter().chain(ex.iter()).cloned().collect();
    let (a, ga) = m.loss_and_grads(&TrainBatch::from_examples(&ex)).unwrap();
    let (b, gb) = m.loss_and_grads(&TrainBatch::from_examples(&doubled)).unwrap();
    assert!((a - b).abs() < 1e-12);
    for (x, y) in ga.flatten().iter().zip(gb.flatten()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn empty_batch_is_an_error() {
    let m = Seq2Seq::new(ModelConfig::tiny(20), 1).unwrap();
    assert!(matches!(m.loss_and_grads(&TrainBatch::from_examples(&[])), Err(Error::EmptyBatch)));
}

#[test]
fn decoder_is_causal() {
    let cfg = ModelConfig::tiny(20);
    let m = Seq2Seq::new(cfg, 5).unwrap();
    let enc = m.encode(&[15, 16, 17, 18], None, None).unwrap();
    let a = m.decode_logits(&enc, &[BOS, 15, 16, 17]).unwrap();
    let b = m.decode_logits(&enc, &[BOS, 15, 19, 14]).unwrap();
    for r in 0..2 {
        assert_eq!(a.row(r), b.row(r));
    }
    assert_ne!(a.row(2), b.row(2));
}

#[test]
fn padding_does_not_change_outputs() {
    let cfg = ModelConfig::tiny(20);
    let m = Seq2Seq::new(cfg, 5).unwrap();
    let plain = m.encode(&[15, 16, 17], None, None).unwrap();
    let padded = m
        .encode(&[15, 16, 17, PAD, PAD], Some(&[true, true, true, false, false]), None)
        .unwrap();
    assert_eq!(plain, padded);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let short = random_example(&mut rng, &ModelConfig::tiny(20));
    let long = Example {
        input: vec![15; 12],
        target: vec![BOS, 15, 16, 17, 18, 19, EOS],
        embedding: None,
    };
    let alone = m.loss_and_grads(&TrainBatch::from_examples(&[short.clone()])).unwrap();
    let with_long = m.loss_and_grads(&TrainBatch::from_examples(&[short.clone(), long.clone()])).unwrap();
    let long_alone = m.loss_and_grads(&TrainBatch::from_examples(&[long.clone()])).unwrap();
    let n_s = (short.target.len() - 1) as f64;
    let n_l = (long.target.len() - 1) as f64;
    let expect = (alone.0 * n_s + long_alone.0 * n_l) / (n_s + n_l);
    assert!((with_long.0 - expect).abs() < 1e-12);
}

#[test]
fn incremental_decoding_matches_full_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..5 {
        let cfg = random_config(&mut rng);
        let m = Seq2Seq::new(cfg.clone(), seed).unwrap();
        let ex = random_example(&mut rng, &cfg);
        let enc = m.encode(&ex.input, None, ex.embedding.as_deref()).unwrap();
        let full = m.decode_logits(&enc, &ex.target[..ex.target.len() - 1]).unwrap();
        let mut state = m.start_decoding(&enc);
        for (i, &t) in ex.target[..ex.target.len() - 1].iter().enumerate() {
            let step = m.step(&mut state, t).unwrap();
            for (a, b) in step.iter().zip(full.row(i)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn encoder_shapes_and_length_errors() {
    let cfg = ModelConfig { use_embedding_channel: true, ..ModelConfig::tiny(20) };
    let m = Seq2Seq::new(cfg.clone(), 1).unwrap();
    let input = [15, 16, 17, 18, 19];
    assert_eq!(m.encode(&input, None, None).unwrap().shape(), (5, 8));
    assert_eq!(m.encode(&input, None, Some(&[0.5; 8])).unwrap().shape(), (6, 8));
    assert!(matches!(m.encode(&[15; 17], None, None), Err(Error::InputTooLong { len: 17, max: 16 })));
    assert!(matches!(m.encode(&[25], None, None), Err(Error::TokenOutOfRange { id: 25, .. })));
    let enc = m.encode(&input, None, None).unwrap();
    assert!(matches!(m.decode_logits(&enc, &[BOS; 9]), Err(Error::PrefixTooLong { len: 9, max: 8 })));
}

#[test]
fn zero_and_absent_embeddings_differ() {
    let cfg = ModelConfig { use_embedding_channel: true, ..ModelConfig::tiny(20) };
    let m = Seq2Seq::new(cfg, 1).unwrap();
    let zero = m.encode(&[15, 16], None, Some(&[0.0; 8])).unwrap();
    let none = m.encode(&[15, 16], None, None).unwrap();
    assert_ne!(zero.shape(), none.shape());
}

#[test]
fn dropout_is_seeded_and_inactive_without_rng() {
    let cfg = ModelConfig { dropout_rate: 0.3, ..ModelConfig::tiny(20) };
    let m = Seq2Seq::new(cfg.clone(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = TrainBatch::from_examples(&[random_example(&mut rng, &cfg)]);
    let a = m.loss_and_grads_with(&batch, Some(&mut ChaCha8Rng::seed_from_u64(1))).unwrap().0;
    let b = m.loss_and_grads_with(&batch, Some(&mut ChaCha8Rng::seed_from_u64(1))).unwrap().0;
    let c = m.loss_and_grads(&batch).unwrap().0;
    assert_eq!(a, b);
    assert_eq!(c, m.loss(&batch).unwrap());
    assert_ne!(a, c);
}

#[test]
fn overfits_a_handful_of_examples() {
    let cfg = ModelConfig { d_model: 16, n_heads: 2, d_ff: 32, ..ModelConfig::tiny(24) };
    let mut m = Seq2Seq::new(cfg.clone(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ex: Vec<_> = (0..8).map(|_| random_example(&mut rng, &cfg)).collect();
    let batch = TrainBatch::from_examples(&ex);
    let mut opt = Adam::new(AdamConfig { learning_rate: 1e-2, ..AdamConfig::default() }, &m.params);
    let mut loss = f64::INFINITY;
    for _ in 0..200 {
        let (l, g) = m.loss_and_grads(&batch).unwrap();
        loss = l;
        if loss < 0.05 {
            break;
        }
        opt.step(&mut m.params, &g).unwrap();
    }
    assert!(loss < 0.05, "final loss {loss}");
}

#[test]
fn from_parts_rejects_mismatched_shapes() {
    let p = Parameters::init(&ModelConfig::tiny(20), 0).unwrap();
    assert!(matches!(Seq2Seq::from_parts(ModelConfig::tiny(21), p), Err(Error::ShapeMismatch(_))));
}
