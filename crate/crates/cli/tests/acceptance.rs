//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails. Criteria 5–9 share one prepared dataset and one
//! text-only model at the quick preset.
//!
//! Run alone with `cargo test --release -p attrgen-cli --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use attrgen::catalog::PacScope;
use attrgen::decode::{beam_search, confidence, greedy, ModelScorer, ScoredSequence, StepScorer};
use attrgen::eval::{is_match, threshold_search, EvalRecord, Threshold};
use attrgen::model::layers::log_softmax_row;
use attrgen::model::{Adam, AdamConfig, Example, ModelConfig, Seq2Seq, TrainBatch};
use attrgen::text::{ValueSet, BOS, EOS, PAD};
use attrgen::{seeds, Result};
use attrgen_cli::artifacts;
use attrgen_cli::config::{ExperimentConfig, ExperimentKind};
use attrgen_cli::experiments::{self, Lab};
use rand::Rng;

// Pinned tolerances and budgets.
const GRAD_H: f64 = 1e-4;
const GRAD_MAX_REL_ERR: f64 = 1e-4;
/// Relative error denominator floor: `|a - n| / max(|a|, |n|, floor)`.
/// Central differences at h = 1e-4 carry up to ~1e-8 absolute truncation
/// error (h^2/6 times the third derivative), so gradients below the floor
/// are held to an absolute 1e-8.
const GRAD_REL_FLOOR: f64 = 1e-4;
const GRAD_CONFIGS: u64 = 20;
const OVERFIT_EXAMPLES: usize = 32;
const OVERFIT_MAX_UPDATES: usize = 500;
const THRESHOLD_INSTANCES: u64 = 1000;
const BEAM_SEEDS: u64 = 100;
const CONFIDENCE_PAIR: f64 = 0.880_797;
const CONFIDENCE_TOL: f64 = 1e-6;
const SCORE_TOL: f64 = 1e-12;
const EXPLICIT_TAGGER_RECALL: f64 = 0.9;
const BEYOND_EXTRACTION_GENERATIVE_RECALL: f64 = 0.5;
const ZERO_SHOT_BASELINE_FACTOR: f64 = 3.0;
const APPLICABILITY_FLOOR: f64 = 0.8;
const MULTIMODAL_IMAGE_GAIN: f64 = 0.3;
const MULTIMODAL_NON_IMAGE_BAND: f64 = 0.05;
/// The ablated model's deficit counts as caused by negative inputs when the
/// deficit on gold-valued records alone is at most this share of it.
const ATTRIBUTION_SHARE: f64 = 0.5;
const SUITE_SEED: u64 = 7;

struct Verdicts {
    lines: Vec<(usize, bool)>,
}

impl Verdicts {
    fn record(&mut self, n: usize, name: &str, pass: bool, elapsed: Duration, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {tag} [{name}] ({:.1}s) {detail}", elapsed.as_secs_f64());
        self.lines.push((n, pass));
    }
}

// ------------------------------------------------------------ criterion 1

fn random_config(rng: &mut impl Rng) -> ModelConfig {
    // d_model = 4 is left to the core unit tests: there layer-norm curvature
    // puts the truncation error of h = 1e-4 differences above the tolerance.
    let d_model = [8, 16][rng.random_range(0..2)];
    let n_heads = [1, 2, 4][rng.random_range(0..3)];
    ModelConfig {
        vocab_size: rng.random_range(16..22),
        d_model,
        n_heads,
        n_enc_layers: rng.random_range(1..3),
        n_dec_layers: rng.random_range(1..3),
        d_ff: [8, 12][rng.random_range(0..2)],
        max_input_len: 8,
        max_output_len: 5,
        dropout_rate: 0.0,
        use_embedding_channel: rng.random_bool(0.5),
        embedding_dim: 3,
    }
}

fn random_batch(cfg: &ModelConfig, rng: &mut impl Rng, n: usize) -> TrainBatch {
    let examples: Vec<Example> = (0..n)
        .map(|_| {
            let li = rng.random_range(2..=cfg.max_input_len);
            let lo = rng.random_range(1..cfg.max_output_len);
            let mut target = vec![BOS];
            target.extend((0..lo).map(|_| rng.random_range(3..cfg.vocab_size as u32)));
            target.push(EOS);
            Example {
                input: (0..li).map(|_| rng.random_range(1..cfg.vocab_size as u32)).collect(),
                target,
                embedding: rng
                    .random_bool(0.7)
                    .then(|| (0..cfg.embedding_dim).map(|_| rng.random_range(-1.0..1.0)).collect()),
            }
        })
        .collect();
    TrainBatch::from_examples(&examples)
}

/// Central differences over every parameter coordinate.
fn max_gradient_error(model: &mut Seq2Seq, batch: &TrainBatch) -> Result<(f64, f64)> {
    let (_, grads) = model.loss_and_grads(batch)?;
    let analytic: Vec<f64> = grads.flatten();
    let n = analytic.len();
    let (mut worst, mut worst_abs): (f64, f64) = (0.0, 0.0);
    for i in 0..n {
        let nudge = |m: &mut Seq2Seq, delta: f64| {
            let mut seen = 0;
            m.params.for_each_mut(|_, t| {
                if i >= seen && i < seen + t.len() {
                    let slot = t.iter_mut().nth(i - seen).unwrap();
                    *slot += delta;
                }
                seen += t.len();
            });
        };
        nudge(model, GRAD_H);
        let up = model.loss(batch)?;
        nudge(model, -2.0 * GRAD_H);
        let down = model.loss(batch)?;
        nudge(model, GRAD_H);
        let numeric = (up - down) / (2.0 * GRAD_H);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_REL_FLOOR);
        worst = worst.max(rel);
        worst_abs = worst_abs.max((a - numeric).abs());
    }
    Ok((worst, worst_abs))
}

fn criterion_gradients() -> Result<(bool, String)> {
    let mut rng = seeds::stream(SUITE_SEED, "acceptance-grad", 0);
    let (mut worst, mut worst_abs): (f64, f64) = (0.0, 0.0);
    let mut coords = 0;
    for i in 0..GRAD_CONFIGS {
        let cfg = random_config(&mut rng);
        let mut model = Seq2Seq::new(cfg, i)?;
        let batch = random_batch(&cfg, &mut rng, 3);
        coords += model.params.num_params();
        let (rel, abs) = max_gradient_error(&mut model, &batch)?;
        worst = worst.max(rel);
        worst_abs = worst_abs.max(abs);
    }
    Ok((
        worst < GRAD_MAX_REL_ERR,
        format!("{GRAD_CONFIGS} configs, {coords} coordinates, max rel err {worst:.2e} (limit {GRAD_MAX_REL_ERR:.0e}), max abs err {worst_abs:.2e}"),
    ))
}

// ------------------------------------------------------------ criterion 2

fn criterion_overfit() -> Result<(bool, String)> {
    let cfg = ModelConfig {
        vocab_size: 24,
        d_model: 16,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        d_ff: 32,
        max_input_len: 8,
        max_output_len: 5,
        dropout_rate: 0.0,
        use_embedding_channel: false,
        embedding_dim: 4,
    };
    let mut rng = seeds::stream(SUITE_SEED, "acceptance-overfit", 0);
    let examples: Vec<Example> = (0..OVERFIT_EXAMPLES)
        .map(|_| {
            let mut target = vec![BOS];
            // ordinary tokens only; decoding never emits reserved markers
            target.extend((0..rng.random_range(1..4)).map(|_| rng.random_range(14..24)));
            target.push(EOS);
            Example {
                input: (0..rng.random_range(3..=8)).map(|_| rng.random_range(14..24)).collect(),
                target,
                embedding: None,
            }
        })
        .collect();
    let batch = TrainBatch::from_examples(&examples);
    let mut model = Seq2Seq::new(cfg, 11)?;
    let mut opt = Adam::new(AdamConfig { learning_rate: 1e-2, ..AdamConfig::default() }, &model.params);
    let exact = |m: &Seq2Seq| -> Result<usize> {
        let mut ok = 0;
        for e in &examples {
            let scorer = ModelScorer::new(m, m.encode(&e.input, None, None)?);
            ok += usize::from(greedy(&scorer, cfg.max_output_len)?.tokens == e.target);
        }
        Ok(ok)
    };
    let mut reached = None;
    let mut last = 0;
    for step in 1..=OVERFIT_MAX_UPDATES {
        let (_, g) = model.loss_and_grads(&batch)?;
        opt.step(&mut model.params, &g)?;
        if step % 10 == 0 {
            last = exact(&model)?;
            if last == OVERFIT_EXAMPLES {
                reached = Some(step);
                break;
            }
        }
    }
    Ok(match reached {
        Some(s) => (true, format!("{OVERFIT_EXAMPLES}/{OVERFIT_EXAMPLES} exact after {s} updates")),
        None => (false, format!("{last}/{OVERFIT_EXAMPLES} exact after {OVERFIT_MAX_UPDATES} updates")),
    })
}

// ------------------------------------------------------------ criterion 3

/// Tries every distinct confidence as a threshold and keeps the smallest
/// qualifying one.
fn brute_force_threshold(records: &[EvalRecord], p: f64, s: usize) -> Option<Threshold> {
    let n_gold = records.iter().filter(|r| r.gold.is_values()).count();
    let mut ts: Vec<f64> = records.iter().map(|r| r.confidence).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    for t in ts {
        let backfills: Vec<&EvalRecord> = records.iter().filter(|r| r.predicted.is_values() && r.confidence >= t).collect();
        let correct = backfills.iter().filter(|r| is_match(&r.predicted, &r.gold)).count();
        if backfills.is_empty() {
            continue;
        }
        let precision = correct as f64 / backfills.len() as f64;
        if backfills.len() >= s && precision >= p {
            // a lower t admitting exactly the same backfills is equivalent;
            // report the smallest backfill confidence
            let threshold = backfills.iter().map(|r| r.confidence).fold(f64::INFINITY, f64::min);
            return Some(Threshold {
                threshold,
                precision,
                recall: if n_gold == 0 { 0.0 } else { correct as f64 / n_gold as f64 },
                support: backfills.len(),
            });
        }
    }
    None
}

fn random_pac(rng: &mut impl Rng) -> Vec<EvalRecord> {
    let values = ["red", "blue", "green"];
    let pick = |rng: &mut dyn rand::RngCore| -> ValueSet {
        match rng.next_u32() % 5 {
            0 => ValueSet::NotApplicable,
            1 => ValueSet::NotObtainable,
            k => ValueSet::single(values[(k as usize) % 3]).unwrap(),
        }
    };
    let n = rng.random_range(0..60);
    (0..n)
        .map(|i| {
            let gold = pick(rng);
            let predicted = if rng.random_bool(0.6) { gold.clone() } else { pick(rng) };
            EvalRecord {
                pac: PacScope::new("shirt", "color", "us"),
                product_id: format!("p{i}"),
                gold,
                predicted,
                // coarse grid so ties are common
                confidence: rng.random_range(0..12) as f64 / 11.0,
            }
        })
        .collect()
}

/// Next-token log-probabilities depend on step and previous token only.
#[derive(Clone)]
struct Table {
    logp: Vec<Vec<Vec<f64>>>,
}

impl StepScorer for Table {
    type State = usize;
    fn start(&self) -> usize {
        0
    }
    fn advance(&self, step: &mut usize, token: u32) -> Result<Vec<f64>> {
        let row = self.logp[*step][token as usize].clone();
        *step += 1;
        Ok(row)
    }
}

fn random_table(seed: u64, vocab: usize, steps: usize) -> Table {
    let mut rng = seeds::stream(seed, "acceptance-table", 0);
    let ties = seed % 3 == 0;
    let logp = (0..steps)
        .map(|_| {
            (0..vocab)
                .map(|_| {
                    let mut raw: Vec<f64> = (0..vocab)
                        .map(|_| if ties { rng.random_range(0..3) as f64 } else { rng.random_range(-3.0..3.0) })
                        .collect();
                    raw[PAD as usize] = f64::NEG_INFINITY;
                    raw[BOS as usize] = f64::NEG_INFINITY;
                    log_softmax_row(&raw)
                })
                .collect()
        })
        .collect();
    Table { logp }
}

/// All complete sequences: ending at the first EOS or cut at `max_len`,
/// ranked by length-normalized score, ties by token ids.
fn enumerate_sequences(t: &Table, vocab: usize, max_len: usize) -> Vec<ScoredSequence> {
    fn walk(t: &Table, vocab: usize, max_len: usize, seq: Vec<u32>, lp: f64, out: &mut Vec<ScoredSequence>) {
        let step = seq.len() - 1;
        for tok in 0..vocab as u32 {
            let l = t.logp[step][*seq.last().unwrap() as usize][tok as usize];
            if l == f64::NEG_INFINITY {
                continue;
            }
            let mut next = seq.clone();
            next.push(tok);
            if tok == EOS || step + 1 == max_len {
                let n = (next.len() - 1) as f64;
                out.push(ScoredSequence { tokens: next, score: (lp + l) / n });
            } else {
                walk(t, vocab, max_len, next, lp + l, out);
            }
        }
    }
    let mut out = Vec::new();
    walk(t, vocab, max_len, vec![BOS], 0.0, &mut out);
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
    out
}

fn criterion_oracles() -> Result<(bool, String)> {
    let mut rng = seeds::stream(SUITE_SEED, "acceptance-threshold", 0);
    let mut threshold_mismatches = 0;
    for _ in 0..THRESHOLD_INSTANCES {
        let recs = random_pac(&mut rng);
        let p = [0.5, 0.8, 0.9, 0.96][rng.random_range(0..4)];
        let s = rng.random_range(1..10);
        let (got, want) = (threshold_search(&recs, p, s), brute_force_threshold(&recs, p, s));
        let same = match (got, want) {
            (None, None) => true,
            (Some(g), Some(w)) => {
                g.support == w.support
                    && g.threshold == w.threshold
                    && (g.precision - w.precision).abs() < SCORE_TOL
                    && (g.recall - w.recall).abs() < SCORE_TOL
            }
            _ => false,
        };
        threshold_mismatches += usize::from(!same);
    }
    let mut beam_mismatches = 0;
    for seed in 0..BEAM_SEEDS {
        let vocab = 3 + (seed as usize % 6);
        let max_len = 1 + (seed as usize % 4);
        let table = random_table(seed, vocab, max_len);
        let all = enumerate_sequences(&table, vocab, max_len);
        // wide enough to never prune
        let got = beam_search(&table, vocab.pow(max_len as u32), max_len)?;
        let same = got.len() == all.len()
            && got.iter().zip(&all).all(|(g, w)| g.tokens == w.tokens && (g.score - w.score).abs() < SCORE_TOL);
        beam_mismatches += usize::from(!same);
    }
    Ok((
        threshold_mismatches == 0 && beam_mismatches == 0,
        format!(
            "threshold: {threshold_mismatches}/{THRESHOLD_INSTANCES} mismatches; beam: {beam_mismatches}/{BEAM_SEEDS} mismatches"
        ),
    ))
}

// ------------------------------------------------------------ criterion 4

fn criterion_decode_identities() -> Result<(bool, String)> {
    let mut rng = seeds::stream(SUITE_SEED, "acceptance-greedy", 0);
    let mut differing = 0;
    for i in 0..100u64 {
        let mut cfg = random_config(&mut rng);
        cfg.use_embedding_channel = false;
        let model = Seq2Seq::new(cfg, 100 + i)?;
        let input: Vec<u32> = (0..rng.random_range(2..=cfg.max_input_len)).map(|_| rng.random_range(1..cfg.vocab_size as u32)).collect();
        let scorer = ModelScorer::new(&model, model.encode(&input, None, None)?);
        let b = beam_search(&scorer, 1, cfg.max_output_len)?;
        let g = greedy(&scorer, cfg.max_output_len)?;
        if b.len() != 1 || b[0].tokens != g.tokens || (b[0].score - g.score).abs() > SCORE_TOL {
            differing += 1;
        }
    }
    let pair = confidence(&[-1.0, -3.0])?;
    let equal: Vec<bool> = (1..=6).map(|k| confidence(&vec![-0.37; k]).map(|c| c == 1.0 / k as f64)).collect::<Result<_>>()?;
    let pass = differing == 0 && (pair - CONFIDENCE_PAIR).abs() <= CONFIDENCE_TOL && equal.iter().all(|&x| x);
    Ok((
        pass,
        format!("K=1 vs greedy: {differing}/100 differ; confidence(-1,-3) = {pair:.7}; equal scores give 1/K exactly for K=1..6: {}", equal.iter().all(|&x| x)),
    ))
}

// ----------------------------------------------------------- criterion 10

fn metrics_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for (sub, files) in [
        ("model", &["train_log.csv", "checkpoint/weights.bin"][..]),
        ("pred", &["predictions.jsonl"][..]),
        ("eval", &["pac_reports.csv", "aggregate.json"][..]),
    ] {
        for f in files {
            out.insert(format!("{sub}/{f}"), fs::read(dir.join(sub).join(f))?);
        }
    }
    Ok(out)
}

fn pipeline_run(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    artifacts::cmd_synth(cfg, &dir.join("data"))?;
    artifacts::cmd_train(cfg, &dir.join("data"), &dir.join("model"))?;
    artifacts::cmd_predict(cfg, &dir.join("data"), &dir.join("model"), &dir.join("pred"))?;
    artifacts::cmd_eval(cfg, &dir.join("data"), &dir.join("pred"), &dir.join("eval"))?;
    Ok(())
}

fn criterion_determinism() -> Result<(bool, String)> {
    let mut cfg = ExperimentConfig::quick(ExperimentKind::Main, SUITE_SEED);
    cfg.n_products = 600;
    cfg.stage1.max_epochs = 2;
    cfg.stage2.max_epochs = 1;
    let a = tempfile::tempdir()?;
    let b = tempfile::tempdir()?;
    pipeline_run(&cfg, a.path())?;
    pipeline_run(&cfg, b.path())?;
    let (fa, fb) = (metrics_files(a.path())?, metrics_files(b.path())?);
    let differing: Vec<&String> = fa.keys().filter(|k| fa[*k] != fb[*k]).collect();
    Ok((
        differing.is_empty(),
        format!("{} files compared across two runs, differing: {differing:?}", fa.len()),
    ))
}

// -------------------------------------------------------- criteria 5 – 9

fn fmt(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |v| format!("{v:.3}"))
}

#[test]
fn acceptance() {
    let mut v = Verdicts { lines: Vec::new() };
    let timed = |f: fn() -> Result<(bool, String)>| {
        let t = Instant::now();
        let r = f().expect("criterion run");
        (r, t.elapsed())
    };

    let ((ok, d), e) = timed(criterion_gradients);
    v.record(1, "gradient check", ok && e < Duration::from_secs(120), e, d);
    let ((ok, d), e) = timed(criterion_overfit);
    v.record(2, "overfit sanity", ok && e < Duration::from_secs(120), e, d);
    let ((ok, d), e) = timed(criterion_oracles);
    v.record(3, "metric and beam oracles", ok && e < Duration::from_secs(300), e, d);
    let ((ok, d), e) = timed(criterion_decode_identities);
    v.record(4, "decode identities", ok, e, d);

    let t = Instant::now();
    let cfg = ExperimentConfig::quick(ExperimentKind::Main, SUITE_SEED);
    let mut lab = Lab::new(cfg).expect("lab");
    let main = experiments::run_main(&mut lab).expect("main experiment");
    let m = &main.report;
    println!(
        "  main: generative AR@P {:.3} ({}/{}), Recall@P {}; tagger AR@P {:.3}; mlc AR@P {:.3}",
        m.generative.aggregate.ar_at_p,
        m.generative.aggregate.n_accepted,
        m.generative.aggregate.n_pacs,
        fmt(m.generative.aggregate.recall_at_p),
        m.tagger.aggregate.ar_at_p,
        m.mlc.aggregate.ar_at_p
    );
    let ok = m.beyond_extraction.tagger == Some(0.0)
        && m.beyond_extraction.generative.is_some_and(|r| r > BEYOND_EXTRACTION_GENERATIVE_RECALL)
        && m.explicit.tagger.is_some_and(|r| r >= EXPLICIT_TAGGER_RECALL);
    v.record(
        6,
        "extraction ceiling",
        ok,
        t.elapsed(),
        format!(
            "periphrastic+implicit+derivable (n={}): tagger {} generative {}; explicit (n={}): tagger {} generative {}",
            m.beyond_extraction.n,
            fmt(m.beyond_extraction.tagger),
            fmt(m.beyond_extraction.generative),
            m.explicit.n,
            fmt(m.explicit.tagger),
            fmt(m.explicit.generative)
        ),
    );

    let t = Instant::now();
    let neg = experiments::run_negative_ablation(&mut lab).expect("negative ablation").report;
    let full_delta = neg.delta_ar_at_p;
    let attributable = neg.without_model_spurious_values > neg.with_model_spurious_values
        && neg.gold_slice_delta_ar_at_p <= ATTRIBUTION_SHARE * full_delta;
    v.record(
        5,
        "negative-signal ablation",
        full_delta > 0.0 && attributable,
        t.elapsed(),
        format!(
            "AR@P with {:.3} vs without {:.3}; gold-only slice {:.3} vs {:.3}; value answers on NA/NO inputs {} vs {}; without-model NA/NO outputs {}",
            neg.with_negatives.aggregate.ar_at_p,
            neg.without_negatives.aggregate.ar_at_p,
            neg.with_negatives_gold_slice.ar_at_p,
            neg.without_negatives_gold_slice.ar_at_p,
            neg.with_model_spurious_values,
            neg.without_model_spurious_values,
            neg.without_model_negative_outputs
        ),
    );

    let t = Instant::now();
    let zs = experiments::run_zero_shot(&mut lab).expect("zero-shot").report;
    let acc_b = zs.with_catalog.subset_b.value_recall;
    let base = zs.majority_baseline_b;
    let rec = |a: &experiments::ZeroShotArm| a.subset_b.aggregate.as_ref().and_then(|x| x.recall_at_p).unwrap_or(0.0);
    let ok = acc_b.zip(base).is_some_and(|(a, b)| a >= ZERO_SHOT_BASELINE_FACTOR * b)
        && rec(&zs.with_catalog) >= rec(&zs.without_catalog)
        && zs.with_catalog.subset_b_strong_samples == 0
        && zs.without_catalog.subset_b_strong_samples == 0;
    v.record(
        7,
        "zero-shot",
        ok,
        t.elapsed(),
        format!(
            "{} held-out PACs; subset-B accuracy {} vs majority {} (text-determined records only: {}); subset-B Recall@P with catalog {:.3} vs without {:.3}; B strong samples in training {}",
            zs.subset_b.len(),
            fmt(acc_b),
            fmt(base),
            fmt(zs.with_catalog.subset_b.text_value_recall),
            rec(&zs.with_catalog),
            rec(&zs.without_catalog),
            zs.with_catalog.subset_b_strong_samples + zs.without_catalog.subset_b_strong_samples
        ),
    );

    let t = Instant::now();
    let app = experiments::run_applicability(&mut lab).expect("applicability").report;
    let (g, b) = (app.generative.overall.unwrap_or(0.0), app.bag_of_words.overall.unwrap_or(0.0));
    v.record(
        8,
        "applicability",
        g >= b && g > APPLICABILITY_FLOOR && b > APPLICABILITY_FLOOR,
        t.elapsed(),
        format!(
            "{} records: generative {g:.3}, bag-of-words {b:.3}, encoder head {}, majority {}",
            app.n_records,
            fmt(app.encoder_head.overall),
            fmt(app.majority.overall)
        ),
    );

    let t = Instant::now();
    let work = tempfile::tempdir().expect("tempdir");
    let mm = experiments::run_multimodal(&mut lab, work.path()).expect("multimodal").report;
    let ok = mm.init_audit.all_shared_equal
        && mm.image_recall.delta.is_some_and(|d| d >= MULTIMODAL_IMAGE_GAIN)
        && mm.non_image_recall.delta.is_some_and(|d| d.abs() <= MULTIMODAL_NON_IMAGE_BAND);
    v.record(
        9,
        "multimodal",
        ok,
        t.elapsed(),
        format!(
            "image-only recall {} -> {}; other attributes {} -> {}; init audit {} shared tensors equal: {}",
            fmt(mm.image_recall.text_only),
            fmt(mm.image_recall.multimodal),
            fmt(mm.non_image_recall.text_only),
            fmt(mm.non_image_recall.multimodal),
            mm.init_audit.shared_tensors,
            mm.init_audit.all_shared_equal
        ),
    );

    let ((ok, d), e) = timed(criterion_determinism);
    v.record(10, "determinism", ok, e, d);

    v.lines.sort();
    let failed: Vec<usize> = v.lines.iter().filter(|(_, p)| !p).map(|(n, _)| *n).collect();
    println!("acceptance: {}/{} criteria pass", v.lines.len() - failed.len(), v.lines.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
