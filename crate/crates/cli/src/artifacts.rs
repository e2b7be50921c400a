//! The on-disk pipeline: synth → train → predict → eval. Each step reads
//! only the files it needs, verifies their manifests, and writes its own
//! directory with a manifest. Test-set gold labels live in their own file
//! and are read by `eval` alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use attrgen::catalog::{read_jsonl, write_jsonl, LabelRecord, Product};
use attrgen::decode::{PredictionRow, Predictor};
use attrgen::eval::{aggregate, evaluate, write_pac_reports_csv, AggregateReport, EvalRecord};
use attrgen::model::checkpoint;
use attrgen::synth::{emit_dataset, generate_world, split_products, Dataset, ProductSplit, World};
use attrgen::text::{Codec, Vocabulary};
use attrgen::{seeds, Error, Result};

use crate::config::{ExperimentConfig, WorldSource};
use crate::manifest::Manifest;
use crate::pipeline::{keep_all, train_generative, Prepared};

pub const WORLD: &str = "world.json";
pub const PRODUCTS: &str = "products.jsonl";
pub const TRAIN_LABELS: &str = "labels_train.jsonl";
pub const TEST_LABELS: &str = "labels_test.jsonl";
pub const SPLIT: &str = "split.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const VOCAB: &str = "vocab.txt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const PAC_REPORTS: &str = "pac_reports.csv";
pub const AGGREGATE: &str = "aggregate.json";

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn fresh_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Generates the world and dataset and writes them with the product split.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fresh_dir(out)?;
    let mut manifest = Manifest::new("synth", cfg)?;
    if let WorldSource::File(p) = &cfg.world {
        manifest.add_input(p)?;
    }
    let world = generate_world(&cfg.world.spec()?)?;
    let data = emit_dataset(&world, cfg.n_products, cfg.strong_fraction)?;
    let split = split_products(&data, cfg.eval_fraction, cfg.test_fraction, seeds::derive(cfg.seed, "split", 0))?;
    let (test, train): (Vec<LabelRecord>, Vec<LabelRecord>) =
        data.labels.into_iter().partition(|l| split.test.contains(&l.product_id));
    write_json(&out.join(WORLD), &world)?;
    write_jsonl(out.join(PRODUCTS), &data.products)?;
    write_jsonl(out.join(TRAIN_LABELS), &train)?;
    write_jsonl(out.join(TEST_LABELS), &test)?;
    write_json(&out.join(SPLIT), &split)?;
    manifest.finish(out)
}

struct TrainingInputs {
    world: World,
    products: Vec<Product>,
    train_labels: Vec<LabelRecord>,
    split: ProductSplit,
}

fn read_training_inputs(data_dir: &Path, manifest: &mut Manifest) -> Result<TrainingInputs> {
    Manifest::verify(data_dir)?;
    for f in [WORLD, PRODUCTS, TRAIN_LABELS, SPLIT] {
        manifest.add_input(&data_dir.join(f))?;
    }
    Ok(TrainingInputs {
        world: read_json(&data_dir.join(WORLD))?,
        products: read_jsonl(data_dir.join(PRODUCTS))?,
        train_labels: read_jsonl(data_dir.join(TRAIN_LABELS))?,
        split: read_json(&data_dir.join(SPLIT))?,
    })
}

/// Two-stage generative training from a synth directory.
pub fn cmd_train(cfg: &ExperimentConfig, data_dir: &Path, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let mut manifest = Manifest::new("train", cfg)?;
    let inputs = read_training_inputs(data_dir, &mut manifest)?;
    let data = Dataset {
        products: inputs.products,
        labels: inputs.train_labels,
    };
    let prep = Prepared::from_parts(cfg, inputs.world, data, inputs.split)?;
    let use_channel = cfg.kind == crate::config::ExperimentKind::Multimodal;
    let trained = train_generative(&prep, cfg, &keep_all, None, use_channel)?;
    fresh_dir(out)?;
    let steps = trained.log.epochs.len() as u64;
    checkpoint::save(&out.join(CHECKPOINT_DIR), &trained.predictor.model, steps, cfg.seed)?;
    prep.codec.vocab().save(out.join(VOCAB))?;
    trained.log.write_csv(out.join(TRAIN_LOG))?;
    manifest.finish(out)
}

/// Loads a trained predictor from a `train` directory.
pub fn load_predictor(cfg: &ExperimentConfig, model_dir: &Path) -> Result<Predictor> {
    let (model, _) = checkpoint::load(&model_dir.join(CHECKPOINT_DIR))?;
    let vocab = Vocabulary::load(model_dir.join(VOCAB))?;
    let codec = Codec::new(vocab, cfg.model.max_input_len)?;
    Ok(Predictor::new(model, codec).with_beam_width(cfg.beam_width))
}

/// Predicts every listed attribute of every test product.
pub fn cmd_predict(cfg: &ExperimentConfig, data_dir: &Path, model_dir: &Path, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let mut manifest = Manifest::new("predict", cfg)?;
    Manifest::verify(data_dir)?;
    Manifest::verify(model_dir)?;
    for f in [WORLD, PRODUCTS, SPLIT] {
        manifest.add_input(&data_dir.join(f))?;
    }
    for f in [VOCAB, "checkpoint/weights.bin"] {
        manifest.add_input(&model_dir.join(f))?;
    }
    let world: World = read_json(&data_dir.join(WORLD))?;
    let products: Vec<Product> = read_jsonl(data_dir.join(PRODUCTS))?;
    let split: ProductSplit = read_json(&data_dir.join(SPLIT))?;
    let predictor = load_predictor(cfg, model_dir)?;
    let mut rows = Vec::new();
    for p in products.iter().filter(|p| split.test.contains(&p.id)) {
        let attrs = world
            .pt_attributes
            .get(&p.pt)
            .ok_or_else(|| Error::InvalidArgument(format!("product {} has unknown type {}", p.id, p.pt)))?;
        for a in attrs {
            let pred = predictor.predict(a, p)?;
            rows.push(predictor.output_row(p, a, &pred));
        }
    }
    fresh_dir(out)?;
    write_jsonl(out.join(PREDICTIONS), &rows)?;
    manifest.finish(out)
}

/// Joins prediction rows with gold records; every strong-labelled gold
/// record must have a prediction.
pub fn join_predictions(rows: &[PredictionRow], gold: &[LabelRecord]) -> Result<Vec<EvalRecord>> {
    let by_key: BTreeMap<(&str, &str), &PredictionRow> =
        rows.iter().map(|r| ((r.product_id.as_str(), r.attribute.as_str()), r)).collect();
    let mut out = Vec::new();
    for l in gold {
        let Some(g) = &l.strong_label else { continue };
        let row = by_key
            .get(&(l.product_id.as_str(), l.pac.attribute.as_str()))
            .ok_or_else(|| Error::InvalidArgument(format!("no prediction for {} / {}", l.product_id, l.pac.attribute)))?;
        out.push(EvalRecord {
            pac: l.pac.clone(),
            product_id: l.product_id.clone(),
            gold: g.clone(),
            predicted: row.prediction.clone(),
            confidence: row.confidence,
        });
    }
    Ok(out)
}

/// Per-PAC threshold search and the aggregate report.
pub fn cmd_eval(cfg: &ExperimentConfig, data_dir: &Path, predict_dir: &Path, out: &Path) -> Result<AggregateReport> {
    cfg.validate()?;
    let mut manifest = Manifest::new("eval", cfg)?;
    Manifest::verify(data_dir)?;
    Manifest::verify(predict_dir)?;
    manifest.add_input(&data_dir.join(TEST_LABELS))?;
    manifest.add_input(&predict_dir.join(PREDICTIONS))?;
    let gold: Vec<LabelRecord> = read_jsonl(data_dir.join(TEST_LABELS))?;
    let rows: Vec<PredictionRow> = read_jsonl(predict_dir.join(PREDICTIONS))?;
    let records = join_predictions(&rows, &gold)?;
    let reports = evaluate(&records, cfg.precision, cfg.min_support);
    let agg = aggregate(&reports)?;
    fresh_dir(out)?;
    write_pac_reports_csv(out.join(PAC_REPORTS), &reports)?;
    write_json(&out.join(AGGREGATE), &agg)?;
    manifest.finish(out)?;
    Ok(agg)
}


#[derive(Debug, serde::Serialize)]
struct SummaryRow {
    run: String,
    command: String,
    arm: String,
    n_pacs: usize,
    n_accepted: usize,
    ar_at_p: f64,
    recall_at_p: Option<f64>,
}

/// Collects every `aggregate*.json` of the given run directories into one
/// CSV.
pub fn cmd_report(run_dirs: &[std::path::PathBuf], out: &Path) -> Result<()> {
    fresh_dir(out)?;
    let path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for dir in run_dirs {
        let m = Manifest::verify(dir)?;
        let run = dir.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        for name in m.outputs.keys().filter(|k| k.starts_with("aggregate") && k.ends_with(".json")) {
            let agg: AggregateReport = read_json(&dir.join(name))?;
            let arm = name.trim_start_matches("aggregate").trim_start_matches('_').trim_end_matches(".json");
            w.serialize(SummaryRow {
                run: run.clone(),
                command: m.command.clone(),
                arm: if arm.is_empty() { "-".into() } else { arm.into() },
                n_pacs: agg.n_pacs,
                n_accepted: agg.n_accepted,
                ar_at_p: agg.ar_at_p,
                recall_at_p: agg.recall_at_p,
            })
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}
