//! Shared plumbing for the drivers: world + data + split + codec, sample
//! construction, generative training and test-set prediction.

use std::collections::BTreeSet;

use attrgen::catalog::{LabelRecord, Phenomenon, Product};
use attrgen::decode::Predictor;
use attrgen::eval::EvalRecord;
use attrgen::model::Seq2Seq;
use attrgen::synth::{emit_dataset, generate_world, split_products, Dataset, ProductSplit, World};
use attrgen::text::{tokenize, Codec, Vocabulary};
use attrgen::train::{self, build_samples, check_hygiene, LabelSource, Sample, TrainLog};
use attrgen::{seeds, Result};

use crate::config::ExperimentConfig;

pub struct Prepared {
    pub world: World,
    pub data: Dataset,
    pub split: ProductSplit,
    pub codec: Codec,
}

impl Prepared {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let world = generate_world(&cfg.world.spec()?)?;
        let data = emit_dataset(&world, cfg.n_products, cfg.strong_fraction)?;
        Self::from_data(cfg, world, data)
    }

    pub fn from_data(cfg: &ExperimentConfig, world: World, data: Dataset) -> Result<Self> {
        let split = split_products(&data, cfg.eval_fraction, cfg.test_fraction, seeds::derive(cfg.seed, "split", 0))?;
        Self::from_parts(cfg, world, data, split)
    }

    /// `data` may omit held-out labels; the vocabulary only reads training
    /// products and their labels.
    pub fn from_parts(cfg: &ExperimentConfig, world: World, data: Dataset, split: ProductSplit) -> Result<Self> {
        let vocab = build_vocab(&world, &data, &split.train, cfg.vocab_min_count);
        let codec = Codec::new(vocab, cfg.model.max_input_len)?;
        Ok(Self { world, data, split, codec })
    }

    pub fn product(&self, id: &str) -> &Product {
        // ids are p{index:06} in emission order
        let idx: usize = id[1..].parse().expect("synthetic product id");
        &self.data.products[idx]
    }

    pub fn labels_in(&self, ids: &BTreeSet<String>) -> Vec<&LabelRecord> {
        self.data.labels.iter().filter(|l| ids.contains(&l.product_id)).collect()
    }

    pub fn test_labels(&self) -> Vec<&LabelRecord> {
        self.labels_in(&self.split.test)
    }

    pub fn samples(&self, labels: &[&LabelRecord], source: LabelSource) -> Result<Vec<Sample>> {
        let owned: Vec<LabelRecord> = labels.iter().map(|l| (*l).clone()).collect();
        build_samples(&self.codec, &self.data.product_index(), &owned, source)
    }
}

/// Vocabulary over training-product text, training labels and schema names.
fn build_vocab(world: &World, data: &Dataset, train_ids: &BTreeSet<String>, min_count: usize) -> Vocabulary {
    let mut corpus: Vec<String> = Vec::new();
    for p in data.products.iter().filter(|p| train_ids.contains(&p.id)) {
        corpus.extend([p.title.clone(), p.bullets.clone(), p.description.clone()]);
    }
    for l in data.labels.iter().filter(|l| train_ids.contains(&l.product_id)) {
        if let Some(w) = &l.weak_label {
            corpus.extend(w.values().iter().cloned());
        }
    }
    let spec = &world.spec;
    corpus.extend(spec.product_types.iter().cloned());
    corpus.extend(spec.countries.iter().cloned());
    corpus.extend(spec.attributes.iter().map(|a| a.name.clone()));
    Vocabulary::build(corpus.iter().flat_map(|t| tokenize(t)), min_count)
}

/// Which label records a model may learn from.
pub type LabelFilter<'a> = &'a dyn Fn(&LabelRecord, LabelSource) -> bool;

pub fn keep_all(_: &LabelRecord, _: LabelSource) -> bool {
    true
}

pub struct TrainingSets {
    pub weak: Vec<Sample>,
    pub strong: Vec<Sample>,
    pub eval: Vec<Sample>,
}

pub fn training_sets(prep: &Prepared, filter: LabelFilter) -> Result<TrainingSets> {
    let pick = |ids: &BTreeSet<String>, src: LabelSource| -> Vec<&LabelRecord> {
        prep.labels_in(ids).into_iter().filter(|l| filter(l, src)).collect()
    };
    let weak = prep.samples(&pick(&prep.split.train, LabelSource::Weak), LabelSource::Weak)?;
    let strong = prep.samples(&pick(&prep.split.train, LabelSource::Strong), LabelSource::Strong)?;
    let eval = prep.samples(&pick(&prep.split.eval, LabelSource::Strong), LabelSource::Strong)?;
    let mut held_out = prep.split.test.clone();
    held_out.extend(prep.split.eval.iter().cloned());
    check_hygiene(weak.iter().chain(&strong), &held_out)?;
    Ok(TrainingSets { weak, strong, eval })
}

pub struct Trained {
    pub predictor: Predictor,
    pub log: TrainLog,
    pub sets: TrainingSets,
}

/// Stage 1 on weak + strong, then stage 2 on strong only when any exist.
pub fn train_generative(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    filter: LabelFilter,
    init: Option<Seq2Seq>,
    use_embedding_channel: bool,
) -> Result<Trained> {
    let sets = training_sets(prep, filter)?;
    let model_cfg = cfg
        .model
        .config(prep.codec.vocab().len(), prep.world.spec.embedding_dim, use_embedding_channel);
    let model = match init {
        Some(m) => m,
        None => Seq2Seq::new(model_cfg, seeds::derive(cfg.seed, "model-init", 0))?,
    };
    let (model, mut log) = train::run_stage1(model, &prep.codec, &sets.weak, &sets.strong, &sets.eval, &cfg.stage1)?;
    let (model, log2) = if sets.strong.is_empty() {
        (model, TrainLog::default())
    } else {
        train::run_stage2(model, &prep.codec, &sets.strong, &sets.eval, &cfg.stage2)?
    };
    if !log2.epochs.is_empty() {
        log.extend(log2);
    }
    let predictor = Predictor::new(model, prep.codec.clone()).with_beam_width(cfg.beam_width);
    Ok(Trained { predictor, log, sets })
}

/// An evaluation record with its generating phenomenon, for audits.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scored {
    pub record: EvalRecord,
    pub phenomenon: Phenomenon,
}

/// Predicts every given label record that carries a strong label.
pub fn predict_all<'a>(
    prep: &Prepared,
    mut predict: impl FnMut(&str, &Product) -> Result<(attrgen::text::ValueSet, f64)>,
    labels: impl IntoIterator<Item = &'a LabelRecord>,
) -> Result<Vec<Scored>> {
    let mut out = Vec::new();
    for l in labels {
        let Some(gold) = &l.strong_label else { continue };
        let product = prep.product(&l.product_id);
        let (predicted, confidence) = predict(&l.pac.attribute, product)?;
        out.push(Scored {
            record: EvalRecord {
                pac: l.pac.clone(),
                product_id: l.product_id.clone(),
                gold: gold.clone(),
                predicted,
                confidence,
            },
            phenomenon: l.phenomenon,
        });
    }
    Ok(out)
}

pub fn generative_predictions<'a>(
    prep: &Prepared,
    predictor: &Predictor,
    labels: impl IntoIterator<Item = &'a LabelRecord>,
) -> Result<Vec<Scored>> {
    predict_all(
        prep,
        |attr, p| predictor.predict(attr, p).map(|x| (x.value_set, x.confidence)),
        labels,
    )
}

pub fn records(scored: &[Scored]) -> Vec<EvalRecord> {
    scored.iter().map(|s| s.record.clone()).collect()
}
