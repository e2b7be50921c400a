//! Two-stage training: weak and strong labels together, then strong labels
//! only, each stage stopping at a plateau and keeping its best epoch.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::catalog::{LabelRecord, PacScope, Product};
use crate::decode::{self, ModelScorer};
use crate::error::{Error, Result};
use crate::eval::is_match;
use crate::model::{Adam, AdamConfig, Example, Seq2Seq, TrainBatch};
use crate::seeds;
use crate::text::{self, Codec, ValueSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    MixedWeakStrong,
    StrongOnly,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::MixedWeakStrong => "mixed",
            Stage::StrongOnly => "strong",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalMetric {
    ExactMatchAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage: Stage,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub eval_metric: EvalMetric,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Each strong sample appears this many times per mixed-stage epoch.
    pub strong_repeat: usize,
    pub seed: u64,
}

impl StageSpec {
    pub fn new(stage: Stage) -> Self {
        Self {
            stage,
            max_epochs: 20,
            patience: 3,
            min_delta: 1e-3,
            eval_metric: EvalMetric::ExactMatchAccuracy,
            batch_size: 16,
            optimizer: AdamConfig::default(),
            strong_repeat: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 || self.strong_repeat == 0 {
            return Err(Error::InvalidConfig(
                "max_epochs, patience, batch_size and strong_repeat must be positive".into(),
            ));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::InvalidConfig("min_delta must be non-negative".into()));
        }
        Ok(())
    }
}

/// One (product, attribute) pair ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub product_id: String,
    pub pac: PacScope,
    pub input: Vec<u32>,
    /// Label the model is trained toward (weak or strong).
    pub label: ValueSet,
    pub target: Vec<u32>,
    pub embedding: Option<Vec<f64>>,
    pub weak: bool,
}

impl Sample {
    pub fn example(&self) -> Example {
        Example {
            input: self.input.clone(),
            target: self.target.clone(),
            embedding: self.embedding.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    Weak,
    Strong,
}

/// Builds samples from label records, skipping those without a label from
/// `source`.
pub fn build_samples(
    codec: &Codec,
    products: &BTreeMap<&str, &Product>,
    labels: &[LabelRecord],
    source: LabelSource,
) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(labels.len());
    for l in labels {
        let label = match source {
            LabelSource::Weak => l.weak_label.as_ref(),
            LabelSource::Strong => l.strong_label.as_ref(),
        };
        let Some(label) = label else { continue };
        let product = products
            .get(l.product_id.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("label for unknown product {}", l.product_id)))?;
        out.push(Sample {
            product_id: l.product_id.clone(),
            pac: l.pac.clone(),
            input: codec.serialize_input(&l.pac.attribute, product),
            label: label.clone(),
            target: codec.serialize_output(label)?,
            embedding: product.embedding.clone(),
            weak: source == LabelSource::Weak,
        });
    }
    Ok(out)
}

/// Fails when any training sample belongs to a held-out product.
pub fn check_hygiene<'a>(train: impl IntoIterator<Item = &'a Sample>, held_out: &BTreeSet<String>) -> Result<()> {
    let leaked: BTreeSet<&str> = train
        .into_iter()
        .filter(|s| held_out.contains(&s.product_id))
        .map(|s| s.product_id.as_str())
        .collect();
    if leaked.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{} held-out products in training data (first: {})",
            leaked.len(),
            leaked.iter().next().unwrap()
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub loss: f64,
    pub eval_accuracy: Option<f64>,
    pub wall_time_s: f64,
    pub checkpoint_id: String,
    /// Data-access audit: weak and strong samples fed to the optimizer.
    pub weak_seen: usize,
    pub strong_seen: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Checkpoint id of the selected epoch.
    pub selected: Option<String>,
}

impl TrainLog {
    pub fn extend(&mut self, other: TrainLog) {
        self.epochs.extend(other.epochs);
        self.selected = other.selected;
    }

    /// CSV with the reproducible columns only (wall time is excluded).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            epoch: usize,
            stage: &'a str,
            loss: f64,
            eval_accuracy: Option<f64>,
            checkpoint_id: &'a str,
        }
        let mut w = csv::Writer::from_path(path).map_err(crate::eval::csv_err)?;
        for e in &self.epochs {
            w.serialize(Row {
                epoch: e.epoch,
                stage: e.stage.name(),
                loss: e.loss,
                eval_accuracy: e.eval_accuracy,
                checkpoint_id: &e.checkpoint_id,
            })
            .map_err(crate::eval::csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// True iff the best value among the last `patience` entries improves on
/// the best before them by no more than `min_delta`.
pub fn plateau_detect(history: &[f64], patience: usize, min_delta: f64) -> bool {
    if patience == 0 || history.len() <= patience {
        return false;
    }
    let split = history.len() - patience;
    let before = history[..split].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let recent = history[split..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    recent - before <= min_delta
}

/// Exact-match accuracy of greedy predictions against each sample's label.
pub fn eval_accuracy(model: &Seq2Seq, codec: &Codec, samples: &[Sample]) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let mut hits = 0;
    for s in samples {
        let enc = model.encode(&s.input, None, s.embedding.as_deref())?;
        let seq = decode::greedy(&ModelScorer::new(model, enc), model.config.max_output_len)?;
        if is_match(&text::parse_output(codec.vocab(), &seq.tokens), &s.label) {
            hits += 1;
        }
    }
    Ok(Some(hits as f64 / samples.len() as f64))
}

fn run_stage(
    mut model: Seq2Seq,
    codec: &Codec,
    train: Vec<&Sample>,
    eval: &[Sample],
    spec: &StageSpec,
) -> Result<(Seq2Seq, TrainLog)> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyData(format!("no training samples for stage {}", spec.stage.name())));
    }
    let mut opt = Adam::new(spec.optimizer, &model.params);
    let mut log = TrainLog::default();
    let mut history = Vec::new();
    let mut best: Option<(f64, Seq2Seq, String)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=spec.max_epochs {
        let started = Instant::now();
        let mut rng = seeds::stream(spec.seed, spec.stage.name(), epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut weight) = (0.0, 0usize);
        let (mut weak_seen, mut strong_seen) = (0, 0);
        for chunk in order.chunks(spec.batch_size) {
            let batch_samples: Vec<&Sample> = chunk.iter().map(|&i| train[i]).collect();
            for s in &batch_samples {
                if s.weak {
                    weak_seen += 1;
                } else {
                    strong_seen += 1;
                }
            }
            let examples: Vec<Example> = batch_samples.iter().map(|s| s.example()).collect();
            let batch = TrainBatch::from_examples(&examples);
            let n = batch.n_targets();
            let drop_rng = (model.config.dropout_rate > 0.0).then_some(&mut rng);
            let (loss, grads) = model.loss_and_grads_with(&batch, drop_rng)?;
            loss_sum += loss * n as f64;
            weight += n;
            opt.step(&mut model.params, &grads)?;
        }
        let acc = eval_accuracy(&model, codec, eval)?;
        let checkpoint_id = format!("{}-epoch{epoch:02}", spec.stage.name());
        let score = acc.unwrap_or(f64::NEG_INFINITY);
        // Without eval data the latest epoch wins.
        if best.as_ref().map_or(true, |b| score > b.0 || acc.is_none()) {
            best = Some((score, model.clone(), checkpoint_id.clone()));
        }
        log.epochs.push(EpochRecord {
            epoch,
            stage: spec.stage,
            loss: loss_sum / weight.max(1) as f64,
            eval_accuracy: acc,
            wall_time_s: started.elapsed().as_secs_f64(),
            checkpoint_id,
            weak_seen,
            strong_seen,
        });
        if let Some(a) = acc {
            history.push(a);
            if plateau_detect(&history, spec.patience, spec.min_delta) {
                break;
            }
        }
    }
    let (_, model, id) = best.expect("at least one epoch ran");
    log.selected = Some(id);
    Ok((model, log))
}

/// Stage 1: the shuffled union of weak and strong samples.
pub fn run_stage1(
    model: Seq2Seq,
    codec: &Codec,
    weak: &[Sample],
    strong: &[Sample],
    eval: &[Sample],
    spec: &StageSpec,
) -> Result<(Seq2Seq, TrainLog)> {
    let mut union: Vec<&Sample> = weak.iter().collect();
    for _ in 0..spec.strong_repeat.max(1) {
        union.extend(strong.iter());
    }
    run_stage(model, codec, union, eval, spec)
}

/// Stage 2: strong samples only, continuing from the stage-1 selection.
pub fn run_stage2(
    model: Seq2Seq,
    codec: &Codec,
    strong: &[Sample],
    eval: &[Sample],
    spec: &StageSpec,
) -> Result<(Seq2Seq, TrainLog)> {
    if strong.is_empty() {
        return Err(Error::EmptyData("stage 2 needs strong labels".into()));
    }
    if let Some(s) = strong.iter().find(|s| s.weak) {
        return Err(Error::InvalidArgument(format!("weak sample {} passed to stage 2", s.product_id)));
    }
    run_stage(model, codec, strong.iter().collect(), eval, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_examples() {
        assert!(!plateau_detect(&[0.5], 3, 0.0));
        assert!(plateau_detect(&[0.5, 0.5, 0.5, 0.5], 3, 0.0));
        assert!(plateau_detect(&[0.5, 0.509, 0.5, 0.5], 3, 0.01));
        assert!(!plateau_detect(&[0.5, 0.52, 0.5, 0.5], 3, 0.01));
        let rising: Vec<f64> = (0..20).map(|i| i as f64 * 0.01).collect();
        for n in 1..=20 {
            assert!(!plateau_detect(&rising[..n], 3, 1e-3));
        }
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let spec = StageSpec {
            max_epochs: 0,
            ..StageSpec::new(Stage::MixedWeakStrong)
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn hygiene_reports_leaks() {
        let s = Sample {
            product_id: "p000001".into(),
            pac: PacScope::new("a", "b", "c"),
            input: vec![],
            label: ValueSet::NotApplicable,
            target: vec![],
            embedding: None,
            weak: false,
        };
        let held: BTreeSet<String> = ["p000001".to_string()].into();
        assert!(check_hygiene([&s], &held).is_err());
        assert!(check_hygiene([&s], &BTreeSet::new()).is_ok());
    }
}
