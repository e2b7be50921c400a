//! Experiment drivers. Each returns an [`Outcome`]: a serializable report
//! plus the evaluated arms and training logs behind it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use attrgen::baselines::{
    train_bow_classifier, train_encoder_classifier, train_mlc, train_tagger, ApplicabilityConfig, MlcConfig,
    MlcModel, TaggerConfig,
};
use attrgen::catalog::{write_jsonl, LabelRecord, PacScope, Phenomenon};
use attrgen::eval::{
    aggregate, applicability_accuracy, evaluate, exact_match_accuracy, value_recall, write_pac_reports_csv,
    AggregateReport, ApplicabilityReport, EvalRecord, PacReport, APPLICABILITY_CUT,
};
use attrgen::model::{checkpoint, ModelConfig, Seq2Seq};
use attrgen::synth::split_pacs;
use attrgen::text::ValueSet;
use attrgen::train::{LabelSource, Sample, TrainLog};
use attrgen::{seeds, Error, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::artifacts::write_json;
use crate::config::ExperimentConfig;
use crate::manifest::Manifest;
use crate::pipeline::{generative_predictions, keep_all, predict_all, records, train_generative, Prepared, Scored, Trained};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenomenonStat {
    pub n: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

/// Headline metrics of one evaluated system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub name: String,
    pub n_records: usize,
    pub aggregate: AggregateReport,
    pub exact_match: Option<f64>,
    pub value_recall: Option<f64>,
    pub by_phenomenon: BTreeMap<String, PhenomenonStat>,
}

/// An evaluated system: summary, per-PAC reports and scored records.
#[derive(Debug, Clone)]
pub struct Arm {
    pub summary: ArmSummary,
    pub reports: Vec<PacReport>,
    pub scored: Vec<Scored>,
}

pub fn by_phenomenon(scored: &[Scored]) -> BTreeMap<String, PhenomenonStat> {
    let mut out: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for s in scored {
        let e = out.entry(s.phenomenon.name().to_string()).or_default();
        e.0 += 1;
        if attrgen::eval::is_match(&s.record.predicted, &s.record.gold) {
            e.1 += 1;
        }
    }
    out.into_iter()
        .map(|(k, (n, correct))| {
            let accuracy = (n > 0).then(|| correct as f64 / n as f64);
            (k, PhenomenonStat { n, correct, accuracy })
        })
        .collect()
}

pub fn summarize(name: &str, scored: Vec<Scored>, cfg: &ExperimentConfig) -> Result<Arm> {
    let recs = records(&scored);
    let reports = evaluate(&recs, cfg.precision, cfg.min_support);
    let summary = ArmSummary {
        name: name.to_string(),
        n_records: recs.len(),
        aggregate: aggregate(&reports)?,
        exact_match: exact_match_accuracy(&recs),
        value_recall: value_recall(&recs),
        by_phenomenon: by_phenomenon(&scored),
    };
    Ok(Arm { summary, reports, scored })
}

/// Value recall over the records generated by `phenomena`.
pub fn slice_recall(scored: &[Scored], phenomena: &[Phenomenon]) -> (usize, Option<f64>) {
    let recs: Vec<EvalRecord> = scored
        .iter()
        .filter(|s| phenomena.contains(&s.phenomenon))
        .map(|s| s.record.clone())
        .collect();
    let n = recs.iter().filter(|r| r.gold.is_values()).count();
    (n, value_recall(&recs))
}

pub struct Outcome<R> {
    pub report: R,
    pub arms: Vec<Arm>,
    pub logs: Vec<(String, TrainLog)>,
}

impl<R: Serialize> Outcome<R> {
    /// Writes report.json, per-arm PAC CSVs, aggregates and scored records,
    /// training logs, and the manifest.
    pub fn write(&self, dir: &Path, command: &str, cfg: &ExperimentConfig) -> Result<Manifest> {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("config.json"), cfg)?;
        write_json(&dir.join("report.json"), &self.report)?;
        for arm in &self.arms {
            let name = &arm.summary.name;
            write_pac_reports_csv(dir.join(format!("pac_reports_{name}.csv")), &arm.reports)?;
            write_json(&dir.join(format!("aggregate_{name}.json")), &arm.summary.aggregate)?;
            write_jsonl(dir.join(format!("records_{name}.jsonl")), &arm.scored)?;
        }
        for (name, log) in &self.logs {
            log.write_csv(dir.join(format!("train_log_{name}.csv")))?;
        }
        Manifest::new(command, cfg)?.finish(dir)
    }
}

/// Prepared data plus the text-only generative model, trained on first use
/// and shared by the drivers that need it.
pub struct Lab {
    pub cfg: ExperimentConfig,
    pub prep: Prepared,
    main: Option<Trained>,
}

impl Lab {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let prep = Prepared::build(&cfg)?;
        Ok(Self { cfg, prep, main: None })
    }

    pub fn main_model(&mut self) -> Result<&Trained> {
        if self.main.is_none() {
            self.main = Some(train_generative(&self.prep, &self.cfg, &keep_all, None, false)?);
        }
        Ok(self.main.as_ref().expect("just trained"))
    }

    fn main_arm(&mut self, name: &str) -> Result<(Arm, TrainLog)> {
        self.main_model()?;
        let trained = self.main.as_ref().expect("trained above");
        let log = trained.log.clone();
        let scored = generative_predictions(&self.prep, &trained.predictor, self.prep.test_labels())?;
        Ok((summarize(name, scored, &self.cfg)?, log))
    }

    fn training_samples(&mut self) -> Result<Vec<Sample>> {
        let sets = &self.main_model()?.sets;
        Ok(sets.weak.iter().chain(&sets.strong).cloned().collect())
    }

    fn text_model_config(&self) -> ModelConfig {
        self.cfg
            .model
            .config(self.prep.codec.vocab().len(), self.prep.world.spec.embedding_dim, false)
    }
}

// ---------------------------------------------------------------- main

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRecall {
    /// Gold-valued records in the slice.
    pub n: usize,
    pub generative: Option<f64>,
    pub tagger: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainReport {
    pub generative: ArmSummary,
    pub tagger: ArmSummary,
    pub mlc: ArmSummary,
    /// PERIPHRASTIC + IMPLICIT_DEFAULT + DERIVABLE records.
    pub beyond_extraction: SliceRecall,
    pub explicit: SliceRecall,
    pub implicit_default: SliceRecall,
    pub mlc_degenerate_pacs: Vec<String>,
    pub mlc_weak_records_used: usize,
    /// Test gold values outside the classifier's domain for their PAC.
    pub mlc_out_of_domain_gold: usize,
    pub tagger_confidence: String,
}

const BEYOND_EXTRACTION: [Phenomenon; 3] = [Phenomenon::Periphrastic, Phenomenon::ImplicitDefault, Phenomenon::Derivable];

fn slice(gen: &[Scored], tag: &[Scored], phenomena: &[Phenomenon]) -> SliceRecall {
    let (n, generative) = slice_recall(gen, phenomena);
    SliceRecall {
        n,
        generative,
        tagger: slice_recall(tag, phenomena).1,
    }
}

/// Generative model against the span tagger and the per-PAC classifiers.
pub fn run_main(lab: &mut Lab) -> Result<Outcome<MainReport>> {
    let (gen, log) = lab.main_arm("generative")?;
    let samples = lab.training_samples()?;
    let cfg = lab.cfg.clone();
    let prep = &lab.prep;

    let mut tcfg = TaggerConfig::new(lab.text_model_config());
    tcfg.o_weight = cfg.tagger_o_weight;
    tcfg.batch_size = cfg.stage1.batch_size;
    tcfg.seed = seeds::derive(cfg.seed, "tagger", 0);
    let tagger = train_tagger(&prep.codec, &samples, &tcfg)?;
    let tag_scored = predict_all(
        prep,
        |a, p| tagger.extract_values(a, p).map(|x| (x.value_set, x.confidence)),
        prep.test_labels(),
    )?;
    let tag = summarize("tagger", tag_scored, &cfg)?;

    let index = prep.data.product_index();
    let train_labels = prep.labels_in(&prep.split.train);
    let mut mlcs: BTreeMap<PacScope, MlcModel> = BTreeMap::new();
    let mut degenerate = Vec::new();
    let mut weak_used = 0;
    for pac in &prep.world.pacs {
        match train_mlc(pac, &index, &train_labels, &MlcConfig::default()) {
            Ok(m) => {
                weak_used += m.weak_records_used;
                mlcs.insert(pac.clone(), m);
            }
            Err(Error::Degenerate { pac, .. }) => degenerate.push(pac),
            Err(e) => return Err(e),
        }
    }
    let mut out_of_domain = 0;
    for l in prep.test_labels() {
        if let (Some(g), Some(m)) = (&l.strong_label, mlcs.get(&l.pac)) {
            out_of_domain += g.values().iter().filter(|v| !m.domain().contains(v)).count();
        }
    }
    let mlc_scored = predict_all(
        prep,
        |a, p| {
            let pac = PacScope::new(p.pt.clone(), a, p.country.clone());
            Ok(match mlcs.get(&pac) {
                Some(m) => {
                    let x = m.predict(p);
                    (x.value_set, x.confidence)
                }
                None => (ValueSet::NotObtainable, 0.0),
            })
        },
        prep.test_labels(),
    )?;
    let mlc = summarize("mlc", mlc_scored, &cfg)?;

    let report = MainReport {
        beyond_extraction: slice(&gen.scored, &tag.scored, &BEYOND_EXTRACTION),
        explicit: slice(&gen.scored, &tag.scored, &[Phenomenon::Explicit]),
        implicit_default: slice(&gen.scored, &tag.scored, &[Phenomenon::ImplicitDefault]),
        generative: gen.summary.clone(),
        tagger: tag.summary.clone(),
        mlc: mlc.summary.clone(),
        mlc_degenerate_pacs: degenerate,
        mlc_weak_records_used: weak_used,
        mlc_out_of_domain_gold: out_of_domain,
        tagger_confidence: "mean tagged-token probability, minimum over spans".into(),
    };
    Ok(Outcome {
        report,
        arms: vec![gen, tag, mlc],
        logs: vec![("generative".into(), log)],
    })
}

// ---------------------------------------------------- negative ablation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeAblationReport {
    /// Evaluated on every strong-labelled test record.
    pub with_negatives: ArmSummary,
    pub without_negatives: ArmSummary,
    pub delta_ar_at_p: f64,
    pub delta_recall_at_p: Option<f64>,
    /// Evaluated only on records whose gold is a concrete value.
    pub with_negatives_gold_slice: AggregateReport,
    pub without_negatives_gold_slice: AggregateReport,
    pub gold_slice_delta_ar_at_p: f64,
    pub gold_slice_delta_recall_at_p: Option<f64>,
    pub negative_training_records_removed: usize,
    /// [NA]/[NO] answers from the model trained without them.
    pub without_model_negative_outputs: usize,
    /// Value answers on INAPPLICABLE / NON_OBTAINABLE test records.
    pub with_model_spurious_values: usize,
    pub without_model_spurious_values: usize,
}

fn is_negative(v: &ValueSet) -> bool {
    !v.is_values()
}

fn drop_negatives(l: &LabelRecord, src: LabelSource) -> bool {
    let label = match src {
        LabelSource::Weak => l.weak_label.as_ref(),
        LabelSource::Strong => l.strong_label.as_ref(),
    };
    label.is_some_and(|v| v.is_values())
}

fn spurious_values(scored: &[Scored]) -> usize {
    scored
        .iter()
        .filter(|s| matches!(s.phenomenon, Phenomenon::Inapplicable | Phenomenon::NonObtainable))
        .filter(|s| s.record.predicted.is_values())
        .count()
}

fn gold_slice(arm: &Arm, cfg: &ExperimentConfig) -> Result<AggregateReport> {
    let recs: Vec<EvalRecord> = records(&arm.scored).into_iter().filter(|r| r.gold.is_values()).collect();
    aggregate(&evaluate(&recs, cfg.precision, cfg.min_support))
}

fn opt_delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a.unwrap_or(0.0) - b.unwrap_or(0.0)).filter(|_| a.is_some() || b.is_some())
}

pub fn run_negative_ablation(lab: &mut Lab) -> Result<Outcome<NegativeAblationReport>> {
    let spec = &lab.prep.world.spec;
    for p in [Phenomenon::Inapplicable, Phenomenon::NonObtainable] {
        if spec.attributes.iter().all(|a| spec.probability(&a.name, p) <= 0.0) {
            return Err(Error::InvalidConfig(format!("world has no {} records to ablate", p.name())));
        }
    }
    let (with, with_log) = lab.main_arm("with_negatives")?;
    let all = lab.main_model()?.sets.weak.len() + lab.main_model()?.sets.strong.len();
    let cfg = lab.cfg.clone();
    let without_model = train_generative(&lab.prep, &cfg, &drop_negatives, None, false)?;
    let removed = all - without_model.sets.weak.len() - without_model.sets.strong.len();
    let without_scored = generative_predictions(&lab.prep, &without_model.predictor, lab.prep.test_labels())?;
    let without = summarize("without_negatives", without_scored, &cfg)?;
    let with_gold = gold_slice(&with, &cfg)?;
    let without_gold = gold_slice(&without, &cfg)?;
    let report = NegativeAblationReport {
        delta_ar_at_p: with.summary.aggregate.ar_at_p - without.summary.aggregate.ar_at_p,
        delta_recall_at_p: opt_delta(with.summary.aggregate.recall_at_p, without.summary.aggregate.recall_at_p),
        gold_slice_delta_ar_at_p: with_gold.ar_at_p - without_gold.ar_at_p,
        gold_slice_delta_recall_at_p: opt_delta(with_gold.recall_at_p, without_gold.recall_at_p),
        with_negatives_gold_slice: with_gold,
        without_negatives_gold_slice: without_gold,
        negative_training_records_removed: removed,
        without_model_negative_outputs: without.scored.iter().filter(|s| is_negative(&s.record.predicted)).count(),
        with_model_spurious_values: spurious_values(&with.scored),
        without_model_spurious_values: spurious_values(&without.scored),
        with_negatives: with.summary.clone(),
        without_negatives: without.summary.clone(),
    };
    Ok(Outcome {
        report,
        arms: vec![with, without],
        logs: vec![("with_negatives".into(), with_log), ("without_negatives".into(), without_model.log)],
    })
}

// ------------------------------------------------------------ zero-shot

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub n_records: usize,
    pub aggregate: Option<AggregateReport>,
    pub value_recall: Option<f64>,
    /// Value recall over records whose value the text can determine, i.e.
    /// everything except IMAGE_ONLY.
    pub text_value_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotArm {
    pub name: String,
    pub subset_a: SubsetMetrics,
    pub subset_b: SubsetMetrics,
    /// Training / early-stopping samples from subset-B PACs, by source.
    pub subset_b_strong_samples: usize,
    pub subset_b_weak_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub subset_a: Vec<String>,
    pub subset_b: Vec<String>,
    pub without_catalog: ZeroShotArm,
    pub with_catalog: ZeroShotArm,
    /// Accuracy of always answering each subset-B PAC's most frequent test
    /// gold value, over gold-valued records.
    pub majority_baseline_b: Option<f64>,
}

fn subset_metrics(scored: &[Scored], pacs: &BTreeSet<PacScope>, cfg: &ExperimentConfig) -> SubsetMetrics {
    let in_subset: Vec<&Scored> = scored.iter().filter(|s| pacs.contains(&s.record.pac)).collect();
    let recs: Vec<EvalRecord> = in_subset.iter().map(|s| s.record.clone()).collect();
    let text_recs: Vec<EvalRecord> = in_subset
        .iter()
        .filter(|s| s.phenomenon != Phenomenon::ImageOnly)
        .map(|s| s.record.clone())
        .collect();
    SubsetMetrics {
        n_records: recs.len(),
        aggregate: aggregate(&evaluate(&recs, cfg.precision, cfg.min_support)).ok(),
        value_recall: value_recall(&recs),
        text_value_recall: value_recall(&text_recs),
    }
}

/// Pooled majority-value accuracy over gold-valued records of `pacs`.
pub fn majority_baseline<'a>(labels: impl IntoIterator<Item = &'a LabelRecord>, pacs: &BTreeSet<PacScope>) -> Option<f64> {
    let mut counts: BTreeMap<&PacScope, BTreeMap<&ValueSet, usize>> = BTreeMap::new();
    for l in labels {
        if let Some(g) = l.strong_label.as_ref().filter(|g| g.is_values() && pacs.contains(&l.pac)) {
            *counts.entry(&l.pac).or_default().entry(g).or_default() += 1;
        }
    }
    let n: usize = counts.values().flat_map(|c| c.values()).sum();
    let best: usize = counts.values().map(|c| c.values().copied().max().unwrap_or(0)).sum();
    (n > 0).then(|| best as f64 / n as f64)
}

pub fn run_zero_shot(lab: &mut Lab) -> Result<Outcome<ZeroShotReport>> {
    let cfg = lab.cfg.clone();
    let prep = &lab.prep;
    let (a, b) = split_pacs(&prep.world, cfg.holdout_fraction, seeds::derive(cfg.seed, "pac-split", 0))?;
    if b.is_empty() {
        return Err(Error::InvalidConfig("zero-shot subset B is empty".into()));
    }
    let a: BTreeSet<PacScope> = a.into_iter().collect();
    let b: BTreeSet<PacScope> = b.into_iter().collect();
    let excluded = |l: &LabelRecord, _: LabelSource| !b.contains(&l.pac);
    let included = |l: &LabelRecord, src: LabelSource| src == LabelSource::Weak || !b.contains(&l.pac);
    let mut arms = Vec::new();
    let mut logs = Vec::new();
    let mut summaries = Vec::new();
    for (name, filter) in [
        ("without_catalog", &excluded as &dyn Fn(&LabelRecord, LabelSource) -> bool),
        ("with_catalog", &included),
    ] {
        let trained = train_generative(prep, &cfg, filter, None, false)?;
        let in_b = |s: &&Sample| b.contains(&s.pac);
        let strong_b = trained.sets.strong.iter().chain(&trained.sets.eval).filter(in_b).count();
        let weak_b = trained.sets.weak.iter().filter(in_b).count();
        let scored = generative_predictions(prep, &trained.predictor, prep.test_labels())?;
        summaries.push(ZeroShotArm {
            name: name.to_string(),
            subset_a: subset_metrics(&scored, &a, &cfg),
            subset_b: subset_metrics(&scored, &b, &cfg),
            subset_b_strong_samples: strong_b,
            subset_b_weak_samples: weak_b,
        });
        arms.push(summarize(name, scored, &cfg)?);
        logs.push((name.to_string(), trained.log));
    }
    let with_catalog = summaries.pop().expect("two arms");
    let without_catalog = summaries.pop().expect("two arms");
    let report = ZeroShotReport {
        subset_a: a.iter().map(|p| p.to_string()).collect(),
        subset_b: b.iter().map(|p| p.to_string()).collect(),
        without_catalog,
        with_catalog,
        majority_baseline_b: majority_baseline(prep.test_labels(), &b),
    };
    Ok(Outcome { report, arms, logs })
}

// -------------------------------------------------------- applicability

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicabilityOutcome {
    pub n_records: usize,
    /// Share of sampled records whose gold is applicable.
    pub applicable_rate: f64,
    pub generative: ApplicabilityReport,
    pub bag_of_words: ApplicabilityReport,
    pub encoder_head: ApplicabilityReport,
    /// Always answers the training-majority class.
    pub majority: ApplicabilityReport,
}

/// Up to `per_pac` strong-labelled test records per PAC, seeded.
fn sample_per_pac<'a>(labels: Vec<&'a LabelRecord>, per_pac: usize, seed: u64) -> Vec<&'a LabelRecord> {
    let mut by_pac: BTreeMap<&PacScope, Vec<&LabelRecord>> = BTreeMap::new();
    for l in labels.into_iter().filter(|l| l.strong_label.is_some()) {
        by_pac.entry(&l.pac).or_default().push(l);
    }
    let mut out = Vec::new();
    for (i, (_, mut ls)) in by_pac.into_iter().enumerate() {
        ls.shuffle(&mut seeds::stream(seed, "applicability-sample", i as u64));
        out.extend(ls.into_iter().take(per_pac));
    }
    out
}

fn as_applicability(applicable: bool) -> ValueSet {
    if applicable {
        ValueSet::NotObtainable
    } else {
        ValueSet::NotApplicable
    }
}

pub fn run_applicability(lab: &mut Lab) -> Result<Outcome<ApplicabilityOutcome>> {
    let log = lab.main_model()?.log.clone();
    let samples = lab.training_samples()?;
    let cfg = lab.cfg.clone();
    let model_cfg = lab.text_model_config();
    let prep = &lab.prep;
    let trained = lab.main.as_ref().expect("trained above");
    let chosen = sample_per_pac(prep.test_labels(), cfg.empty_products_per_pac, cfg.seed);

    let acfg = ApplicabilityConfig {
        batch_size: cfg.stage1.batch_size,
        seed: seeds::derive(cfg.seed, "applicability", 0),
        ..ApplicabilityConfig::default()
    };
    let bow = train_bow_classifier(prep.codec.vocab().len(), &samples, &acfg)?;
    let enc = train_encoder_classifier(model_cfg, &samples, &acfg)?;
    let train_app = samples.iter().filter(|s| s.label != ValueSet::NotApplicable).count();
    let majority_app = 2 * train_app >= samples.len();

    let gen = generative_predictions(prep, &trained.predictor, chosen.iter().copied())?;
    let bow_scored = predict_all(
        prep,
        |a, p| {
            let pr = bow.probability(&prep.codec.serialize_input(a, p));
            Ok((as_applicability(pr >= 0.5), pr.max(1.0 - pr)))
        },
        chosen.iter().copied(),
    )?;
    let enc_scored = predict_all(
        prep,
        |a, p| {
            let pr = enc.probability(&prep.codec.serialize_input(a, p))?;
            Ok((as_applicability(pr >= 0.5), pr.max(1.0 - pr)))
        },
        chosen.iter().copied(),
    )?;
    let maj_scored = predict_all(prep, |_, _| Ok((as_applicability(majority_app), 1.0)), chosen.iter().copied())?;
    let acc = |s: &[Scored]| applicability_accuracy(&records(s), APPLICABILITY_CUT);
    let n = chosen.len();
    let n_app = chosen
        .iter()
        .filter(|l| l.strong_label.as_ref() != Some(&ValueSet::NotApplicable))
        .count();
    let report = ApplicabilityOutcome {
        n_records: n,
        applicable_rate: if n == 0 { 0.0 } else { n_app as f64 / n as f64 },
        generative: acc(&gen),
        bag_of_words: acc(&bow_scored),
        encoder_head: acc(&enc_scored),
        majority: acc(&maj_scored),
    };
    let arms = vec![
        summarize("generative", gen, &cfg)?,
        summarize("bag_of_words", bow_scored, &cfg)?,
        summarize("encoder_head", enc_scored, &cfg)?,
    ];
    Ok(Outcome {
        report,
        arms,
        logs: vec![("generative".into(), log)],
    })
}

// ----------------------------------------------------------- multimodal

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitAudit {
    pub shared_tensors: usize,
    pub all_shared_equal: bool,
    pub new_tensors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallPair {
    pub text_only: Option<f64>,
    pub multimodal: Option<f64>,
    pub delta: Option<f64>,
}

impl RecallPair {
    fn new(text_only: Option<f64>, multimodal: Option<f64>) -> Self {
        let delta = text_only.zip(multimodal).map(|(t, m)| m - t);
        Self {
            text_only,
            multimodal,
            delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalReport {
    pub text_only: ArmSummary,
    pub multimodal: ArmSummary,
    pub image_attributes: Vec<String>,
    pub image_recall: RecallPair,
    pub non_image_recall: RecallPair,
    pub per_attribute: BTreeMap<String, RecallPair>,
    pub init_audit: InitAudit,
}

/// The same network with an embedding projection added; every tensor the
/// two share is copied from `text`.
pub fn add_embedding_channel(text: &Seq2Seq, seed: u64) -> Result<Seq2Seq> {
    let cfg = ModelConfig {
        use_embedding_channel: true,
        ..text.config
    };
    let mut mm = Seq2Seq::new(cfg, seed)?;
    let src: BTreeMap<String, _> = text.params.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
    mm.params.for_each_mut(|name, t| {
        if let Some(s) = src.get(name) {
            t.assign(s);
        }
    });
    Ok(mm)
}

pub fn audit_init(text: &Seq2Seq, mm: &Seq2Seq) -> InitAudit {
    let src: BTreeMap<String, _> = text.params.tensors().into_iter().collect();
    let mut shared = 0;
    let mut equal = true;
    let mut new = Vec::new();
    for (name, t) in mm.params.tensors() {
        match src.get(&name) {
            Some(s) => {
                shared += 1;
                equal &= *s == t;
            }
            None => new.push(name),
        }
    }
    InitAudit {
        shared_tensors: shared,
        all_shared_equal: equal && shared == src.len(),
        new_tensors: new,
    }
}

fn recall_where(scored: &[Scored], keep: impl Fn(&str) -> bool) -> Option<f64> {
    let recs: Vec<EvalRecord> = scored.iter().filter(|s| keep(&s.record.pac.attribute)).map(|s| s.record.clone()).collect();
    value_recall(&recs)
}

/// `work_dir` receives the text-only checkpoint the multimodal model is
/// initialized from.
pub fn run_multimodal(lab: &mut Lab, work_dir: &Path) -> Result<Outcome<MultimodalReport>> {
    let image_attributes: Vec<String> = lab
        .prep
        .world
        .spec
        .attributes
        .iter()
        .filter(|a| a.image_only)
        .map(|a| a.name.clone())
        .collect();
    if image_attributes.is_empty() {
        return Err(Error::InvalidConfig("world has no image-only attributes".into()));
    }
    let (text_arm, text_log) = lab.main_arm("text_only")?;
    let cfg = lab.cfg.clone();
    let ckpt = work_dir.join("text_only_checkpoint");
    {
        let trained = lab.main_model()?;
        checkpoint::save(&ckpt, &trained.predictor.model, trained.log.epochs.len() as u64, cfg.seed)?;
    }
    let (text_model, _) = checkpoint::load(&ckpt)?;
    let mm = add_embedding_channel(&text_model, seeds::derive(cfg.seed, "image-proj-init", 0))?;
    let init_audit = audit_init(&text_model, &mm);
    let trained = train_generative(&lab.prep, &cfg, &keep_all, Some(mm), true)?;
    let mm_scored = generative_predictions(&lab.prep, &trained.predictor, lab.prep.test_labels())?;
    let mm_arm = summarize("multimodal", mm_scored, &cfg)?;

    let is_image = |a: &str| image_attributes.iter().any(|x| x == a);
    let pair = |keep: &dyn Fn(&str) -> bool| {
        RecallPair::new(recall_where(&text_arm.scored, keep), recall_where(&mm_arm.scored, keep))
    };
    let attrs: BTreeSet<String> = text_arm.scored.iter().map(|s| s.record.pac.attribute.clone()).collect();
    let report = MultimodalReport {
        image_recall: pair(&|a| is_image(a)),
        non_image_recall: pair(&|a| !is_image(a)),
        per_attribute: attrs.iter().map(|x| (x.clone(), pair(&|a| a == x))).collect(),
        image_attributes: image_attributes.clone(),
        init_audit,
        text_only: text_arm.summary.clone(),
        multimodal: mm_arm.summary.clone(),
    };
    Ok(Outcome {
        report,
        arms: vec![text_arm, mm_arm],
        logs: vec![("text_only".into(), text_log), ("multimodal".into(), trained.log)],
    })
}

// ----------------------------------------------------------- arch sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub d_model: usize,
    pub n_params: usize,
    pub aggregate: AggregateReport,
    pub value_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSweepReport {
    pub points: Vec<SweepPoint>,
}

/// Model widths compared on one split; feed-forward width is 2 × d_model.
pub fn run_arch_sweep(lab: &mut Lab) -> Result<Outcome<ArchSweepReport>> {
    let mut points = Vec::new();
    let mut arms = Vec::new();
    let mut logs = Vec::new();
    for &d in &lab.cfg.sweep_d_models {
        let mut cfg = lab.cfg.clone();
        cfg.model.d_model = d;
        cfg.model.d_ff = 2 * d;
        if d % cfg.model.n_heads != 0 {
            return Err(Error::InvalidConfig(format!("d_model {d} not divisible by {} heads", cfg.model.n_heads)));
        }
        let trained = train_generative(&lab.prep, &cfg, &keep_all, None, false)?;
        let name = format!("d{d}");
        let scored = generative_predictions(&lab.prep, &trained.predictor, lab.prep.test_labels())?;
        let arm = summarize(&name, scored, &cfg)?;
        points.push(SweepPoint {
            d_model: d,
            n_params: trained.predictor.model.params.num_params(),
            aggregate: arm.summary.aggregate.clone(),
            value_recall: arm.summary.value_recall,
        });
        arms.push(arm);
        logs.push((name, trained.log));
    }
    Ok(Outcome {
        report: ArchSweepReport { points },
        arms,
        logs,
    })
}
