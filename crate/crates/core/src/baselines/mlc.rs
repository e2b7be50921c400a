use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::catalog::{LabelRecord, PacScope, Product};
use crate::decode::Prediction;
use crate::error::{Error, Result};
use crate::model::{Adam, AdamConfig, Linear};
use crate::text::{tokenize, ValueSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlcConfig {
    /// Full-batch optimizer steps.
    pub steps: usize,
    pub optimizer: AdamConfig,
    pub l2: f64,
}

impl Default for MlcConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            optimizer: AdamConfig {
                learning_rate: 0.05,
                clip_norm: None,
                ..AdamConfig::default()
            },
            l2: 1e-3,
        }
    }
}

/// One-vs-rest logistic classifiers over one PAC's value domain.
#[derive(Debug, Clone)]
pub struct MlcModel {
    pub pac: PacScope,
    features: BTreeMap<String, usize>,
    domain: Vec<String>,
    weights: Linear,
    thresholds: Vec<f64>,
    /// Training records consumed, by label source.
    pub strong_records_used: usize,
    pub weak_records_used: usize,
}

fn text_of(p: &Product) -> Vec<String> {
    [&p.title, &p.bullets, &p.description].iter().flat_map(|t| tokenize(t)).collect()
}

fn featurize(features: &BTreeMap<String, usize>, p: &Product) -> Array1<f64> {
    let mut x = Array1::zeros(features.len());
    for tok in text_of(p) {
        if let Some(&j) = features.get(&tok) {
            x[j] += 1.0;
        }
    }
    x
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Threshold in (0, 1) maximizing training F1; ties go to the one nearest 0.5.
fn best_threshold(scores: &[f64], positive: &[bool]) -> f64 {
    let mut best: (f64, f64) = (f64::NEG_INFINITY, 0.5);
    for k in 1..20 {
        let t = k as f64 * 0.05;
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for (&s, &y) in scores.iter().zip(positive) {
            match (s > t, y) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                _ => {}
            }
        }
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) };
        let better = f1 > best.0 + 1e-12 || ((f1 - best.0).abs() <= 1e-12 && (t - 0.5).abs() < (best.1 - 0.5).abs());
        if better {
            best = (f1, t);
        }
    }
    best.1
}

/// Trains on the PAC's strong labels only; weak labels are never read.
pub fn train_mlc(
    pac: &PacScope,
    products: &BTreeMap<&str, &Product>,
    labels: &[&LabelRecord],
    cfg: &MlcConfig,
) -> Result<MlcModel> {
    let mut rows: Vec<(&Product, &ValueSet)> = Vec::new();
    for l in labels.iter().filter(|l| &l.pac == pac) {
        let Some(gold) = &l.strong_label else { continue };
        let p = products
            .get(l.product_id.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("label for unknown product {}", l.product_id)))?;
        rows.push((p, gold));
    }
    let domain: Vec<String> = {
        let mut d: Vec<String> = rows.iter().flat_map(|(_, g)| g.values().iter().cloned()).collect();
        d.sort();
        d.dedup();
        d
    };
    if domain.len() < 2 {
        return Err(Error::Degenerate {
            pac: pac.to_string(),
            reason: format!("{} distinct gold value(s); need at least 2", domain.len()),
        });
    }
    let mut features = BTreeMap::new();
    for (p, _) in &rows {
        for tok in text_of(p) {
            let n = features.len();
            features.entry(tok).or_insert(n);
        }
    }
    let n = rows.len();
    let mut x = Array2::zeros((n, features.len()));
    let mut y = Array2::zeros((n, domain.len()));
    for (i, (p, gold)) in rows.iter().enumerate() {
        x.row_mut(i).assign(&featurize(&features, p));
        for v in gold.values() {
            let j = domain.binary_search(v).expect("domain built from gold");
            y[[i, j]] = 1.0;
        }
    }
    let mut weights = Linear {
        w: Array2::zeros((features.len(), domain.len())),
        b: Array2::zeros((1, domain.len())),
    };
    let mut opt = Adam::new(cfg.optimizer, &weights);
    for _ in 0..cfg.steps {
        let mut probs = crate::model::layers::linear(&weights, x.view());
        probs.mapv_inplace(sigmoid);
        let d = (probs - &y) / n as f64;
        let grads = Linear {
            w: x.t().dot(&d) + &(&weights.w * cfg.l2),
            b: d.sum_axis(Axis(0)).insert_axis(Axis(0)),
        };
        opt.step(&mut weights, &grads)?;
    }
    let mut probs = crate::model::layers::linear(&weights, x.view());
    probs.mapv_inplace(sigmoid);
    let thresholds = (0..domain.len())
        .map(|j| {
            let positive: Vec<bool> = y.column(j).iter().map(|&v| v > 0.5).collect();
            best_threshold(&probs.column(j).to_vec(), &positive)
        })
        .collect();
    Ok(MlcModel {
        pac: pac.clone(),
        features,
        domain,
        weights,
        thresholds,
        strong_records_used: n,
        weak_records_used: 0,
    })
}

impl MlcModel {
    pub fn domain(&self) -> &[String] {
        &self.domain
    }

    /// Per-value probabilities, aligned with [`MlcModel::domain`].
    pub fn probabilities(&self, product: &Product) -> Vec<f64> {
        let x = featurize(&self.features, product).insert_axis(Axis(0));
        let z = crate::model::layers::linear(&self.weights, x.view());
        z.iter().map(|&z| sigmoid(z)).collect()
    }

    /// Values above their thresholds; NO when none are. Never NA.
    pub fn predict(&self, product: &Product) -> Prediction {
        let probs = self.probabilities(product);
        let chosen: Vec<&str> = self
            .domain
            .iter()
            .zip(&probs)
            .zip(&self.thresholds)
            .filter(|((_, &p), &t)| p > t)
            .map(|((v, _), _)| v.as_str())
            .collect();
        let confidence = probs.iter().cloned().fold(0.0, f64::max);
        let value_set = ValueSet::from_values(chosen).unwrap_or(ValueSet::NotObtainable);
        Prediction {
            value_set,
            confidence,
            raw_sequences: Vec::new(),
        }
    }
}
