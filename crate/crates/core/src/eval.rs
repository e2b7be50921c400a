//! Precision-gated acceptance metrics: per-PAC threshold search, AR@P and
//! Recall@P aggregation, and applicability accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::PacScope;
use crate::error::{Error, Result};
use crate::text::{normalize_value, ValueKind, ValueSet};

/// Target precision used by every driver.
pub const DEFAULT_PRECISION: f64 = 0.96;
/// Minimum number of backfills for a PAC to be accepted.
pub const DEFAULT_MIN_SUPPORT: usize = 30;
/// Ground-truth applicability rate splitting the high and low buckets.
pub const APPLICABILITY_CUT: f64 = 0.90;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub pac: PacScope,
    pub product_id: String,
    pub gold: ValueSet,
    pub predicted: ValueSet,
    pub confidence: f64,
}

/// Kinds agree and, for concrete values, the normalized sets are equal.
pub fn is_match(predicted: &ValueSet, gold: &ValueSet) -> bool {
    if predicted.kind() != gold.kind() {
        return false;
    }
    let norm = |v: &ValueSet| -> BTreeSet<String> { v.values().iter().map(|s| normalize_value(s)).collect() };
    norm(predicted) == norm(gold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

/// Smallest confidence threshold `t` whose backfill set (concrete-value
/// predictions with confidence >= t) has precision >= `precision` and at
/// least `min_support` members. Recall is relative to records with concrete
/// gold values.
pub fn threshold_search(records: &[EvalRecord], precision: f64, min_support: usize) -> Option<Threshold> {
    let n_gold = records.iter().filter(|r| r.gold.is_values()).count();
    let mut cands: Vec<(f64, bool)> = records
        .iter()
        .filter(|r| r.predicted.is_values())
        .map(|r| (r.confidence, is_match(&r.predicted, &r.gold)))
        .collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0));
    // Walk from the highest confidence down, recording the cumulative counts
    // at each distinct-threshold boundary; the last qualifying one is the
    // smallest threshold.
    let mut best = None;
    let mut matched = 0usize;
    for i in 0..cands.len() {
        matched += usize::from(cands[i].1);
        if i + 1 < cands.len() && cands[i + 1].0 == cands[i].0 {
            continue;
        }
        let support = i + 1;
        let prec = matched as f64 / support as f64;
        if support >= min_support && prec >= precision {
            best = Some(Threshold {
                threshold: cands[i].0,
                precision: prec,
                recall: if n_gold == 0 { 0.0 } else { matched as f64 / n_gold as f64 },
                support,
            });
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacReport {
    pub pac: PacScope,
    pub accepted: bool,
    pub threshold: Option<f64>,
    pub recall_at_p: Option<f64>,
    /// Backfills at the accepted threshold; for rejected PACs, the number of
    /// concrete-value predictions.
    pub support: usize,
    pub n_gold: usize,
}

pub fn pac_report(pac: &PacScope, records: &[EvalRecord], precision: f64, min_support: usize) -> PacReport {
    let n_gold = records.iter().filter(|r| r.gold.is_values()).count();
    match threshold_search(records, precision, min_support) {
        Some(t) => PacReport {
            pac: pac.clone(),
            accepted: true,
            threshold: Some(t.threshold),
            recall_at_p: Some(t.recall),
            support: t.support,
            n_gold,
        },
        None => PacReport {
            pac: pac.clone(),
            accepted: false,
            threshold: None,
            recall_at_p: None,
            support: records.iter().filter(|r| r.predicted.is_values()).count(),
            n_gold,
        },
    }
}

pub fn group_by_pac(records: &[EvalRecord]) -> BTreeMap<PacScope, Vec<EvalRecord>> {
    let mut out: BTreeMap<PacScope, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.pac.clone()).or_default().push(r.clone());
    }
    out
}

/// One report per PAC present in `records`, in PAC order.
pub fn evaluate(records: &[EvalRecord], precision: f64, min_support: usize) -> Vec<PacReport> {
    group_by_pac(records)
        .iter()
        .map(|(pac, rs)| pac_report(pac, rs, precision, min_support))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub n_pacs: usize,
    pub n_accepted: usize,
    pub ar_at_p: f64,
    pub recall_at_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_pacs: usize,
    pub n_accepted: usize,
    pub ar_at_p: f64,
    /// Unweighted mean over accepted PACs; absent when none is accepted.
    pub recall_at_p: Option<f64>,
    /// Mean weighted by each accepted PAC's gold-value count.
    pub record_weighted_recall_at_p: Option<f64>,
    pub by_attribute: BTreeMap<String, BucketReport>,
}

fn bucket(reports: &[&PacReport]) -> BucketReport {
    let accepted: Vec<f64> = reports.iter().filter_map(|r| r.recall_at_p).collect();
    BucketReport {
        n_pacs: reports.len(),
        n_accepted: accepted.len(),
        ar_at_p: accepted.len() as f64 / reports.len() as f64,
        recall_at_p: mean(&accepted),
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    // Sorting first makes the sum independent of input order.
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn aggregate(reports: &[PacReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::EmptyData("no PAC reports to aggregate".into()));
    }
    let all: Vec<&PacReport> = reports.iter().collect();
    let overall = bucket(&all);
    let mut weighted: Vec<(f64, usize)> = reports
        .iter()
        .filter_map(|r| r.recall_at_p.map(|x| (x * r.n_gold as f64, r.n_gold)))
        .collect();
    weighted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let total_gold: usize = weighted.iter().map(|w| w.1).sum();
    let record_weighted = (total_gold > 0).then(|| weighted.iter().map(|w| w.0).sum::<f64>() / total_gold as f64);
    let mut by_attr: BTreeMap<String, Vec<&PacReport>> = BTreeMap::new();
    for r in reports {
        by_attr.entry(r.pac.attribute.clone()).or_default().push(r);
    }
    Ok(AggregateReport {
        n_pacs: overall.n_pacs,
        n_accepted: overall.n_accepted,
        ar_at_p: overall.ar_at_p,
        recall_at_p: overall.recall_at_p,
        record_weighted_recall_at_p: record_weighted.filter(|_| overall.n_accepted > 0),
        by_attribute: by_attr.into_iter().map(|(k, v)| (k, bucket(&v))).collect(),
    })
}

/// Exact-match accuracy over records (all kinds count).
pub fn exact_match_accuracy(records: &[EvalRecord]) -> Option<f64> {
    (!records.is_empty())
        .then(|| records.iter().filter(|r| is_match(&r.predicted, &r.gold)).count() as f64 / records.len() as f64)
}

/// Exact-match accuracy restricted to records whose gold is concrete.
pub fn value_recall(records: &[EvalRecord]) -> Option<f64> {
    let gold: Vec<EvalRecord> = records.iter().filter(|r| r.gold.is_values()).cloned().collect();
    exact_match_accuracy(&gold)
}

/// Micro-averaged precision and recall over individual values; a
/// diagnostic alongside the set-level metrics.
pub fn value_level_diagnostics(records: &[EvalRecord]) -> (Option<f64>, Option<f64>) {
    let (mut tp, mut n_pred, mut n_gold) = (0usize, 0usize, 0usize);
    for r in records {
        let p: BTreeSet<String> = r.predicted.values().iter().map(|s| normalize_value(s)).collect();
        let g: BTreeSet<String> = r.gold.values().iter().map(|s| normalize_value(s)).collect();
        tp += p.intersection(&g).count();
        n_pred += p.len();
        n_gold += g.len();
    }
    (
        (n_pred > 0).then(|| tp as f64 / n_pred as f64),
        (n_gold > 0).then(|| tp as f64 / n_gold as f64),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicabilityReport {
    pub overall: Option<f64>,
    pub high_bucket: Option<f64>,
    pub low_bucket: Option<f64>,
    pub n_high_pacs: usize,
    pub n_low_pacs: usize,
}

fn applicable(v: &ValueSet) -> bool {
    v.kind() != ValueKind::NA
}

/// Accuracy of the applicable-vs-NA decision implied by each prediction,
/// overall and within PACs whose gold applicability rate is above / at most
/// `bucket_cut`.
pub fn applicability_accuracy(records: &[EvalRecord], bucket_cut: f64) -> ApplicabilityReport {
    let acc = |rs: &[&EvalRecord]| -> Option<f64> {
        (!rs.is_empty()).then(|| {
            rs.iter().filter(|r| applicable(&r.predicted) == applicable(&r.gold)).count() as f64 / rs.len() as f64
        })
    };
    let mut high = Vec::new();
    let mut low = Vec::new();
    let (mut n_high, mut n_low) = (0, 0);
    let mut by_pac: BTreeMap<&PacScope, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        by_pac.entry(&r.pac).or_default().push(r);
    }
    for rs in by_pac.values() {
        let rate = rs.iter().filter(|r| applicable(&r.gold)).count() as f64 / rs.len() as f64;
        if rate > bucket_cut {
            n_high += 1;
            high.extend(rs.iter().copied());
        } else {
            n_low += 1;
            low.extend(rs.iter().copied());
        }
    }
    let all: Vec<&EvalRecord> = records.iter().collect();
    ApplicabilityReport {
        overall: acc(&all),
        high_bucket: acc(&high),
        low_bucket: acc(&low),
        n_high_pacs: n_high,
        n_low_pacs: n_low,
    }
}

#[derive(Serialize)]
struct PacRow {
    pac: String,
    accepted: bool,
    threshold: Option<f64>,
    recall_at_p: Option<f64>,
    support: usize,
    n_gold: usize,
}

pub fn write_pac_reports_csv(path: impl AsRef<Path>, reports: &[PacReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in reports {
        w.serialize(PacRow {
            pac: r.pac.to_string(),
            accepted: r.accepted,
            threshold: r.threshold,
            recall_at_p: r.recall_at_p,
            support: r.support,
            n_gold: r.n_gold,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(conf: f64, pred: ValueSet, gold: ValueSet) -> EvalRecord {
        EvalRecord {
            pac: PacScope::new("shirt", "color", "us"),
            product_id: format!("p{conf}"),
            gold,
            predicted: pred,
            confidence: conf,
        }
    }

    fn v(s: &str) -> ValueSet {
        ValueSet::single(s).unwrap()
    }

    #[test]
    fn match_semantics() {
        let a = ValueSet::from_values(["red", "blue"]).unwrap();
        let b = ValueSet::from_values(["blue", "red"]).unwrap();
        assert!(is_match(&a, &b));
        assert!(is_match(&ValueSet::NotApplicable, &ValueSet::NotApplicable));
        assert!(!is_match(&ValueSet::NotApplicable, &v("red")));
        assert!(!is_match(&ValueSet::NotApplicable, &ValueSet::NotObtainable));
        assert!(is_match(&ValueSet::Values(vec!["Red ".into()]), &v("red")));
    }

    #[test]
    fn perfect_model_threshold_is_min_confidence() {
        let rs: Vec<_> = [0.7, 0.9, 0.55, 0.8].iter().map(|&c| rec(c, v("red"), v("red"))).collect();
        let t = threshold_search(&rs, 0.96, 1).unwrap();
        assert_eq!(t.threshold, 0.55);
        assert_eq!(t.recall, 1.0);
    }

    #[test]
    fn worked_threshold_example() {
        let rs = vec![
            rec(0.99, v("red"), v("red")),
            rec(0.98, v("red"), v("red")),
            rec(0.97, v("blue"), v("red")),
            rec(0.96, v("red"), v("red")),
        ];
        let t = threshold_search(&rs, 0.75, 3).unwrap();
        assert_eq!(t.threshold, 0.96);
        assert_eq!(t.precision, 0.75);
        assert_eq!(t.support, 4);
    }

    #[test]
    fn negatives_are_never_backfilled() {
        let mut rs: Vec<_> = (0..40).map(|i| rec(0.5 + i as f64 / 100.0, v("red"), v("red"))).collect();
        // NO predictions on gold-valued records cost recall only.
        rs.extend((0..10).map(|i| rec(0.99, ValueSet::NotObtainable, v(&format!("x{i}")))));
        let t = threshold_search(&rs, 0.96, 30).unwrap();
        assert_eq!(t.support, 40);
        assert_eq!(t.precision, 1.0);
        assert!((t.recall - 0.8).abs() < 1e-12);
        assert!(threshold_search(&[], 0.96, 1).is_none());
    }

    #[test]
    fn aggregate_examples() {
        let pac = |i: usize| PacScope::new("shirt", "color", format!("c{i}"));
        let rejected: Vec<_> = (0..10)
            .map(|i| PacReport {
                pac: pac(i),
                accepted: false,
                threshold: None,
                recall_at_p: None,
                support: 0,
                n_gold: 3,
            })
            .collect();
        let a = aggregate(&rejected).unwrap();
        assert_eq!(a.ar_at_p, 0.0);
        assert_eq!(a.recall_at_p, None);
        let one = PacReport {
            accepted: true,
            threshold: Some(0.5),
            recall_at_p: Some(0.8),
            support: 30,
            ..rejected[0].clone()
        };
        let a = aggregate(&[one]).unwrap();
        assert_eq!(a.recall_at_p, Some(0.8));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn applicability_examples() {
        let all_na: Vec<_> = (0..5).map(|i| rec(i as f64, ValueSet::NotApplicable, ValueSet::NotApplicable)).collect();
        assert_eq!(applicability_accuracy(&all_na, APPLICABILITY_CUT).overall, Some(1.0));
        // 4 of 6 decisions correct; NO counts as applicable.
        let six = vec![
            rec(0.1, v("red"), v("blue")),
            rec(0.2, ValueSet::NotObtainable, v("red")),
            rec(0.3, ValueSet::NotApplicable, ValueSet::NotApplicable),
            rec(0.4, v("red"), ValueSet::NotObtainable),
            rec(0.5, ValueSet::NotApplicable, v("red")),
            rec(0.6, v("red"), ValueSet::NotApplicable),
        ];
        let a = applicability_accuracy(&six, APPLICABILITY_CUT);
        assert!((a.overall.unwrap() - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(a.n_low_pacs, 1);
    }

    #[test]
    fn applicability_bucket_boundary_is_exclusive() {
        let mut rs: Vec<_> = (0..9).map(|i| rec(i as f64, v("red"), v("red"))).collect();
        rs.push(rec(9.0, v("red"), ValueSet::NotApplicable));
        // exactly 90% applicable → low bucket
        let a = applicability_accuracy(&rs, 0.90);
        assert_eq!((a.n_high_pacs, a.n_low_pacs), (0, 1));
    }

    /// Exhaustive oracle: every candidate confidence as a threshold,
    /// recomputing the backfill set from scratch each time.
    fn brute(rs: &[EvalRecord], p: f64, s: usize) -> Option<(f64, f64, usize)> {
        let n_gold = rs.iter().filter(|r| r.gold.is_values()).count();
        let mut ts: Vec<f64> = rs.iter().filter(|r| r.predicted.is_values()).map(|r| r.confidence).collect();
        ts.push(f64::INFINITY);
        let mut best: Option<(f64, f64, usize)> = None;
        for &t in &ts {
            let a: Vec<_> = rs.iter().filter(|r| r.predicted.is_values() && r.confidence >= t).collect();
            let m = a.iter().filter(|r| is_match(&r.predicted, &r.gold)).count();
            if !a.is_empty() && a.len() >= s && m as f64 / a.len() as f64 >= p && best.map_or(true, |b| t < b.0) {
                best = Some((t, m as f64 / n_gold.max(1) as f64, a.len()));
            }
        }
        best
    }

    fn records_strategy() -> impl Strategy<Value = Vec<EvalRecord>> {
        proptest::collection::vec((0u8..20, 0u8..6, 0u8..6), 0..200).prop_map(|xs| {
            let vs = |k: u8| match k {
                0 => ValueSet::NotApplicable,
                1 => ValueSet::NotObtainable,
                k => ValueSet::single(&format!("v{}", k % 3)).unwrap(),
            };
            xs.into_iter().map(|(c, p, g)| rec(c as f64 / 20.0, vs(p), vs(g))).collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn threshold_search_matches_brute_force(rs in records_strategy(), p in 0.0f64..1.0, s in 1usize..40) {
            let got = threshold_search(&rs, p, s).map(|t| (t.threshold, t.recall, t.support));
            let want = brute(&rs, p, s);
            match (got, want) {
                (None, None) => {}
                (Some(g), Some(w)) => {
                    prop_assert_eq!(g.0, w.0);
                    prop_assert_eq!(g.2, w.2);
                    prop_assert!((g.1 - w.1).abs() < 1e-12);
                }
                other => prop_assert!(false, "mismatch {:?}", other),
            }
        }
    }

    proptest! {
        #[test]
        fn raising_p_never_lowers_threshold(rs in records_strategy(), p in 0.0f64..0.9, dp in 0.0f64..0.1, s in 1usize..20) {
            if let (Some(a), Some(b)) = (threshold_search(&rs, p, s), threshold_search(&rs, p + dp, s)) {
                prop_assert!(b.threshold >= a.threshold);
            }
        }

        #[test]
        fn raising_s_never_accepts_more(rs in records_strategy(), p in 0.0f64..1.0, s in 1usize..20, ds in 0usize..20) {
            if threshold_search(&rs, p, s).is_none() {
                prop_assert!(threshold_search(&rs, p, s + ds).is_none());
            }
        }

        #[test]
        fn accepted_precision_holds_on_recompute(rs in records_strategy(), p in 0.0f64..1.0, s in 1usize..20) {
            if let Some(t) = threshold_search(&rs, p, s) {
                let a: Vec<_> = rs.iter().filter(|r| r.predicted.is_values() && r.confidence >= t.threshold).collect();
                let m = a.iter().filter(|r| is_match(&r.predicted, &r.gold)).count();
                prop_assert!(m as f64 / a.len() as f64 >= p);
                prop_assert!(a.len() >= s);
            }
        }

        #[test]
        fn aggregate_is_order_invariant(recalls in proptest::collection::vec(proptest::option::of(0.0f64..1.0), 1..30), seed in 0u64..100) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let reports: Vec<PacReport> = recalls.iter().enumerate().map(|(i, r)| PacReport {
                pac: PacScope::new("pt", format!("a{}", i % 3), format!("c{i}")),
                accepted: r.is_some(),
                threshold: r.map(|_| 0.5),
                recall_at_p: *r,
                support: 30,
                n_gold: 10 + i,
            }).collect();
            let mut shuffled = reports.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(aggregate(&reports).unwrap(), aggregate(&shuffled).unwrap());
        }
    }
}
