use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataset::CausePair;
use crate::labels::{EmotionLabel, SentimentClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Acc2Scheme {
    /// Negative vs non-negative; every item is scored and a zero gold score
    /// counts as non-negative.
    Nn,
    /// Negative vs positive; items with a zero gold score are dropped.
    Np,
}

impl Acc2Scheme {
    pub fn metric_name(self) -> &'static str {
        match self {
            Acc2Scheme::Nn => "acc2_nn",
            Acc2Scheme::Np => "acc2_np",
        }
    }
}

fn check_len(preds: usize, gold: usize) -> Result<(), EvalError> {
    if preds == gold {
        Ok(())
    } else {
        Err(EvalError::Length { preds, gold })
    }
}

/// Binary sentiment accuracy. A predicted neutral counts as non-negative;
/// an unparsed prediction (`None`) is always wrong.
pub fn acc2(
    preds: &[Option<SentimentClass>],
    gold: &[f64],
    scheme: Acc2Scheme,
) -> Result<f64, EvalError> {
    check_len(preds.len(), gold.len())?;
    if let Some(&bad) = gold.iter().find(|g| !g.is_finite()) {
        return Err(EvalError::NonFiniteGold(bad));
    }
    let mut scored = 0usize;
    let mut correct = 0usize;
    for (p, &g) in preds.iter().zip(gold) {
        if scheme == Acc2Scheme::Np && g == 0.0 {
            continue;
        }
        scored += 1;
        if p.is_some_and(|p| p.is_negative() == (g < 0.0)) {
            correct += 1;
        }
    }
    if scored == 0 {
        return Err(EvalError::UndefinedMetric(format!(
            "{} has no scorable items",
            scheme.metric_name()
        )));
    }
    Ok(correct as f64 / scored as f64)
}

/// Exact-match fraction; `None` predictions never match.
pub fn accuracy<L: PartialEq>(preds: &[Option<L>], gold: &[L]) -> Result<f64, EvalError> {
    check_len(preds.len(), gold.len())?;
    if gold.is_empty() {
        return Err(EvalError::UndefinedMetric(
            "accuracy over an empty set".into(),
        ));
    }
    let hits = preds
        .iter()
        .zip(gold)
        .filter(|(p, g)| p.as_ref() == Some(g))
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Per-class F1 (zero when undefined) weighted by gold support.
pub fn weighted_f1<L: Ord + Clone>(preds: &[Option<L>], gold: &[L]) -> Result<f64, EvalError> {
    check_len(preds.len(), gold.len())?;
    if gold.is_empty() {
        return Err(EvalError::UndefinedMetric(
            "weighted F1 over an empty set".into(),
        ));
    }
    // (tp, fp, fn) per class
    let mut counts: BTreeMap<&L, (usize, usize, usize)> = BTreeMap::new();
    for (p, g) in preds.iter().zip(gold) {
        match p {
            Some(p) if p == g => counts.entry(g).or_default().0 += 1,
            Some(p) => {
                counts.entry(p).or_default().1 += 1;
                counts.entry(g).or_default().2 += 1;
            }
            None => counts.entry(g).or_default().2 += 1,
        }
    }
    let n = gold.len() as f64;
    Ok(counts
        .values()
        .map(|&(tp, fp, fn_)| (tp + fn_) as f64 / n * f1(tp, fp, fn_))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcpeScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Per-emotion F1 weighted by gold pair support.
    pub weighted_f1: f64,
    pub gold_pairs: usize,
    pub predicted_pairs: usize,
    pub matched: usize,
}

type PairKey<'a> = (&'a str, &'a str, &'a str, EmotionLabel);

fn pair_set<'a>(by_conv: &'a BTreeMap<String, Vec<CausePair>>) -> BTreeSet<PairKey<'a>> {
    by_conv
        .iter()
        .flat_map(|(conv, pairs)| {
            pairs.iter().map(move |p| {
                (
                    conv.as_str(),
                    p.emotion_utterance_id.as_str(),
                    p.cause_utterance_id.as_str(),
                    p.emotion,
                )
            })
        })
        .collect()
}

/// Cause-pair scores over conversations. A predicted pair matches only when
/// both utterance ids and the emotion equal a gold pair of the same
/// conversation; duplicates count once.
pub fn ecpe_scores(
    predicted: &BTreeMap<String, Vec<CausePair>>,
    gold: &BTreeMap<String, Vec<CausePair>>,
) -> Result<EcpeScores, EvalError> {
    let gold_set = pair_set(gold);
    let pred_set = pair_set(predicted);
    if gold_set.is_empty() {
        return Err(EvalError::UndefinedMetric("ECPE without gold pairs".into()));
    }
    let matched = gold_set.intersection(&pred_set).count();
    let precision = if pred_set.is_empty() {
        0.0
    } else {
        matched as f64 / pred_set.len() as f64
    };
    let recall = matched as f64 / gold_set.len() as f64;

    let mut per_emotion: BTreeMap<EmotionLabel, (usize, usize, usize)> = BTreeMap::new();
    for key in &gold_set {
        let e = per_emotion.entry(key.3).or_default();
        if pred_set.contains(key) {
            e.0 += 1;
        } else {
            e.2 += 1;
        }
    }
    for key in pred_set.difference(&gold_set) {
        per_emotion.entry(key.3).or_default().1 += 1;
    }
    let total = gold_set.len() as f64;
    let weighted_f1 = per_emotion
        .values()
        .map(|&(tp, fp, fn_)| (tp + fn_) as f64 / total * f1(tp, fp, fn_))
        .sum();
    Ok(EcpeScores {
        precision,
        recall,
        f1: f1(matched, pred_set.len() - matched, gold_set.len() - matched),
        weighted_f1,
        gold_pairs: gold_set.len(),
        predicted_pairs: pred_set.len(),
        matched,
    })
}
