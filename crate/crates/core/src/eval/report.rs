use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{acc2, accuracy, ecpe_scores, weighted_f1, Acc2Scheme};
use super::parse::{parse_response, Parsed};
use super::EvalError;
use crate::dataset::{CausePair, TaskRecord};
use crate::labels::{EmotionLabel, SentimentClass, SentimentThresholds, TaskKind};

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub record_id: String,
    pub response: String,
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, EvalError> {
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_predictions<W: Write>(mut out: W, preds: &[Prediction]) -> std::io::Result<()> {
    for p in preds {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeSelection {
    Nn,
    Np,
    #[default]
    Both,
}

impl SchemeSelection {
    fn schemes(self) -> &'static [Acc2Scheme] {
        match self {
            SchemeSelection::Nn => &[Acc2Scheme::Nn],
            SchemeSelection::Np => &[Acc2Scheme::Np],
            SchemeSelection::Both => &[Acc2Scheme::Nn, Acc2Scheme::Np],
        }
    }
}

/// A metric value as a fraction in `[0, 1]`, with the number of items it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub task: TaskKind,
    pub metric: String,
    pub value: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndefinedMetric {
    pub task: TaskKind,
    pub metric: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub records: usize,
    pub entries: Vec<MetricEntry>,
    pub undefined: Vec<UndefinedMetric>,
    /// Predictions that failed to parse, per task.
    pub unparsed: BTreeMap<TaskKind, usize>,
    /// Free-text tasks are counted but not scored.
    pub unscored: BTreeMap<TaskKind, usize>,
    /// ER confusion counts: gold label → predicted label (or `unparsed`) → count.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

impl MetricReport {
    pub fn get(&self, task: TaskKind, metric: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.task == task && e.metric == metric)
            .map(|e| e.value)
    }

    /// Human-readable table; values are shown as percentages.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:<12} {:>8} {:>6}",
            "task", "metric", "value%", "n"
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<6} {:<12} {:>8.2} {:>6}",
                e.task.as_str(),
                e.metric,
                e.value * 100.0,
                e.count
            );
        }
        for u in &self.undefined {
            let _ = writeln!(
                out,
                "{:<6} {:<12} {:>8} ({})",
                u.task.as_str(),
                u.metric,
                "n/a",
                u.reason
            );
        }
        for (task, n) in &self.unscored {
            let _ = writeln!(
                out,
                "{:<6} {:<12} {:>8} {:>6}",
                task.as_str(),
                "unscored",
                "-",
                n
            );
        }
        for (task, n) in self.unparsed.iter().filter(|(_, n)| **n > 0) {
            let _ = writeln!(
                out,
                "{} unparsed {}: {n}",
                task.as_str(),
                if *n == 1 { "response" } else { "responses" }
            );
        }
        out
    }
}

fn gold_error(record: &TaskRecord, message: &str) -> EvalError {
    EvalError::BadGold {
        record_id: record.record_id.clone(),
        message: message.to_string(),
    }
}

fn gold_sentiment(record: &TaskRecord, thresholds: &SentimentThresholds) -> Result<f64, EvalError> {
    if let Some(s) = record.sentiment_score {
        return Ok(s);
    }
    match parse_response(TaskKind::Msa, &record.response, thresholds).sentiment() {
        Some(SentimentClass::Negative) => Ok(-1.0),
        Some(SentimentClass::Neutral) => Ok(0.0),
        Some(SentimentClass::Positive) => Ok(1.0),
        None => Err(gold_error(record, "not a sentiment class")),
    }
}

/// Scores `predictions` against the gold responses of `records`, per task.
pub fn evaluate_predictions(
    records: &[TaskRecord],
    predictions: &[Prediction],
    thresholds: &SentimentThresholds,
    schemes: SchemeSelection,
) -> Result<MetricReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::UndefinedMetric("the test set is empty".into()));
    }
    let by_id: HashMap<&str, &str> = predictions
        .iter()
        .map(|p| (p.record_id.as_str(), p.response.as_str()))
        .collect();
    let mut report = MetricReport {
        records: records.len(),
        ..MetricReport::default()
    };
    let mut sentiment: (Vec<Option<SentimentClass>>, Vec<f64>) = Default::default();
    let mut emotion: (Vec<Option<EmotionLabel>>, Vec<EmotionLabel>) = Default::default();
    let mut pred_pairs: BTreeMap<String, Vec<CausePair>> = BTreeMap::new();
    let mut gold_pairs: BTreeMap<String, Vec<CausePair>> = BTreeMap::new();
    let mut ecpe_items = 0;

    for r in records {
        let raw = by_id
            .get(r.record_id.as_str())
            .ok_or_else(|| EvalError::MissingPrediction(r.record_id.clone()))?;
        let parsed = parse_response(r.task, raw, thresholds);
        if parsed.is_failure() {
            *report.unparsed.entry(r.task).or_default() += 1;
        }
        match r.task {
            TaskKind::Msa => {
                sentiment.0.push(parsed.sentiment());
                sentiment.1.push(gold_sentiment(r, thresholds)?);
            }
            TaskKind::Er => {
                let gold = parse_response(TaskKind::Er, &r.response, thresholds)
                    .emotion()
                    .ok_or_else(|| gold_error(r, "not an emotion label"))?;
                let predicted = parsed.emotion();
                *report
                    .confusion
                    .entry(gold.to_string())
                    .or_default()
                    .entry(predicted.map_or("unparsed".to_string(), |p| p.to_string()))
                    .or_default() += 1;
                emotion.0.push(predicted);
                emotion.1.push(gold);
            }
            TaskKind::Ecpe => {
                ecpe_items += 1;
                let Parsed::Pairs(gold) = parse_response(TaskKind::Ecpe, &r.response, thresholds)
                else {
                    return Err(gold_error(r, "not a cause-pair list"));
                };
                gold_pairs
                    .entry(r.source_sample_id.clone())
                    .or_default()
                    .extend(gold);
                if let Parsed::Pairs(p) = parsed {
                    pred_pairs
                        .entry(r.source_sample_id.clone())
                        .or_default()
                        .extend(p);
                }
            }
            TaskKind::Fer | TaskKind::Eri => *report.unscored.entry(r.task).or_default() += 1,
        }
    }

    let mut push =
        |task: TaskKind, metric: &str, result: Result<f64, EvalError>, count: usize| match result {
            Ok(value) => {
                report.entries.push(MetricEntry {
                    task,
                    metric: metric.to_string(),
                    value,
                    count,
                });
                Ok(())
            }
            Err(EvalError::UndefinedMetric(reason)) => {
                report.undefined.push(UndefinedMetric {
                    task,
                    metric: metric.to_string(),
                    reason,
                });
                Ok(())
            }
            Err(e) => Err(e),
        };

    if !sentiment.1.is_empty() {
        for &scheme in schemes.schemes() {
            let count = match scheme {
                Acc2Scheme::Nn => sentiment.1.len(),
                Acc2Scheme::Np => sentiment.1.iter().filter(|g| **g != 0.0).count(),
            };
            push(
                TaskKind::Msa,
                scheme.metric_name(),
                acc2(&sentiment.0, &sentiment.1, scheme),
                count,
            )?;
        }
    }
    if !emotion.1.is_empty() {
        let n = emotion.1.len();
        push(TaskKind::Er, "acc", accuracy(&emotion.0, &emotion.1), n)?;
        push(
            TaskKind::Er,
            "weighted_f1",
            weighted_f1(&emotion.0, &emotion.1),
            n,
        )?;
    }
    if ecpe_items > 0 {
        match ecpe_scores(&pred_pairs, &gold_pairs) {
            Ok(s) => {
                push(TaskKind::Ecpe, "f1", Ok(s.f1), s.gold_pairs)?;
                push(
                    TaskKind::Ecpe,
                    "weighted_f1",
                    Ok(s.weighted_f1),
                    s.gold_pairs,
                )?;
            }
            Err(e) => {
                push(TaskKind::Ecpe, "f1", Err(e), 0)?;
            }
        }
    }
    Ok(report)
}
