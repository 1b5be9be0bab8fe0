//! Response parsing and the sentiment, emotion and cause-pair metrics.

mod metrics;
mod parse;
mod report;

use std::path::PathBuf;

use thiserror::Error;

pub use metrics::{acc2, accuracy, ecpe_scores, weighted_f1, Acc2Scheme, EcpeScores};
pub use parse::{parse_response, Parsed};
pub use report::{
    evaluate_predictions, read_predictions, write_predictions, MetricEntry, MetricReport,
    Prediction, SchemeSelection, UndefinedMetric,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("predictions ({preds}) and gold ({gold}) differ in length")]
    Length { preds: usize, gold: usize },
    #[error("gold sentiment score {0} is not finite")]
    NonFiniteGold(f64),
    #[error("gold response of `{record_id}` does not parse: {message}")]
    BadGold { record_id: String, message: String },
    #[error("no prediction for record `{0}`")]
    MissingPrediction(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
}
