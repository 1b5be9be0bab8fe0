//! Source annotations → five-task instruction records.

mod ingest;
mod reason;
mod records;
mod stats;

use serde::{Deserialize, Serialize};

use crate::au::{AUTrack, AuError};
use crate::labels::{EmotionLabel, TaskKind};

pub use ingest::{ingest_corpus, CorpusManifest, IngestReport, Rejection, SourceEntry};
pub use reason::{
    generate_reason, MockReasonInferencer, MockSceneDescriber, ReasonInferencer, SceneDescriber,
};
pub use records::{
    build_corpus, build_records, format_cause_pairs, parse_cause_pairs, read_records,
    validate_record, write_records, BuildContext, BuildOutcome, ReasonGenerator, SkippedTask,
    TaskRecord,
};
pub use stats::{dataset_stats, DatasetStats, REFERENCE_CORPUS_SHAPE};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error("reason generation failed for sample `{sample_id}`: {message}")]
    Generation { sample_id: String, message: String },
    #[error("sample `{sample_id}`: {source}")]
    Au { sample_id: String, source: AuError },
    #[error("record file {path} line {line}: {message}")]
    RecordFormat {
        path: String,
        line: usize,
        message: String,
    },
}

impl DatasetError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub utterance_id: String,
    pub speaker: String,
    pub text: String,
}

/// An (emotion utterance, cause utterance, emotion) triple within one conversation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CausePair {
    pub emotion_utterance_id: String,
    pub cause_utterance_id: String,
    pub emotion: EmotionLabel,
}

/// One validated annotation row: a clip plus its text and whatever labels it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSample {
    pub sample_id: String,
    pub media_ref: Option<String>,
    pub utterance_text: String,
    pub sentiment_score: Option<f64>,
    pub emotion_label: Option<EmotionLabel>,
    pub dialogue_context: Vec<DialogueTurn>,
    pub cause_pairs: Option<Vec<CausePair>>,
    pub au_tracks: Option<Vec<AUTrack>>,
}

impl SourceSample {
    /// Minimal sample with only an id and media; labels are filled in by callers.
    pub fn new(sample_id: impl Into<String>, media_ref: Option<String>) -> Self {
        Self {
            sample_id: sample_id.into(),
            media_ref,
            utterance_text: String::new(),
            sentiment_score: None,
            emotion_label: None,
            dialogue_context: Vec::new(),
            cause_pairs: None,
            au_tracks: None,
        }
    }

    /// Invariant violations of this sample, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.sample_id.trim().is_empty() {
            out.push("empty sample_id".to_string());
        }
        if self.sentiment_score.is_none()
            && self.emotion_label.is_none()
            && self.cause_pairs.is_none()
        {
            out.push("sample carries no sentiment score, emotion label or cause pairs".to_string());
        }
        if let Some(s) = self.sentiment_score {
            if !(-3.0..=3.0).contains(&s) {
                out.push(format!("sentiment score {s} outside [-3, 3]"));
            }
        }
        for turn in &self.dialogue_context {
            if !is_utterance_id(&turn.utterance_id) {
                out.push(format!("invalid utterance id `{}`", turn.utterance_id));
            }
        }
        if let Some(pairs) = &self.cause_pairs {
            for p in pairs {
                for id in [&p.emotion_utterance_id, &p.cause_utterance_id] {
                    if !self.dialogue_context.iter().any(|t| &t.utterance_id == id) {
                        out.push(format!("cause pair references unknown utterance `{id}`"));
                    }
                }
            }
        }
        out
    }

    pub fn satisfies(&self, task: TaskKind, has_reason_generator: bool) -> Result<(), String> {
        let need = |cond: bool, what: &str| if cond { Ok(()) } else { Err(what.to_string()) };
        if task.is_vision_conditioned() {
            need(self.media_ref.is_some(), "no media reference")?;
        }
        match task {
            TaskKind::Msa => need(self.sentiment_score.is_some(), "no sentiment score"),
            TaskKind::Er => need(self.emotion_label.is_some(), "no emotion label"),
            TaskKind::Fer => {
                need(self.emotion_label.is_some(), "no emotion label")?;
                need(
                    self.au_tracks
                        .as_ref()
                        .is_some_and(|t| t.iter().any(|t| !t.is_empty())),
                    "no AU frames",
                )
            }
            TaskKind::Eri => {
                need(self.emotion_label.is_some(), "no emotion label")?;
                need(has_reason_generator, "no reason generator configured")
            }
            TaskKind::Ecpe => need(
                self.cause_pairs.as_ref().is_some_and(|p| !p.is_empty()),
                "no cause pairs",
            ),
        }
    }
}

/// Utterance ids are restricted so the cause-pair grammar stays unambiguous.
pub fn is_utterance_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}
