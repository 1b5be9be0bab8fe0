//! Corpus manifests and annotation files.
//!
//! A manifest is a TOML file listing annotation files:
//!
//! ```toml
//! [[sources]]
//! name = "dialogues"
//! annotations = "dialogues.jsonl"
//! ```
//!
//! Each annotation file holds one JSON object per line; see `docs/formats.md`
//! for the row schema. Relative paths (annotation files, media, AU tables)
//! resolve against the directory of the file that names them.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CausePair, DatasetError, DialogueTurn, SourceSample};
use crate::au::read_openface_csv;
use crate::labels::EmotionLabel;

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    #[serde(default)]
    pub sources: Vec<SourceEntry>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SourceEntry {
    pub name: String,
    pub annotations: PathBuf,
}

/// A row that failed validation, kept for manual review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub source: String,
    pub file: String,
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    pub reasons: Vec<String>,
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub samples: Vec<SourceSample>,
    pub rejections: Vec<Rejection>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationRow {
    sample_id: String,
    #[serde(default)]
    media: Option<String>,
    #[serde(default)]
    utterance: String,
    #[serde(default)]
    sentiment: Option<f64>,
    #[serde(default)]
    emotion: Option<String>,
    #[serde(default)]
    dialogue: Vec<DialogueRow>,
    #[serde(default)]
    cause_pairs: Option<Vec<CausePairRow>>,
    #[serde(default)]
    au_files: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DialogueRow {
    id: String,
    speaker: String,
    text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CausePairRow {
    emotion_utterance: String,
    cause_utterance: String,
    emotion: String,
}

fn resolve(base: &Path, reference: &str) -> String {
    if reference.contains("://") || Path::new(reference).is_absolute() {
        reference.to_string()
    } else {
        base.join(reference).display().to_string()
    }
}

fn parse_emotion(raw: &str, reasons: &mut Vec<String>) -> Option<EmotionLabel> {
    match raw.parse() {
        Ok(e) => Some(e),
        Err(_) => {
            reasons.push(format!("unknown emotion label `{raw}`"));
            None
        }
    }
}

fn convert_row(row: AnnotationRow, base: &Path) -> Result<SourceSample, Vec<String>> {
    let mut reasons = Vec::new();
    let emotion_label = row
        .emotion
        .as_deref()
        .and_then(|e| parse_emotion(e, &mut reasons));
    let cause_pairs = row.cause_pairs.map(|pairs| {
        pairs
            .into_iter()
            .filter_map(|p| {
                Some(CausePair {
                    emotion: parse_emotion(&p.emotion, &mut reasons)?,
                    emotion_utterance_id: p.emotion_utterance,
                    cause_utterance_id: p.cause_utterance,
                })
            })
            .collect()
    });

    let mut au_tracks = None;
    if !row.au_files.is_empty() {
        let mut tracks = Vec::new();
        let mut seen = HashSet::new();
        for file in &row.au_files {
            match read_openface_csv(Path::new(&resolve(base, file))) {
                Ok(parsed) => {
                    for t in parsed {
                        if !seen.insert(t.character_id.clone()) {
                            reasons.push(format!(
                                "character `{}` appears in two AU tables",
                                t.character_id
                            ));
                        }
                        tracks.push(t);
                    }
                }
                Err(e) => reasons.push(format!("AU table `{file}`: {e}")),
            }
        }
        au_tracks = Some(tracks);
    }

    let sample = SourceSample {
        sample_id: row.sample_id,
        media_ref: row.media.map(|m| resolve(base, &m)),
        utterance_text: row.utterance,
        sentiment_score: row.sentiment,
        emotion_label,
        dialogue_context: row
            .dialogue
            .into_iter()
            .map(|d| DialogueTurn {
                utterance_id: d.id,
                speaker: d.speaker,
                text: d.text,
            })
            .collect(),
        cause_pairs,
        au_tracks,
    };
    reasons.extend(sample.violations());
    if reasons.is_empty() {
        Ok(sample)
    } else {
        Err(reasons)
    }
}

/// Reads every annotation file named by the manifest.
///
/// Unreadable files are hard errors; invalid rows (bad JSON, missing labels,
/// duplicate ids, broken AU tables, ...) land in the rejection report.
pub fn ingest_corpus(manifest_path: &Path) -> Result<IngestReport, DatasetError> {
    let text =
        std::fs::read_to_string(manifest_path).map_err(|e| DatasetError::io(manifest_path, e))?;
    let manifest: CorpusManifest = toml::from_str(&text).map_err(|e| DatasetError::Manifest {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));

    let mut report = IngestReport::default();
    let mut seen_ids = BTreeSet::new();
    for source in &manifest.sources {
        let path = root.join(&source.annotations);
        let body = std::fs::read_to_string(&path).map_err(|e| DatasetError::io(&path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let reject = |sample_id: Option<String>, reasons: Vec<String>| Rejection {
                source: source.name.clone(),
                file: path.display().to_string(),
                line: i + 1,
                sample_id,
                reasons,
            };
            let row: AnnotationRow = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(e) => {
                    report
                        .rejections
                        .push(reject(None, vec![format!("malformed row: {e}")]));
                    continue;
                }
            };
            let id = row.sample_id.clone();
            match convert_row(row, base) {
                Ok(sample) if !seen_ids.insert(sample.sample_id.clone()) => {
                    report
                        .rejections
                        .push(reject(Some(id), vec!["duplicate sample_id".to_string()]));
                }
                Ok(sample) => report.samples.push(sample),
                Err(reasons) => report.rejections.push(reject(Some(id), reasons)),
            }
        }
    }
    Ok(report)
}
