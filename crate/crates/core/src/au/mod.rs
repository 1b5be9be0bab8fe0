//! Facial action-unit analysis: composite frame scores, peak-frame selection
//! within and across characters, and AU-grounded expression captions.

mod openface;
mod table;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::labels::EmotionLabel;

pub use openface::{parse_openface_csv, read_openface_csv};
pub use table::{is_canonical_au, AULexicon, EmotionAUTable};

#[derive(Debug, thiserror::Error)]
pub enum AuError {
    #[error("negative intensity {value} for {au} at frame {frame_index}")]
    NegativeIntensity {
        au: String,
        frame_index: u64,
        value: f64,
    },
    #[error("non-finite intensity for {au} at frame {frame_index}")]
    NonFiniteIntensity { au: String, frame_index: u64 },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error(
        "track `{character_id}`: frame indices must be strictly increasing ({prev} then {next})"
    )]
    UnorderedFrames {
        character_id: String,
        prev: u64,
        next: u64,
    },
    #[error("emotion `{0}` has no entry in the emotion/AU table")]
    MissingEmotion(EmotionLabel),
    #[error("no lexicon phrase for {0}")]
    MissingPhrase(String),
    #[error("`{0}` is not a canonical AU identifier (expected AU followed by two digits)")]
    InvalidAuId(String),
    #[error("presence threshold must be finite and >= 0, got {0}")]
    InvalidThreshold(f64),
    #[error("config: {0}")]
    Config(String),
    #[error("AU table {path}: {message}")]
    Table { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One video frame with its per-AU intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AUFrame {
    pub frame_index: u64,
    pub au_intensities: BTreeMap<String, f64>,
}

impl AUFrame {
    pub fn new<I, S>(frame_index: u64, intensities: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self {
            frame_index,
            au_intensities: intensities
                .into_iter()
                .map(|(k, v)| (k.into(), v))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), AuError> {
        for (au, &value) in &self.au_intensities {
            if !value.is_finite() {
                return Err(AuError::NonFiniteIntensity {
                    au: au.clone(),
                    frame_index: self.frame_index,
                });
            }
            if value < 0.0 {
                return Err(AuError::NegativeIntensity {
                    au: au.clone(),
                    frame_index: self.frame_index,
                    value,
                });
            }
        }
        Ok(())
    }

    /// AUs whose intensity is strictly above `threshold`.
    pub fn active_aus(&self, threshold: f64) -> BTreeSet<String> {
        self.au_intensities
            .iter()
            .filter(|(_, &v)| v > threshold)
            .map(|(k, _)| k.clone())
            .collect()
    }
}

/// Per-character time series of AU frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AUTrack {
    pub character_id: String,
    pub frames: Vec<AUFrame>,
}

impl AUTrack {
    /// Builds a track, checking frame ordering and intensities.
    pub fn new(character_id: impl Into<String>, frames: Vec<AUFrame>) -> Result<Self, AuError> {
        let track = Self {
            character_id: character_id.into(),
            frames,
        };
        track.validate()?;
        Ok(track)
    }

    pub fn validate(&self) -> Result<(), AuError> {
        for pair in self.frames.windows(2) {
            if pair[1].frame_index <= pair[0].frame_index {
                return Err(AuError::UnorderedFrames {
                    character_id: self.character_id.clone(),
                    prev: pair[0].frame_index,
                    next: pair[1].frame_index,
                });
            }
        }
        self.frames.iter().try_for_each(AUFrame::validate)
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSelection {
    pub character_id: String,
    pub frame_index: u64,
    pub score: f64,
}

/// Composite expressiveness of a frame: the sum of all of its AU intensities.
pub fn frame_score(frame: &AUFrame) -> Result<f64, AuError> {
    frame.validate()?;
    Ok(frame.au_intensities.values().sum())
}

/// Highest-scoring frame of one character. Ties go to the lowest frame index.
pub fn find_peak_frame(track: &AUTrack) -> Result<PeakSelection, AuError> {
    let mut best: Option<(u64, f64)> = None;
    for frame in &track.frames {
        let score = frame_score(frame)?;
        let better = match best {
            None => true,
            Some((idx, s)) => score > s || (score == s && frame.frame_index < idx),
        };
        if better {
            best = Some((frame.frame_index, score));
        }
    }
    let (frame_index, score) = best.ok_or(AuError::EmptyInput("track has no frames"))?;
    Ok(PeakSelection {
        character_id: track.character_id.clone(),
        frame_index,
        score,
    })
}

/// Orders candidates so that the preferred peak compares as `Greater`:
/// higher score, then smaller character id, then lower frame index.
fn peak_preference(a: &PeakSelection, b: &PeakSelection) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then_with(|| b.character_id.cmp(&a.character_id))
        .then_with(|| b.frame_index.cmp(&a.frame_index))
}

/// Final peak across all characters of a clip. Empty tracks are ignored.
pub fn select_final_peak(tracks: &[AUTrack]) -> Result<PeakSelection, AuError> {
    let mut best: Option<PeakSelection> = None;
    for track in tracks.iter().filter(|t| !t.is_empty()) {
        let peak = find_peak_frame(track)?;
        best = match best {
            Some(cur) if peak_preference(&peak, &cur) != Ordering::Greater => Some(cur),
            _ => Some(peak),
        };
    }
    best.ok_or(AuError::EmptyInput("no track has any frames"))
}

/// AUs both active in `frame` and listed for `emotion` in `table`.
pub fn common_aus(
    frame: &AUFrame,
    emotion: EmotionLabel,
    table: &EmotionAUTable,
    presence_threshold: f64,
) -> Result<BTreeSet<String>, AuError> {
    if !presence_threshold.is_finite() || presence_threshold < 0.0 {
        return Err(AuError::InvalidThreshold(presence_threshold));
    }
    let expected = table.aus_for(emotion)?;
    Ok(expected
        .iter()
        .filter(|au| {
            frame
                .au_intensities
                .get(au.as_str())
                .is_some_and(|&v| v > presence_threshold)
        })
        .cloned()
        .collect())
}

/// Renders an AU set as text: lexicon phrases in ascending AU order, or the
/// lexicon's neutral caption for the empty set.
pub fn caption_from_aus(aus: &BTreeSet<String>, lexicon: &AULexicon) -> Result<String, AuError> {
    if aus.is_empty() {
        return Ok(lexicon.neutral_caption.clone());
    }
    let phrases = aus
        .iter()
        .map(|au| lexicon.phrase(au))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(phrases.join(&lexicon.separator))
}

/// FER caption for a clip: final peak across characters, intersected with
/// the emotion's AU list, rendered through the lexicon.
pub fn caption_for_clip(
    tracks: &[AUTrack],
    emotion: EmotionLabel,
    table: &EmotionAUTable,
    lexicon: &AULexicon,
    presence_threshold: f64,
) -> Result<(PeakSelection, String), AuError> {
    let peak = select_final_peak(tracks)?;
    let frame = tracks
        .iter()
        .filter(|t| t.character_id == peak.character_id)
        .flat_map(|t| t.frames.iter())
        .find(|f| f.frame_index == peak.frame_index)
        .expect("peak refers to an existing frame");
    let aus = common_aus(frame, emotion, table, presence_threshold)?;
    let caption = caption_from_aus(&aus, lexicon)?;
    Ok((peak, caption))
}
