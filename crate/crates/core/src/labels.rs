//! Closed vocabularies shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The seven utterance-level emotion classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Anger,
    Disgust,
    Sadness,
    Joy,
    Neutral,
    Surprise,
    Fear,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 7] = [
        EmotionLabel::Anger,
        EmotionLabel::Disgust,
        EmotionLabel::Sadness,
        EmotionLabel::Joy,
        EmotionLabel::Neutral,
        EmotionLabel::Surprise,
        EmotionLabel::Fear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Anger => "anger",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Joy => "joy",
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Fear => "fear",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for EmotionLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded = s.trim().to_ascii_lowercase();
        EmotionLabel::ALL
            .into_iter()
            .find(|e| e.as_str() == folded)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

/// The five instruction-tuning tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TaskKind {
    /// Multimodal sentiment analysis.
    Msa,
    /// Emotion recognition.
    Er,
    /// Facial expression recognition (AU-grounded caption).
    Fer,
    /// Emotion reason inference.
    Eri,
    /// Emotion cause-pair extraction.
    Ecpe,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Msa,
        TaskKind::Er,
        TaskKind::Fer,
        TaskKind::Eri,
        TaskKind::Ecpe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Msa => "MSA",
            TaskKind::Er => "ER",
            TaskKind::Fer => "FER",
            TaskKind::Eri => "ERI",
            TaskKind::Ecpe => "ECPE",
        }
    }

    /// Tasks whose records must carry at least one media reference.
    pub fn is_vision_conditioned(self) -> bool {
        !matches!(self, TaskKind::Ecpe)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded = s.trim().to_ascii_uppercase();
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == folded)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

/// Discretized sentiment polarity used as the MSA response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentClass {
    Negative,
    Neutral,
    Positive,
}

impl SentimentClass {
    pub const ALL: [SentimentClass; 3] = [
        SentimentClass::Negative,
        SentimentClass::Neutral,
        SentimentClass::Positive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentClass::Negative => "negative",
            SentimentClass::Neutral => "neutral",
            SentimentClass::Positive => "positive",
        }
    }

    pub fn is_negative(self) -> bool {
        self == SentimentClass::Negative
    }
}

impl fmt::Display for SentimentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentimentClass {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded = s.trim().to_ascii_lowercase();
        SentimentClass::ALL
            .into_iter()
            .find(|c| c.as_str() == folded)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

/// Score-to-class discretization for sentiment scores in [-3, 3].
///
/// `score < negative_below` is negative, `score > positive_above` is positive,
/// anything in between (including both bounds) is neutral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SentimentThresholds {
    pub negative_below: f64,
    pub positive_above: f64,
}

impl Default for SentimentThresholds {
    fn default() -> Self {
        Self {
            negative_below: 0.0,
            positive_above: 0.0,
        }
    }
}

impl SentimentThresholds {
    pub fn classify(&self, score: f64) -> SentimentClass {
        if score < self.negative_below {
            SentimentClass::Negative
        } else if score > self.positive_above {
            SentimentClass::Positive
        } else {
            SentimentClass::Neutral
        }
    }

    pub fn is_valid(&self) -> bool {
        self.negative_below.is_finite()
            && self.positive_above.is_finite()
            && self.negative_below <= self.positive_above
    }
}
