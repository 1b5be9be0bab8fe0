use std::str::FromStr;

use crate::dataset::{parse_cause_pairs, CausePair};
use crate::labels::{EmotionLabel, SentimentClass, SentimentThresholds, TaskKind};

/// A model response interpreted under its task's grammar. Failures are
/// values so they can be scored as wrong.
#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Sentiment(SentimentClass),
    Emotion(EmotionLabel),
    Pairs(Vec<CausePair>),
    Text(String),
    Failure(String),
}

impl Parsed {
    pub fn sentiment(&self) -> Option<SentimentClass> {
        match self {
            Parsed::Sentiment(s) => Some(*s),
            _ => None,
        }
    }

    pub fn emotion(&self) -> Option<EmotionLabel> {
        match self {
            Parsed::Emotion(e) => Some(*e),
            _ => None,
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self, Parsed::Failure(_))
    }
}

fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
}

/// Exact case-insensitive match first, then a label that appears as the
/// only candidate word in the text.
fn match_label<L: FromStr + PartialEq + Copy>(text: &str) -> Option<L> {
    let trimmed = text.trim().trim_end_matches(['.', '!', '?']).trim();
    if let Ok(l) = trimmed.parse::<L>() {
        return Some(l);
    }
    let mut found: Option<L> = None;
    for w in words(text) {
        if let Ok(l) = w.parse::<L>() {
            match found {
                Some(prev) if prev != l => return None,
                _ => found = Some(l),
            }
        }
    }
    found
}

pub fn parse_response(task: TaskKind, text: &str, thresholds: &SentimentThresholds) -> Parsed {
    let fail = || Parsed::Failure(text.to_string());
    match task {
        TaskKind::Msa => {
            if let Ok(score) = text.trim().parse::<f64>() {
                if score.is_finite() {
                    return Parsed::Sentiment(thresholds.classify(score));
                }
            }
            match_label(text).map_or_else(fail, Parsed::Sentiment)
        }
        TaskKind::Er => match_label(text).map_or_else(fail, Parsed::Emotion),
        TaskKind::Ecpe => {
            let (pairs, bad) = parse_cause_pairs(text);
            if pairs.is_empty() && bad > 0 {
                fail()
            } else {
                Parsed::Pairs(pairs)
            }
        }
        TaskKind::Fer | TaskKind::Eri => Parsed::Text(text.trim().to_string()),
    }
}
