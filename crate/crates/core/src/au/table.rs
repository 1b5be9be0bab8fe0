use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use super::AuError;
use crate::labels::EmotionLabel;

const DEFAULT_TABLE: &str = include_str!("../../config/emotion_au.toml");
const DEFAULT_LEXICON: &str = include_str!("../../config/au_lexicon.toml");

/// `AU` followed by exactly two digits, e.g. `AU06`.
pub fn is_canonical_au(id: &str) -> bool {
    id.len() == 4 && id.starts_with("AU") && id[2..].bytes().all(|b| b.is_ascii_digit())
}

/// Emotion → expected action units.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionAUTable {
    entries: BTreeMap<EmotionLabel, BTreeSet<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    emotions: BTreeMap<EmotionLabel, Vec<String>>,
}

impl EmotionAUTable {
    /// Builds a table without the completeness check; used for partial tables in tests
    /// and by [`EmotionAUTable::parse`] before validation.
    pub fn from_entries<I, A, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (EmotionLabel, A)>,
        A: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            entries: entries
                .into_iter()
                .map(|(e, aus)| (e, aus.into_iter().map(Into::into).collect()))
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, AuError> {
        let file: TableFile =
            toml::from_str(text).map_err(|e| AuError::Config(format!("emotion/AU table: {e}")))?;
        let table = Self::from_entries(file.emotions);
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, AuError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), AuError> {
        if let Some(missing) = EmotionLabel::ALL
            .into_iter()
            .find(|e| !self.entries.contains_key(e))
        {
            return Err(AuError::MissingEmotion(missing));
        }
        for au in self.entries.values().flatten() {
            if !is_canonical_au(au) {
                return Err(AuError::InvalidAuId(au.clone()));
            }
        }
        Ok(())
    }

    pub fn aus_for(&self, emotion: EmotionLabel) -> Result<&BTreeSet<String>, AuError> {
        self.entries
            .get(&emotion)
            .ok_or(AuError::MissingEmotion(emotion))
    }

    pub fn all_aus(&self) -> BTreeSet<&str> {
        self.entries
            .values()
            .flatten()
            .map(String::as_str)
            .collect()
    }
}

impl Default for EmotionAUTable {
    fn default() -> Self {
        Self::parse(DEFAULT_TABLE).expect("bundled emotion/AU table is valid")
    }
}

/// AU → human-readable phrase, plus caption rendering settings.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AULexicon {
    pub neutral_caption: String,
    #[serde(default = "default_separator")]
    pub separator: String,
    pub phrases: BTreeMap<String, String>,
}

fn default_separator() -> String {
    ", ".to_string()
}

impl AULexicon {
    pub fn parse(text: &str) -> Result<Self, AuError> {
        let lexicon: AULexicon =
            toml::from_str(text).map_err(|e| AuError::Config(format!("AU lexicon: {e}")))?;
        if let Some(bad) = lexicon.phrases.keys().find(|k| !is_canonical_au(k)) {
            return Err(AuError::InvalidAuId(bad.clone()));
        }
        Ok(lexicon)
    }

    pub fn load(path: &Path) -> Result<Self, AuError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn phrase(&self, au: &str) -> Result<&str, AuError> {
        self.phrases
            .get(au)
            .map(String::as_str)
            .ok_or_else(|| AuError::MissingPhrase(au.to_string()))
    }

    /// Every AU named by `table` must have a phrase.
    pub fn check_covers(&self, table: &EmotionAUTable) -> Result<(), AuError> {
        match table
            .all_aus()
            .into_iter()
            .find(|au| !self.phrases.contains_key(*au))
        {
            Some(au) => Err(AuError::MissingPhrase(au.to_string())),
            None => Ok(()),
        }
    }
}

impl Default for AULexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled AU lexicon is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_defaults_are_consistent() {
        let table = EmotionAUTable::default();
        let lexicon = AULexicon::default();
        lexicon.check_covers(&table).unwrap();
        let joy: Vec<_> = table
            .aus_for(EmotionLabel::Joy)
            .unwrap()
            .iter()
            .cloned()
            .collect();
        assert_eq!(joy, ["AU06", "AU12"]);
        let surprise: Vec<_> = table
            .aus_for(EmotionLabel::Surprise)
            .unwrap()
            .iter()
            .cloned()
            .collect();
        assert_eq!(surprise, ["AU01", "AU02", "AU05", "AU26"]);
    }

    #[test]
    fn incomplete_table_rejected() {
        let err = EmotionAUTable::parse("[emotions]\njoy = [\"AU06\"]\n").unwrap_err();
        assert!(matches!(err, AuError::MissingEmotion(_)));
    }

    #[test]
    fn non_canonical_ids_rejected() {
        let mut text = DEFAULT_TABLE.replace("\"AU12\"", "\"AU12_r\"");
        assert!(matches!(
            EmotionAUTable::parse(&text),
            Err(AuError::InvalidAuId(_))
        ));
        text = DEFAULT_LEXICON.replace("AU45 =", "blink =");
        assert!(matches!(
            AULexicon::parse(&text),
            Err(AuError::InvalidAuId(_))
        ));
    }

    #[test]
    fn lexicon_gap_detected() {
        let mut lex = AULexicon::default();
        lex.phrases.remove("AU26");
        assert!(matches!(
            lex.check_covers(&EmotionAUTable::default()),
            Err(AuError::MissingPhrase(_))
        ));
    }
}
