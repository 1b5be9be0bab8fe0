//! Emotion-reason generation through two pluggable models: a scene describer
//! (video → character/scene description) and a reason inferencer
//! (description + utterance → explanation). The mocks are pure templates and
//! are what the tests and the bundled fixtures use.

use super::{DatasetError, SourceSample};

pub trait SceneDescriber: Send + Sync {
    fn describe(&self, sample: &SourceSample) -> Result<String, String>;
}

pub trait ReasonInferencer: Send + Sync {
    fn infer(&self, description: &str, utterance: &str) -> Result<String, String>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockSceneDescriber;

impl SceneDescriber for MockSceneDescriber {
    fn describe(&self, sample: &SourceSample) -> Result<String, String> {
        let characters = sample
            .au_tracks
            .as_ref()
            .map(|t| t.len())
            .filter(|&n| n > 0)
            .unwrap_or(1);
        let emotion = sample
            .emotion_label
            .map(|e| e.as_str())
            .unwrap_or("an unclear emotion");
        let plural = if characters == 1 { "" } else { "s" };
        Ok(format!(
            "{characters} character{plural} in view; the speaker shows {emotion}"
        ))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockReasonInferencer;

impl ReasonInferencer for MockReasonInferencer {
    fn infer(&self, description: &str, utterance: &str) -> Result<String, String> {
        let said = if utterance.trim().is_empty() {
            "nothing audible".to_string()
        } else {
            format!("\"{}\"", utterance.trim())
        };
        Ok(format!(
            "The scene shows {description}. The emotion is explained by what the speaker says, {said}, together with the facial expression."
        ))
    }
}

pub fn generate_reason(
    sample: &SourceSample,
    describer: &dyn SceneDescriber,
    reasoner: &dyn ReasonInferencer,
) -> Result<String, DatasetError> {
    let fail = |message: String| DatasetError::Generation {
        sample_id: sample.sample_id.clone(),
        message,
    };
    let description = describer.describe(sample).map_err(fail)?;
    reasoner
        .infer(&description, &sample.utterance_text)
        .map_err(fail)
}
