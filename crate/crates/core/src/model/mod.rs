//! Toy vision-language model, its adapter-based fine-tuning and checkpoints.

mod autograd;
mod checkpoint;
mod encoder;
mod lora;
mod tokenizer;
mod toy;
mod train;

use std::path::PathBuf;

use ndarray::{concatenate, Array2, Axis};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use autograd::{Grads, Tape, Var};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use encoder::{load_media, uniform_stride, EncoderConfig, Frame, VisualInput, VisualTokens};
pub use lora::{Adapter, Linear};
pub use tokenizer::{Vocabulary, EOS, NEWLINE, SEP, UNK};
pub use toy::{
    vocabulary_for, AdapterTarget, Block, Example, FusedInput, MediaCache, ModelConfig,
    PatchEncoder, ProjectedTokens, TextTokens, ToyModel,
};
pub use train::{lr_at, train_stage, AdamW, OptimConfig, StepLog, TrainReport};

use crate::scheduler::SchedulerError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("cannot decode media `{media_ref}`: {message}")]
    Media { media_ref: String, message: String },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),
    #[error("loss diverged at step {step}; recent losses: {trace:?}")]
    Divergence { step: usize, trace: Vec<f64> },
    #[error("frozen parameters changed during training: {0}")]
    FrozenViolation(String),
    #[error("training stream is empty")]
    EmptyStream,
    #[error("no adapters attached; call apply_adapters before training")]
    NoAdapters,
    #[error("text input is empty")]
    EmptyText,
    #[error(transparent)]
    Identifier(#[from] SchedulerError),
}

/// Maps visual tokens into the language model's embedding space.
pub fn project(tv: &VisualTokens, model: &ToyModel) -> Result<ProjectedTokens, ModelError> {
    if tv.tokens.ncols() != model.projector.nrows() {
        return Err(ModelError::Shape(format!(
            "visual tokens have width {} but the projector expects {} (d_vision)",
            tv.tokens.ncols(),
            model.projector.nrows()
        )));
    }
    Ok(ProjectedTokens {
        tokens: tv.tokens.dot(&model.projector),
    })
}

/// Visual tokens first, then text tokens, without any mixing.
pub fn fuse(visual: Option<&ProjectedTokens>, text: &TextTokens) -> Result<FusedInput, ModelError> {
    if text.embedded.nrows() == 0 {
        return Err(ModelError::EmptyText);
    }
    let Some(visual) = visual else {
        return Ok(FusedInput {
            matrix: text.embedded.clone(),
            boundary: 0,
        });
    };
    if visual.tokens.ncols() != text.embedded.ncols() {
        return Err(ModelError::Shape(format!(
            "projected width {} differs from text width {}",
            visual.tokens.ncols(),
            text.embedded.ncols()
        )));
    }
    let matrix = concatenate(Axis(0), &[visual.tokens.view(), text.embedded.view()])
        .map_err(|e| ModelError::Shape(e.to_string()))?;
    Ok(FusedInput {
        matrix,
        boundary: visual.tokens.nrows(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub max_new_tokens: usize,
    /// Zero means greedy decoding.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 48,
            temperature: 0.0,
            seed: 0,
        }
    }
}

/// Autoregressively decodes a response until `<eos>` or the token budget.
pub fn forward(
    x: &FusedInput,
    model: &ToyModel,
    decode: &DecodeConfig,
) -> Result<String, ModelError> {
    if !decode.temperature.is_finite() || decode.temperature < 0.0 {
        return Err(ModelError::Config(format!(
            "temperature must be >= 0, got {}",
            decode.temperature
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(decode.seed);
    let mut matrix: Array2<f64> = x.matrix.clone();
    let mut out = Vec::new();
    for _ in 0..decode.max_new_tokens {
        let logits = model.logits(&FusedInput {
            matrix: matrix.clone(),
            boundary: x.boundary,
        })?;
        let last = logits.row(logits.nrows() - 1);
        let next = if decode.temperature == 0.0 {
            last.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        } else {
            let max = last.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let weights: Vec<f64> = last
                .iter()
                .map(|v| ((v - max) / decode.temperature).exp())
                .collect();
            WeightedIndex::new(&weights)
                .map_err(|e| ModelError::NonFinite(format!("sampling weights: {e}")))?
                .sample(&mut rng)
        };
        if next == model.vocab.eos() {
            break;
        }
        out.push(next);
        matrix = concatenate(
            Axis(0),
            &[matrix.view(), model.embed.row(next).insert_axis(Axis(0))],
        )
        .map_err(|e| ModelError::Shape(e.to_string()))?;
    }
    Ok(model.vocab.decode(&out))
}

/// Returns `model` with rank-`rank` adapters on every targeted layer.
/// Base weights are left untouched and stay frozen.
pub fn apply_adapters(
    mut model: ToyModel,
    rank: usize,
    alpha: f64,
    targets: &[AdapterTarget],
) -> Result<ToyModel, ModelError> {
    let seed = model.config.seed;
    model.attach_adapters(rank, alpha, targets, seed)?;
    Ok(model)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
