//! Multitask emotion and sentiment instruction-tuning pipeline.
//!
//! The crate is organized along the pipeline:
//!
//! - [`au`]: action-unit scores, peak frames and expression captions
//! - [`dataset`]: source annotations → five-task instruction records
//! - [`scheduler`]: two-stage task plans and deterministic training streams
//! - [`model`]: a desk-scale encoder → projector → language-model harness
//! - [`eval`]: response parsing and metrics
//! - [`config`] and [`cli`]: the run configuration and `affect-tune` commands

pub mod au;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod labels;
pub mod model;
pub mod scheduler;

pub use labels::{EmotionLabel, SentimentClass, SentimentThresholds, TaskKind};
