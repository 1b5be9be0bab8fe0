//! The run configuration shared by every command.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::au::{AULexicon, EmotionAUTable};
use crate::labels::{SentimentThresholds, TaskKind};
use crate::model::{AdapterTarget, DecodeConfig, ModelConfig, OptimConfig};
use crate::scheduler::{default_plans, ResolvedPlan, ScheduleConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Corpus manifest listing the annotation sources.
    pub manifest: Option<PathBuf>,
    /// Output root; `AFFECT_TUNE_OUT` or `--out` take precedence.
    pub output: Option<PathBuf>,
    /// Prebuilt record file; defaults to `<output>/records.jsonl`.
    pub records: Option<PathBuf>,
    pub emotion_au_table: Option<PathBuf>,
    pub au_lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasonSource {
    /// Template-based describer and inferencer; deterministic.
    #[default]
    Mock,
    /// No reason generator; ERI records are skipped.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub tasks: BTreeSet<TaskKind>,
    pub presence_threshold: f64,
    pub sentiment: SentimentThresholds,
    pub reason: ReasonSource,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            tasks: TaskKind::ALL.into_iter().collect(),
            presence_threshold: 0.0,
            sentiment: SentimentThresholds::default(),
            reason: ReasonSource::Mock,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<AdapterTarget>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 32.0,
            targets: vec![
                AdapterTarget::Q,
                AdapterTarget::K,
                AdapterTarget::V,
                AdapterTarget::O,
            ],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub dataset: DatasetConfig,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub adapter: AdapterConfig,
    pub optim: OptimConfig,
    pub decode: DecodeConfig,
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let dir = path
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let base = dir.canonicalize().unwrap_or_else(|_| dir.to_path_buf());
        let p = &mut cfg.paths;
        for field in [
            &mut p.manifest,
            &mut p.output,
            &mut p.records,
            &mut p.emotion_au_table,
            &mut p.au_lexicon,
        ] {
            rebase(&base, field);
        }
        Ok(cfg)
    }

    pub fn plans(
        &self,
        seed_flag: Option<u64>,
    ) -> Result<[ResolvedPlan; 2], crate::scheduler::SchedulerError> {
        default_plans(&self.schedule, self.seed, seed_flag)
    }

    pub fn emotion_table(&self) -> Result<EmotionAUTable, crate::au::AuError> {
        match &self.paths.emotion_au_table {
            Some(p) => EmotionAUTable::load(p),
            None => Ok(EmotionAUTable::default()),
        }
    }

    pub fn lexicon(&self) -> Result<AULexicon, crate::au::AuError> {
        match &self.paths.au_lexicon {
            Some(p) => AULexicon::load(p),
            None => Ok(AULexicon::default()),
        }
    }

    /// Every precondition violation across the pipeline's modules.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Vec::new();
        let d = &self.dataset;
        if d.tasks.is_empty() {
            v.push("dataset.tasks is empty".to_string());
        }
        if !(d.presence_threshold.is_finite() && d.presence_threshold >= 0.0) {
            v.push(format!(
                "dataset.presence_threshold must be >= 0, got {}",
                d.presence_threshold
            ));
        }
        if !d.sentiment.is_valid() {
            v.push("dataset.sentiment: negative_below must not exceed positive_above".into());
        }
        match (self.emotion_table(), self.lexicon()) {
            (Ok(table), Ok(lexicon)) => {
                if let Err(e) = lexicon.check_covers(&table) {
                    v.push(format!("AU lexicon: {e}"));
                }
            }
            (t, l) => {
                v.extend(t.err().map(|e| format!("emotion-AU table: {e}")));
                v.extend(l.err().map(|e| format!("AU lexicon: {e}")));
            }
        }
        if let Err(e) = self.plans(None) {
            v.push(e.to_string());
        }
        if let Err(e) = self.model.validate() {
            v.push(e.to_string());
        }
        if let Err(e) = self.optim.validate() {
            v.push(e.to_string());
        }
        let a = &self.adapter;
        if a.targets.is_empty() {
            v.push("adapter.targets is empty".into());
        }
        if !(a.alpha.is_finite() && a.alpha > 0.0) {
            v.push(format!("adapter.alpha must be positive, got {}", a.alpha));
        }
        let narrowest = a
            .targets
            .iter()
            .map(|t| match t {
                AdapterTarget::MlpIn | AdapterTarget::MlpOut => {
                    self.model.d_model.min(self.model.d_ff)
                }
                _ => self.model.d_model,
            })
            .min()
            .unwrap_or(self.model.d_model);
        if a.rank == 0 || a.rank > narrowest {
            v.push(format!(
                "adapter.rank {} must be in 1..={narrowest} for the targeted layers",
                a.rank
            ));
        }
        if !(self.decode.temperature.is_finite() && self.decode.temperature >= 0.0) {
            v.push(format!(
                "decode.temperature must be >= 0, got {}",
                self.decode.temperature
            ));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
        let c = RunConfig::default();
        assert_eq!((c.adapter.rank, c.adapter.alpha), (8, 32.0));
        assert_eq!(c.optim.learning_rate, 1e-5);
        assert_eq!(c.optim.epochs, 2);
    }

    #[test]
    fn parses_and_rebases_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            r#"
seed = 9
[paths]
manifest = "corpus/manifest.toml"
[dataset]
tasks = ["MSA", "ER"]
[schedule]
ablation = "t1"
[schedule.stage1]
budget = 20
[model]
d_model = 16
[adapter]
rank = 4
targets = ["q", "mlp_in"]
"#,
        )
        .unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(
            c.paths.manifest.as_deref().unwrap(),
            dir.path()
                .canonicalize()
                .unwrap()
                .join("corpus/manifest.toml")
        );
        assert_eq!(c.dataset.tasks.len(), 2);
        assert_eq!(c.model.d_model, 16);
        c.validate().unwrap();
    }

    #[test]
    fn collects_every_violation() {
        let mut c = RunConfig::default();
        c.dataset.presence_threshold = -1.0;
        c.adapter.rank = 100;
        c.optim.epochs = 0;
        c.schedule.stage1.rates.insert(TaskKind::Ecpe, 0.5);
        match c.validate() {
            Err(ConfigError::Invalid(v)) => assert_eq!(v.len(), 4, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[model]\nd_modle = 3\n").unwrap();
        assert!(matches!(
            RunConfig::load(&path),
            Err(ConfigError::Parse { .. })
        ));
    }
}
