use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SchedulerError;
use crate::dataset::TaskRecord;
use crate::labels::TaskKind;

/// Literal tokens that select a task when prepended to a query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskIdentifierMap {
    tokens: BTreeMap<TaskKind, String>,
}

impl Default for TaskIdentifierMap {
    fn default() -> Self {
        Self {
            tokens: [
                (TaskKind::Msa, "<sentiment>"),
                (TaskKind::Er, "<emotion>"),
                (TaskKind::Fer, "<caption>"),
                (TaskKind::Eri, "<reason>"),
                (TaskKind::Ecpe, "<emotion cause-pair>"),
            ]
            .into_iter()
            .map(|(t, s)| (t, s.to_string()))
            .collect(),
        }
    }
}

impl TaskIdentifierMap {
    pub fn new(tokens: BTreeMap<TaskKind, String>) -> Result<Self, SchedulerError> {
        if let Some(missing) = TaskKind::ALL.into_iter().find(|t| !tokens.contains_key(t)) {
            return Err(SchedulerError::UnknownTask(missing));
        }
        let mut seen = std::collections::BTreeSet::new();
        for tok in tokens.values() {
            if tok.trim().is_empty() || !seen.insert(tok.as_str()) {
                return Err(SchedulerError::NotBijective(tok.clone()));
            }
        }
        // A token that prefixes another would make prefix detection ambiguous.
        for a in tokens.values() {
            if tokens.values().any(|b| a != b && b.starts_with(a.as_str())) {
                return Err(SchedulerError::NotBijective(a.clone()));
            }
        }
        Ok(Self { tokens })
    }

    pub fn identifier(&self, task: TaskKind) -> Result<&str, SchedulerError> {
        self.tokens
            .get(&task)
            .map(String::as_str)
            .ok_or(SchedulerError::UnknownTask(task))
    }

    pub fn tokens(&self) -> impl Iterator<Item = (TaskKind, &str)> {
        self.tokens.iter().map(|(t, s)| (*t, s.as_str()))
    }

    /// The task whose identifier starts `text`, if any.
    pub fn task_prefix(&self, text: &str) -> Option<(TaskKind, &str)> {
        self.tokens().find(|(_, tok)| text.starts_with(tok))
    }
}

/// `identifier + " " + query`; a query that already starts with the identifier
/// is returned unchanged.
pub fn attach_identifier(
    record: &TaskRecord,
    map: &TaskIdentifierMap,
) -> Result<String, SchedulerError> {
    let token = map.identifier(record.task)?;
    if record.query.starts_with(token) {
        return Ok(record.query.clone());
    }
    Ok(format!("{token} {}", record.query))
}
