use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::TaskRecord;
use crate::labels::TaskKind;

/// Per-task record counts plus the number of distinct source samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub per_task: BTreeMap<TaskKind, usize>,
    pub distinct_samples: usize,
}

/// Reference corpus shape: MSA, ER, FER, ERI, ECPE entry counts and the
/// distinct-sample total of the full-size dataset this pipeline targets.
pub const REFERENCE_CORPUS_SHAPE: ([(TaskKind, usize); 5], usize) = (
    [
        (TaskKind::Msa, 25_859),
        (TaskKind::Er, 25_859),
        (TaskKind::Fer, 15_870),
        (TaskKind::Eri, 4_839),
        (TaskKind::Ecpe, 7_081),
    ],
    32_940,
);

impl DatasetStats {
    pub fn from_counts(
        per_task: impl IntoIterator<Item = (TaskKind, usize)>,
        distinct_samples: usize,
    ) -> Self {
        let mut map: BTreeMap<TaskKind, usize> =
            TaskKind::ALL.into_iter().map(|t| (t, 0)).collect();
        map.extend(per_task);
        Self {
            per_task: map,
            distinct_samples,
        }
    }

    pub fn total_records(&self) -> usize {
        self.per_task.values().sum()
    }

    /// A sample yields at most one record per task, so every per-task count is
    /// bounded by the distinct total, which in turn is bounded by the sum.
    pub fn shape_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (task, &n) in &self.per_task {
            if n > self.distinct_samples {
                v.push(format!(
                    "{task} count {n} exceeds distinct samples {}",
                    self.distinct_samples
                ));
            }
        }
        if self.distinct_samples > self.total_records() {
            v.push(format!(
                "distinct samples {} exceed summed task counts {}",
                self.distinct_samples,
                self.total_records()
            ));
        }
        v
    }
}

pub fn dataset_stats(records: &[TaskRecord]) -> DatasetStats {
    let mut counts: BTreeMap<TaskKind, usize> = BTreeMap::new();
    let mut samples = BTreeSet::new();
    for r in records {
        *counts.entry(r.task).or_default() += 1;
        samples.insert(r.source_sample_id.as_str());
    }
    DatasetStats::from_counts(counts, samples.len())
}
