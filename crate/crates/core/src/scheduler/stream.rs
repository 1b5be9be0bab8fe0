use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Budget, SchedulerError, StagePlan};
use crate::dataset::TaskRecord;
use crate::labels::TaskKind;

/// How records are distributed over tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Exact per-task quotas (largest remainder), then a seeded shuffle.
    #[default]
    Quota,
    /// Independent categorical draw of the task for every item.
    Iid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingItem {
    pub record: TaskRecord,
    pub stage_id: u8,
    pub position: usize,
}

/// Splits `total` over the rates: floor of each share, then the leftover
/// units go to the largest fractional remainders (ties: task order).
pub fn largest_remainder_quotas(
    rates: &BTreeMap<TaskKind, f64>,
    total: usize,
) -> BTreeMap<TaskKind, usize> {
    let rate_sum: f64 = rates.values().sum();
    if rates.is_empty() || rate_sum <= 0.0 {
        return rates.keys().map(|t| (*t, 0)).collect();
    }
    let mut quotas = BTreeMap::new();
    let mut remainders = Vec::new();
    for (&task, &rate) in rates {
        let exact = rate / rate_sum * total as f64;
        // Guard against shares like 0.29 * 100 = 28.999999999999996.
        let floor = (exact + 1e-9).floor().min(total as f64);
        quotas.insert(task, floor as usize);
        remainders.push((task, exact - floor));
    }
    let assigned: usize = quotas.values().sum();
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (task, _) in remainders.into_iter().take(total.saturating_sub(assigned)) {
        *quotas.get_mut(&task).expect("quota exists") += 1;
    }
    quotas
}

/// Records not consumed by an earlier stage.
pub fn remaining_pool(records: &[TaskRecord], consumed: &BTreeSet<String>) -> Vec<TaskRecord> {
    records
        .iter()
        .filter(|r| !consumed.contains(&r.record_id))
        .cloned()
        .collect()
}

pub fn stream_task_counts(stream: &[TrainingItem]) -> BTreeMap<TaskKind, usize> {
    let mut counts = BTreeMap::new();
    for item in stream {
        *counts.entry(item.record.task).or_insert(0) += 1;
    }
    counts
}

fn task_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const INTERLEAVE_STREAM: u64 = 1 << 32;

/// Takes `n` records from a pool in seeded-shuffled order, reshuffling for
/// each further pass when the pool is smaller than `n`.
fn draw(pool: &[&TaskRecord], n: usize, rng: &mut ChaCha8Rng) -> Vec<TaskRecord> {
    let mut out = Vec::with_capacity(n);
    let mut order: Vec<&TaskRecord> = pool.to_vec();
    while out.len() < n {
        order.shuffle(rng);
        out.extend(order.iter().take(n - out.len()).map(|r| (*r).clone()));
    }
    out
}

/// Assigns records to the stage's tasks and returns the interleaved stream.
///
/// Pools are sorted by record id before any randomness is applied, so the
/// selection depends only on the pool's contents, the plan and the seed.
pub fn assign_stream(
    records: &[TaskRecord],
    plan: &StagePlan,
    mode: SamplingMode,
) -> Result<Vec<TrainingItem>, SchedulerError> {
    let violations = super::verify_plan(plan);
    if !violations.is_empty() {
        return Err(SchedulerError::InvalidPlan(violations));
    }
    let planned: BTreeMap<TaskKind, f64> = plan.planned_tasks().collect();
    let mut pools: BTreeMap<TaskKind, Vec<&TaskRecord>> =
        planned.keys().map(|t| (*t, Vec::new())).collect();
    for r in records {
        if let Some(pool) = pools.get_mut(&r.task) {
            pool.push(r);
        }
    }
    let empty: Vec<TaskKind> = pools
        .iter()
        .filter(|(_, p)| p.is_empty())
        .map(|(t, _)| *t)
        .collect();
    if !empty.is_empty() {
        return Err(SchedulerError::Shortage(empty));
    }
    for pool in pools.values_mut() {
        pool.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    }

    let available: usize = pools.values().map(Vec::len).sum();
    let budget = match plan.sample_budget {
        Budget::Fixed(n) => n,
        Budget::Remaining => available,
    };

    let mut selected: Vec<TaskRecord> = Vec::with_capacity(budget);
    match mode {
        SamplingMode::Quota => {
            let mut quotas = largest_remainder_quotas(&planned, budget);
            for (task, quota) in quotas.iter_mut() {
                let pool = &pools[task];
                if plan.sample_budget == Budget::Remaining {
                    *quota = (*quota).min(pool.len());
                } else if *quota > pool.len() {
                    log::warn!(
                        "stage {}: {task} quota {quota} exceeds its {} records; oversampling",
                        plan.stage_id,
                        pool.len()
                    );
                }
                let mut rng = task_rng(plan.seed, *task as u64);
                selected.extend(draw(pool, *quota, &mut rng));
            }
        }
        SamplingMode::Iid => {
            let tasks: Vec<(TaskKind, f64)> = planned.iter().map(|(t, r)| (*t, *r)).collect();
            let total: f64 = tasks.iter().map(|(_, r)| r).sum();
            let mut rng = task_rng(plan.seed, 0);
            for _ in 0..budget {
                let mut u = rng.random::<f64>() * total;
                let mut chosen = tasks[tasks.len() - 1].0;
                for (t, r) in &tasks {
                    if u < *r {
                        chosen = *t;
                        break;
                    }
                    u -= r;
                }
                let pool = &pools[&chosen];
                selected.push(pool[rng.random_range(0..pool.len())].clone());
            }
        }
    }

    selected.shuffle(&mut task_rng(plan.seed, INTERLEAVE_STREAM));
    Ok(selected
        .into_iter()
        .enumerate()
        .map(|(position, record)| TrainingItem {
            record,
            stage_id: plan.stage_id,
            position,
        })
        .collect())
}
