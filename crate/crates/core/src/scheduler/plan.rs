use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::SchedulerError;
use crate::labels::TaskKind;

/// Allowed deviation of the rate sum from 1.
pub const RATE_TOLERANCE: f64 = 1e-9;

/// Stage-1 sample budget of the reference recipe.
pub const STAGE1_BUDGET: usize = 15_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Fixed(usize),
    /// Every record left in the pool, capped per task by the stage rates.
    Remaining,
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Fixed(n) => write!(f, "{n}"),
            Budget::Remaining => f.write_str("remaining"),
        }
    }
}

impl Serialize for Budget {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Budget::Fixed(n) => s.serialize_u64(*n as u64),
            Budget::Remaining => s.serialize_str("remaining"),
        }
    }
}

impl<'de> Deserialize<'de> for Budget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(i64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) if n >= 0 => Ok(Budget::Fixed(n as usize)),
            Raw::Count(n) => Err(serde::de::Error::custom(format!("negative budget {n}"))),
            Raw::Word(w) if w == "remaining" => Ok(Budget::Remaining),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "budget must be a count or \"remaining\", got \"{w}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage_id: u8,
    pub task_rates: BTreeMap<TaskKind, f64>,
    pub sample_budget: Budget,
    pub seed: u64,
}

impl StagePlan {
    /// Tasks with a strictly positive rate.
    pub fn planned_tasks(&self) -> impl Iterator<Item = (TaskKind, f64)> + '_ {
        self.task_rates
            .iter()
            .filter(|(_, &r)| r > 0.0)
            .map(|(t, r)| (*t, *r))
    }

    /// Sets the given rates and rescales the unspecified tasks proportionally
    /// so the sum stays 1. When every task is specified nothing is rescaled.
    pub fn set_rates(&mut self, overrides: &BTreeMap<TaskKind, f64>) {
        let fixed: f64 = overrides.values().sum();
        let free: Vec<TaskKind> = self
            .task_rates
            .keys()
            .filter(|t| !overrides.contains_key(t))
            .copied()
            .collect();
        let free_sum: f64 = free.iter().map(|t| self.task_rates[t]).sum();
        let remainder = 1.0 - fixed;
        if !free.is_empty() && free_sum > 0.0 && remainder >= 0.0 {
            for t in free {
                let r = self.task_rates.get_mut(&t).expect("free task present");
                *r *= remainder / free_sum;
            }
        }
        self.task_rates
            .extend(overrides.iter().map(|(t, r)| (*t, *r)));
    }
}

/// Stage/task matrix: FER only in stage 1, ERI and ECPE only in stage 2.
pub fn allowed_tasks(stage_id: u8) -> &'static [TaskKind] {
    match stage_id {
        1 => &[TaskKind::Msa, TaskKind::Er, TaskKind::Fer],
        2 => &[TaskKind::Msa, TaskKind::Er, TaskKind::Eri, TaskKind::Ecpe],
        _ => &[],
    }
}

/// Violations of the plan invariants, empty when the plan is valid.
pub fn verify_plan(plan: &StagePlan) -> Vec<String> {
    let mut v = Vec::new();
    if !matches!(plan.stage_id, 1 | 2) {
        v.push(format!("stage id must be 1 or 2, got {}", plan.stage_id));
    }
    let allowed = allowed_tasks(plan.stage_id);
    for (task, &rate) in &plan.task_rates {
        if !allowed.contains(task) {
            v.push(format!(
                "task {task} is not trained in stage {}",
                plan.stage_id
            ));
        }
        if !rate.is_finite() || !(0.0..=1.0).contains(&rate) {
            v.push(format!("rate {rate} for {task} outside [0, 1]"));
        }
    }
    let sum: f64 = plan.task_rates.values().sum();
    if sum.is_nan() || (sum - 1.0).abs() > RATE_TOLERANCE {
        v.push(format!("rates sum to {sum}, expected 1"));
    }
    if plan.sample_budget == Budget::Fixed(0) {
        v.push("sample budget must be positive".to_string());
    }
    v
}

/// Where a resolved plan value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Value given explicitly by the reference recipe.
    Published,
    /// This toolkit's fixed reading of a qualitative recipe statement.
    Interpreted,
    /// Set by an ablation preset.
    Ablation,
    /// Set in the run configuration.
    Config,
    /// Set on the command line.
    Flag,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Published => "published recipe",
            Provenance::Interpreted => "interpreted default",
            Provenance::Ablation => "ablation preset",
            Provenance::Config => "config",
            Provenance::Flag => "command line",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPlan {
    pub plan: StagePlan,
    /// Keys: `budget`, `seed`, and `rate.<TASK>`.
    pub provenance: BTreeMap<String, Provenance>,
}

impl ResolvedPlan {
    pub fn render(&self) -> String {
        let p = &self.plan;
        let src = |k: &str| {
            self.provenance
                .get(k)
                .copied()
                .unwrap_or(Provenance::Interpreted)
        };
        let mut out = format!("stage {}\n", p.stage_id);
        out.push_str(&format!(
            "  {:<12}{:>10}   [{}]\n",
            "budget",
            p.sample_budget.to_string(),
            src("budget")
        ));
        out.push_str(&format!(
            "  {:<12}{:>10}   [{}]\n",
            "seed",
            p.seed,
            src("seed")
        ));
        for (task, rate) in &p.task_rates {
            let key = format!("rate.{task}");
            out.push_str(&format!("  {:<12}{:>10.4}   [{}]\n", key, rate, src(&key)));
        }
        out
    }
}

/// Named variants of the stage configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// Stage 2 trains ER only.
    T1,
    /// Stage 2 drops MSA; ER, ERI and ECPE share the rate equally.
    T3,
    /// Stage 2 trains all four tasks (the default recipe).
    #[default]
    T4,
    /// Stage 1 with a low FER rate.
    Lf,
    /// Stage 1 with a high FER rate (the default recipe).
    Hf,
}

impl Ablation {
    fn apply(self, plans: &mut [ResolvedPlan; 2]) {
        let (stage, rates): (usize, &[(TaskKind, f64)]) = match self {
            Ablation::T4 | Ablation::Hf => return,
            Ablation::T1 => (1, &[(TaskKind::Er, 1.0)]),
            Ablation::T3 => (1, &[(TaskKind::Msa, 0.0)]),
            Ablation::Lf => (0, &[(TaskKind::Fer, 0.2)]),
        };
        let target = &mut plans[stage];
        target.plan.set_rates(&rates.iter().copied().collect());
        for task in target.plan.task_rates.keys() {
            target
                .provenance
                .insert(format!("rate.{task}"), Provenance::Ablation);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanOverride {
    /// Partial rate map; unspecified tasks are rescaled to keep the sum at 1.
    #[serde(default)]
    pub rates: BTreeMap<TaskKind, f64>,
    #[serde(default)]
    pub budget: Option<Budget>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub sampling: super::SamplingMode,
    #[serde(default)]
    pub stage1: PlanOverride,
    #[serde(default)]
    pub stage2: PlanOverride,
}

fn reference_plans(seed: u64) -> [ResolvedPlan; 2] {
    let make = |stage_id: u8, rates: &[(TaskKind, f64)], budget: Budget, budget_src: Provenance| {
        let mut provenance = BTreeMap::from([
            ("budget".to_string(), budget_src),
            ("seed".to_string(), Provenance::Interpreted),
        ]);
        for (t, _) in rates {
            provenance.insert(format!("rate.{t}"), Provenance::Interpreted);
        }
        ResolvedPlan {
            plan: StagePlan {
                stage_id,
                task_rates: rates.iter().copied().collect(),
                sample_budget: budget,
                seed,
            },
            provenance,
        }
    };
    [
        make(
            1,
            &[
                (TaskKind::Msa, 0.40),
                (TaskKind::Fer, 0.40),
                (TaskKind::Er, 0.20),
            ],
            Budget::Fixed(STAGE1_BUDGET),
            Provenance::Published,
        ),
        make(
            2,
            &[
                (TaskKind::Msa, 0.10),
                (TaskKind::Er, 0.30),
                (TaskKind::Eri, 0.30),
                (TaskKind::Ecpe, 0.30),
            ],
            Budget::Remaining,
            Provenance::Interpreted,
        ),
    ]
}

/// Resolves both stage plans: reference defaults, then the ablation preset,
/// then config overrides, then a command-line seed. Fails with every
/// violation found when a resolved plan is invalid.
pub fn default_plans(
    config: &ScheduleConfig,
    base_seed: u64,
    seed_flag: Option<u64>,
) -> Result<[ResolvedPlan; 2], SchedulerError> {
    let mut plans = reference_plans(base_seed);
    config.ablation.apply(&mut plans);
    for (resolved, over) in plans.iter_mut().zip([&config.stage1, &config.stage2]) {
        if !over.rates.is_empty() {
            resolved.plan.set_rates(&over.rates);
            for task in over.rates.keys() {
                resolved
                    .provenance
                    .insert(format!("rate.{task}"), Provenance::Config);
            }
        }
        if let Some(b) = over.budget {
            resolved.plan.sample_budget = b;
            resolved
                .provenance
                .insert("budget".into(), Provenance::Config);
        }
        if let Some(s) = over.seed {
            resolved.plan.seed = s;
            resolved
                .provenance
                .insert("seed".into(), Provenance::Config);
        }
    }
    if let Some(seed) = seed_flag {
        for (i, resolved) in plans.iter_mut().enumerate() {
            // Stage 2 gets a distinct but derived seed so its shuffles differ from stage 1.
            resolved.plan.seed = seed.wrapping_add(i as u64);
            resolved.provenance.insert("seed".into(), Provenance::Flag);
        }
    }
    let violations: Vec<String> = plans
        .iter()
        .flat_map(|r| {
            verify_plan(&r.plan)
                .into_iter()
                .map(move |v| format!("stage {}: {v}", r.plan.stage_id))
        })
        .collect();
    if violations.is_empty() {
        Ok(plans)
    } else {
        Err(SchedulerError::InvalidPlan(violations))
    }
}
