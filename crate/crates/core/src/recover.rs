//! Recovery heuristics and the relax-compensate-recover solve loop.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::compensate::{correct_split, Compensator, Scheme, Task};
use crate::decompose::{fully_decompose, DecomposedModel};
use crate::error::{RcrError, Result};
use crate::exact::ComponentEngine;
use crate::model::{is_log_zero, log_sum_exp, saturate, Assignment, FactorGraph, LOG_ZERO};

/// Gap under which a consistent decode certifies the bound.
pub const CERTIFICATION_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heuristic {
    /// Largest bound reduction from recovering the single constraint.
    Impact,
    /// Constraints violated by the decoded assignment first.
    Violation,
    /// Violated constraints ranked by impact, then the rest by impact.
    ImpactThenViolation,
    /// Recover nothing: stop after the first compensation.
    None,
}

impl Heuristic {
    fn needs_impact(self) -> bool {
        matches!(self, Heuristic::Impact | Heuristic::ImpactThenViolation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub heuristic: Heuristic,
    pub batch_size: usize,
    pub max_rounds: usize,
    pub task: Task,
    pub scheme: Scheme,
    /// Stop once the elimination plan of the compensated model needs more table entries.
    pub cost_budget: Option<u64>,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            heuristic: Heuristic::ImpactThenViolation,
            batch_size: 5,
            max_rounds: usize::MAX,
            task: Task::Mpe,
            scheme: Scheme::MpeDd,
            cost_budget: None,
        }
    }
}

impl RecoveryConfig {
    /// Checks the configuration against a model.
    pub fn validate(&self, fg: &FactorGraph) -> Result<()> {
        if self.batch_size == 0 {
            return Err(RcrError::Config("batch size must be at least 1".into()));
        }
        if matches!(self.heuristic, Heuristic::Violation | Heuristic::ImpactThenViolation)
            && (self.task != Task::Mpe || self.scheme != Scheme::MpeDd)
        {
            return Err(RcrError::Config(
                "the violation heuristics need the mpe task with the mpe-dd scheme".into(),
            ));
        }
        if self.scheme == Scheme::ModelSplit && self.task == Task::Mpe {
            return Err(RcrError::Config(
                "model-split compensation only approximates the partition function".into(),
            ));
        }
        let recovers = self.heuristic != Heuristic::None && self.max_rounds > 0;
        let needs_binary = recovers && (self.scheme.is_dual_decomposition() || self.heuristic.needs_impact());
        if needs_binary {
            if let Some(v) = fg.variables().iter().find(|v| v.cardinality != 2) {
                return Err(RcrError::UnsupportedModel(format!(
                    "variable {} has {} states; recovery with {:?} compensation and {:?} ranking needs binary variables",
                    v.id, v.cardinality, self.scheme, self.heuristic
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundState {
    /// Best upper bound so far; the latest estimate under model-split compensation.
    pub upper: f64,
    /// [`LOG_ZERO`] until a lower bound is known.
    pub lower: f64,
    /// Best assignment of the source variables found so far (MPE task).
    pub incumbent: Option<Assignment>,
    /// Relaxed constraints violated by the last decode.
    pub violated: BTreeSet<usize>,
    pub certified: bool,
}

/// One line of the solve trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: usize,
    pub recovered_total: usize,
    pub upper_bound_log: f64,
    pub lower_bound_log: f64,
    pub violated_count: usize,
    pub plan_total_table_entries: u64,
    pub certified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Certified,
    /// Every constraint was recovered and the result is exact.
    Exact,
    MaxRounds,
    CostBudget,
    /// The heuristic recovers nothing.
    NoRecovery,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
    pub stop: StopReason,
    pub constraints_total: usize,
    /// Plan cost of the fully decomposed model.
    pub decomposed_table_entries: u64,
}

impl SolveTrace {
    /// One JSON object per line, one line per round.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Vec<TraceRecord>> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| RcrError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

fn relaxed_binary(dm: &DecomposedModel, id: usize) -> Result<(usize, usize)> {
    let (c, _) = dm.relaxed_pair(id)?;
    let card = dm.graph().cardinality(c.original);
    if card != 2 {
        return Err(RcrError::UnsupportedModel(format!(
            "recovery impact is defined for binary variables; constraint {id} is over {card} states"
        )));
    }
    Ok((c.original, c.clone))
}

/// Would-be bound after recovering constraint `id` alone, using an engine built
/// on the current compensated graph.
pub fn impact_with(engine: &mut ComponentEngine, dm: &DecomposedModel, id: usize, task: Task) -> Result<f64> {
    let (x, xi) = relaxed_binary(dm, id)?;
    let pair = engine.pair_marginal(dm.graph(), task.semiring(), x, xi);
    let (to, tc) = dm.theta(id)?;
    let diag = [saturate(pair[0] - to[0] - tc[0]), saturate(pair[3] - to[1] - tc[1])];
    Ok(match task {
        Task::Pr => log_sum_exp(&diag),
        Task::Mpe => diag[0].max(diag[1]),
    })
}

/// Bound of the model obtained by recovering constraint `id` alone.
pub fn impact_of_recovery(dm: &DecomposedModel, id: usize, task: Task) -> Result<f64> {
    let mut engine = ComponentEngine::new(dm.graph());
    impact_with(&mut engine, dm, id, task)
}

/// Orders `relaxed` by a heuristic. `impact(id)` must be available for the
/// impact-based heuristics. Ties resolve by constraint id.
pub fn order_constraints(
    relaxed: &[usize],
    violated: &BTreeSet<usize>,
    heuristic: Heuristic,
    impact: impl Fn(usize) -> f64,
) -> Vec<usize> {
    let mut ids = relaxed.to_vec();
    ids.sort_unstable();
    let by_impact = |ids: &mut Vec<usize>| {
        let keyed: Vec<(f64, usize)> = ids.iter().map(|&id| (impact(id), id)).collect();
        let mut keyed = keyed;
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        *ids = keyed.into_iter().map(|(_, id)| id).collect();
    };
    match heuristic {
        Heuristic::None => ids,
        Heuristic::Impact => {
            by_impact(&mut ids);
            ids
        }
        Heuristic::Violation => {
            let (mut first, rest): (Vec<usize>, Vec<usize>) = ids.into_iter().partition(|id| violated.contains(id));
            first.extend(rest);
            first
        }
        Heuristic::ImpactThenViolation => {
            let (mut first, mut rest): (Vec<usize>, Vec<usize>) = ids.into_iter().partition(|id| violated.contains(id));
            by_impact(&mut first);
            by_impact(&mut rest);
            first.extend(rest);
            first
        }
    }
}

/// Ranks the relaxed constraints of `dm` for recovery.
pub fn rank_constraints(dm: &DecomposedModel, state: &BoundState, config: &RecoveryConfig) -> Result<Vec<usize>> {
    let relaxed = dm.relaxed_ids();
    let impacts = if config.heuristic.needs_impact() {
        let mut engine = ComponentEngine::new(dm.graph());
        let mut v = vec![f64::NAN; dm.constraints().len()];
        for &id in &relaxed {
            v[id] = impact_with(&mut engine, dm, id, config.task)?;
        }
        v
    } else {
        Vec::new()
    };
    Ok(order_constraints(&relaxed, &state.violated, config.heuristic, |id| {
        impacts[id]
    }))
}

/// Relax everything, then alternate compensation and batch recovery until the
/// decoded assignment violates no relaxed constraint, a limit is hit, or
/// nothing is left to recover.
pub fn rcr_solve(
    fg: &FactorGraph,
    config: &RecoveryConfig,
    tolerance: f64,
    max_iterations: usize,
) -> Result<(BoundState, SolveTrace)> {
    config.validate(fg)?;
    let mut dm = fully_decompose(fg);
    let mut state = BoundState {
        upper: f64::INFINITY,
        lower: LOG_ZERO,
        incumbent: None,
        violated: BTreeSet::new(),
        certified: false,
    };
    let mut trace = SolveTrace {
        records: Vec::new(),
        stop: StopReason::MaxRounds,
        constraints_total: dm.constraints().len(),
        decomposed_table_entries: 0,
    };
    let mut round = 0;
    loop {
        let mut comp = Compensator::new(&dm, config.scheme);
        let plan_total = comp.engine().plan().total_table_entries;
        if round == 0 {
            trace.decomposed_table_entries = plan_total;
        } else if config.cost_budget.is_some_and(|b| plan_total > b) {
            trace.stop = StopReason::CostBudget;
            break;
        }
        comp.run(&mut dm, tolerance, max_iterations)?;
        let upper = comp.bound(&dm, config.task);
        let upper = if config.scheme == Scheme::ModelSplit {
            // an estimate rather than a bound, so the latest value is reported
            let estimate = correct_split(&dm, upper)?;
            state.upper = estimate;
            estimate
        } else {
            state.upper = state.upper.min(upper);
            upper
        };
        let exact = dm.num_relaxed() == 0;
        match config.task {
            Task::Mpe => {
                let decoded = comp.engine().decode(dm.graph());
                state.violated = dm.violated_constraints(&decoded);
                let projected = dm.project(&decoded);
                let value = fg.evaluate(&projected)?;
                if state.incumbent.is_none() || value > state.lower {
                    state.lower = value;
                    state.incumbent = Some(projected);
                }
                state.certified = state.violated.is_empty()
                    && !is_log_zero(state.upper)
                    && (state.upper - state.lower).abs() <= CERTIFICATION_GAP;
                if is_log_zero(state.upper) && state.violated.is_empty() {
                    // every assignment has zero weight
                    state.certified = true;
                }
            }
            Task::Pr => {
                state.violated.clear();
                if exact {
                    state.lower = upper;
                    state.certified = true;
                }
            }
        }
        trace.records.push(TraceRecord {
            round,
            recovered_total: dm.num_recovered(),
            upper_bound_log: upper,
            lower_bound_log: state.lower,
            violated_count: state.violated.len(),
            plan_total_table_entries: plan_total,
            certified: state.certified,
        });
        if state.certified {
            trace.stop = if exact {
                StopReason::Exact
            } else {
                StopReason::Certified
            };
            break;
        }
        if config.heuristic == Heuristic::None {
            trace.stop = StopReason::NoRecovery;
            break;
        }
        if round >= config.max_rounds {
            trace.stop = StopReason::MaxRounds;
            break;
        }
        let relaxed = dm.relaxed_ids();
        let impacts = if config.heuristic.needs_impact() {
            let engine = comp.engine();
            let mut v = vec![f64::NAN; dm.constraints().len()];
            for &id in &relaxed {
                v[id] = impact_with(engine, &dm, id, config.task)?;
            }
            v
        } else {
            Vec::new()
        };
        let ranked = order_constraints(&relaxed, &state.violated, config.heuristic, |id| impacts[id]);
        for &id in ranked.iter().take(config.batch_size) {
            dm.recover(id)?;
        }
        round += 1;
    }
    Ok((state, trace))
}
