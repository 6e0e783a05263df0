//! Compensation schemes for relaxed equivalence constraints and the
//! fixed-point iteration that searches for them.
//!
//! All θ tables are log-domain. The two dual-decomposition schemes keep
//! `log θ(x) + log θ(x_i) = 0` for every state, which makes the value of the
//! compensated model an upper bound on the source value. Model-split keeps each
//! θ table normalized to a linear sum of one instead.

use serde::{Deserialize, Serialize};

use crate::decompose::DecomposedModel;
use crate::error::{RcrError, Result};
use crate::exact::{ComponentEngine, Semiring};
use crate::model::{is_log_zero, log_sum_exp, LOG_ZERO};

/// Largest magnitude a log θ entry may take. Reached only when one side of a
/// binary update has zero mass.
pub const THETA_LOG_CAP: f64 = 1e3;

/// Tolerance on `log θ(x) + log θ(x_i)` before a bound is refused.
pub const UPPER_BOUND_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    Mpe,
    Pr,
}

impl Task {
    pub fn semiring(self) -> Semiring {
        match self {
            Task::Mpe => Semiring::MaxProduct,
            Task::Pr => Semiring::SumProduct,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    ModelSplit,
    PrDd,
    MpeDd,
}

impl Scheme {
    /// Semiring of the marginals the scheme equalizes.
    pub fn semiring(self) -> Semiring {
        match self {
            Scheme::ModelSplit | Scheme::PrDd => Semiring::SumProduct,
            Scheme::MpeDd => Semiring::MaxProduct,
        }
    }

    pub fn is_dual_decomposition(self) -> bool {
        matches!(self, Scheme::PrDd | Scheme::MpeDd)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// Number of full sweeps performed.
    pub iterations: usize,
    /// Largest absolute log θ change in the final sweep.
    pub max_delta: f64,
    pub converged: bool,
    /// Value of the compensated model before the first sweep and after each sweep.
    pub bound_trajectory: Vec<f64>,
    /// State pairs left untouched because a marginal was zero.
    pub skipped_states: usize,
}

/// Decoupled update that keeps θ(x)θ(x_i) = 1. `orig_div[x]` is log Z(x)/θ(x) and
/// `clone_div[x]` is log Z(x_i)/θ(x_i). Returns the new log θ(x) table and the
/// number of skipped states; states with a zero marginal keep `old`.
pub fn dd_decoupled_theta(orig_div: &[f64], clone_div: &[f64], old: &[f64]) -> (Vec<f64>, usize) {
    let mut skipped = 0;
    let theta = orig_div
        .iter()
        .zip(clone_div)
        .zip(old)
        .map(|((&a, &b), &prev)| {
            if is_log_zero(a) || is_log_zero(b) {
                skipped += 1;
                prev
            } else {
                (0.5 * (b - a)).clamp(-THETA_LOG_CAP, THETA_LOG_CAP)
            }
        })
        .collect();
    (theta, skipped)
}

/// Binary update ratio log θ(x)/θ(¬x) from the two θ-divided cross terms
/// `log Z(¬x, x_i)/θ(¬x)θ(x_i)` and `log Z(x, ¬x_i)/θ(x)θ(¬x_i)`.
/// `None` when both cross terms are zero.
pub fn dd_binary_log_ratio(not_x_with_xi: f64, x_with_not_xi: f64) -> Option<f64> {
    match (is_log_zero(not_x_with_xi), is_log_zero(x_with_not_xi)) {
        (true, true) => None,
        (true, false) => Some(-THETA_LOG_CAP),
        (false, true) => Some(THETA_LOG_CAP),
        (false, false) => Some((0.5 * (not_x_with_xi - x_with_not_xi)).clamp(-THETA_LOG_CAP, THETA_LOG_CAP)),
    }
}

fn normalize(table: &[f64]) -> Option<Vec<f64>> {
    let z = log_sum_exp(table);
    if is_log_zero(z) {
        return None;
    }
    Some(
        table
            .iter()
            .map(|&v| if is_log_zero(v) { LOG_ZERO } else { v - z })
            .collect(),
    )
}

fn max_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter().zip(new).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Holds the inference engine for one compensation run over a fixed graph
/// structure. Recovering a constraint changes the structure; build a new
/// compensator afterwards.
#[derive(Debug, Clone)]
pub struct Compensator {
    engine: ComponentEngine,
    scheme: Scheme,
    skipped: usize,
}

impl Compensator {
    pub fn new(dm: &DecomposedModel, scheme: Scheme) -> Self {
        Compensator {
            engine: ComponentEngine::new(dm.graph()),
            scheme,
            skipped: 0,
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn engine(&mut self) -> &mut ComponentEngine {
        &mut self.engine
    }

    pub fn skipped_states(&self) -> usize {
        self.skipped
    }

    /// Value of the compensated model for `task`, without checking the θ condition.
    pub fn bound(&mut self, dm: &DecomposedModel, task: Task) -> f64 {
        self.engine.value(dm.graph(), task.semiring())
    }

    fn apply(&mut self, dm: &mut DecomposedModel, id: usize, on_original: &[f64], on_clone: &[f64]) -> Result<f64> {
        let (old_o, old_c) = dm.theta(id)?;
        let delta = max_change(old_o, on_original).max(max_change(old_c, on_clone));
        let (x, xi) = {
            let c = dm.constraint(id)?;
            (c.original, c.clone)
        };
        dm.set_theta(id, on_original, on_clone)?;
        self.engine.invalidate(x);
        self.engine.invalidate(xi);
        Ok(delta)
    }

    /// θ(x) ∝ Z(x_i)/θ(x_i), θ(x_i) ∝ Z(x)/θ(x), each normalized to sum to one.
    pub fn update_split(&mut self, dm: &mut DecomposedModel, id: usize) -> Result<f64> {
        let (x, xi) = {
            let (c, _) = dm.relaxed_pair(id)?;
            (c.original, c.clone)
        };
        let s = Semiring::SumProduct;
        let (to, tc) = dm.theta(id)?;
        let orig_div: Vec<f64> = self
            .engine
            .local_marginal(dm.graph(), s, x)
            .iter()
            .zip(to)
            .map(|(&m, &t)| if is_log_zero(m) { LOG_ZERO } else { m - t })
            .collect();
        let clone_div: Vec<f64> = self
            .engine
            .local_marginal(dm.graph(), s, xi)
            .iter()
            .zip(tc)
            .map(|(&m, &t)| if is_log_zero(m) { LOG_ZERO } else { m - t })
            .collect();
        let new_o = normalize(&clone_div).ok_or(RcrError::DegenerateConstraint(id))?;
        let new_c = normalize(&orig_div).ok_or(RcrError::DegenerateConstraint(id))?;
        self.apply(dm, id, &new_o, &new_c)
    }

    /// Per-state square-root update; needs the original and the clone in
    /// different components of the compensated model.
    pub fn update_decoupled(&mut self, dm: &mut DecomposedModel, id: usize) -> Result<f64> {
        let (x, xi) = {
            let (c, _) = dm.relaxed_pair(id)?;
            (c.original, c.clone)
        };
        if self.engine.same_component(x, xi) {
            return Err(RcrError::NotDecoupled { constraint: id });
        }
        let s = self.scheme.semiring();
        let (to, tc) = dm.theta(id)?;
        // component-local marginals differ from global ones by a factor common to
        // all states, which only moves θ(X) and θ(X_i) by reciprocal constants
        let orig_div: Vec<f64> = self
            .engine
            .local_marginal(dm.graph(), s, x)
            .iter()
            .zip(to)
            .map(|(&m, &t)| if is_log_zero(m) { LOG_ZERO } else { m - t })
            .collect();
        let clone_div: Vec<f64> = self
            .engine
            .local_marginal(dm.graph(), s, xi)
            .iter()
            .zip(tc)
            .map(|(&m, &t)| if is_log_zero(m) { LOG_ZERO } else { m - t })
            .collect();
        let (new_o, skipped) = dd_decoupled_theta(&orig_div, &clone_div, to);
        self.skipped += skipped;
        let new_c: Vec<f64> = new_o.iter().map(|v| -v).collect();
        self.apply(dm, id, &new_o, &new_c)
    }

    /// Binary-variable update with θ(¬x) = θ(¬x_i) = 1, valid whether or not the
    /// original and the clone are connected. State 0 plays the role of `x`.
    pub fn update_binary(&mut self, dm: &mut DecomposedModel, id: usize) -> Result<f64> {
        let (x, xi) = {
            let (c, _) = dm.relaxed_pair(id)?;
            (c.original, c.clone)
        };
        let card = dm.graph().cardinality(x);
        if card != 2 {
            return Err(RcrError::UnsupportedModel(format!(
                "the binary compensation update needs binary variables; constraint {id} is over variable {x} with {card} states"
            )));
        }
        let s = self.scheme.semiring();
        // the remaining components contribute a common factor that cancels in the ratio
        let pair = self.engine.local_pair_marginal(dm.graph(), s, x, xi);
        let (to, tc) = dm.theta(id)?;
        let not_x_with_xi = crate::model::saturate(pair[2] - to[1] - tc[0]);
        let x_with_not_xi = crate::model::saturate(pair[1] - to[0] - tc[1]);
        match dd_binary_log_ratio(not_x_with_xi, x_with_not_xi) {
            Some(r) => self.apply(dm, id, &[r, 0.0], &[-r, 0.0]),
            None => {
                self.skipped += 1;
                Ok(0.0)
            }
        }
    }

    /// Applies the update rule appropriate for the scheme and the current structure.
    pub fn update(&mut self, dm: &mut DecomposedModel, id: usize) -> Result<f64> {
        match self.scheme {
            Scheme::ModelSplit => self.update_split(dm, id),
            Scheme::PrDd | Scheme::MpeDd => {
                let c = dm.constraint(id)?;
                if !c.is_relaxed() {
                    return Err(RcrError::AlreadyRecovered(id));
                }
                if self.engine.same_component(c.original, c.clone) {
                    self.update_binary(dm, id)
                } else {
                    self.update_decoupled(dm, id)
                }
            }
        }
    }

    /// One round-robin pass over the relaxed constraints in id order.
    pub fn sweep(&mut self, dm: &mut DecomposedModel) -> Result<f64> {
        let mut max_delta = 0.0f64;
        for id in dm.relaxed_ids() {
            max_delta = max_delta.max(self.update(dm, id)?);
        }
        Ok(max_delta)
    }

    /// Sweeps until the largest log θ change is at most `tolerance` or
    /// `max_iterations` sweeps have run.
    pub fn run(
        &mut self,
        dm: &mut DecomposedModel,
        tolerance: f64,
        max_iterations: usize,
    ) -> Result<ConvergenceReport> {
        let task = match self.scheme.semiring() {
            Semiring::MaxProduct => Task::Mpe,
            Semiring::SumProduct => Task::Pr,
        };
        let skipped_before = self.skipped;
        let mut trajectory = vec![self.bound(dm, task)];
        if dm.num_relaxed() == 0 {
            return Ok(ConvergenceReport {
                iterations: 0,
                max_delta: 0.0,
                converged: true,
                bound_trajectory: trajectory,
                skipped_states: 0,
            });
        }
        let mut iterations = 0;
        let mut max_delta = f64::INFINITY;
        while iterations < max_iterations {
            max_delta = self.sweep(dm)?;
            iterations += 1;
            trajectory.push(self.bound(dm, task));
            if max_delta <= tolerance {
                break;
            }
        }
        Ok(ConvergenceReport {
            iterations,
            max_delta,
            converged: max_delta <= tolerance,
            bound_trajectory: trajectory,
            skipped_states: self.skipped - skipped_before,
        })
    }
}

/// Model-split update for one constraint.
pub fn update_split_pair(dm: &mut DecomposedModel, id: usize) -> Result<()> {
    Compensator::new(dm, Scheme::ModelSplit)
        .update_split(dm, id)
        .map(|_| ())
}

/// Decoupled dual-decomposition update for one constraint.
pub fn update_dd_decoupled(dm: &mut DecomposedModel, id: usize, scheme: Scheme) -> Result<()> {
    dd_scheme(scheme)?;
    Compensator::new(dm, scheme).update_decoupled(dm, id).map(|_| ())
}

/// Binary dual-decomposition update for one constraint.
pub fn update_dd_binary(dm: &mut DecomposedModel, id: usize, scheme: Scheme) -> Result<()> {
    dd_scheme(scheme)?;
    Compensator::new(dm, scheme).update_binary(dm, id).map(|_| ())
}

fn dd_scheme(scheme: Scheme) -> Result<()> {
    if scheme.is_dual_decomposition() {
        Ok(())
    } else {
        Err(RcrError::Config("expected the pr-dd or mpe-dd scheme".into()))
    }
}

/// Runs the fixed-point iteration on all relaxed constraints.
pub fn compensate(
    dm: &mut DecomposedModel,
    scheme: Scheme,
    tolerance: f64,
    max_iterations: usize,
) -> Result<ConvergenceReport> {
    Compensator::new(dm, scheme).run(dm, tolerance, max_iterations)
}

fn check_upper_bound_condition(dm: &DecomposedModel) -> Result<()> {
    let worst = dm.upper_bound_violation();
    if worst > UPPER_BOUND_TOLERANCE {
        return Err(RcrError::Contract(format!(
            "compensation violates θ(x)θ(x_i) = 1 by {worst:e} in log; the bound would not hold"
        )));
    }
    Ok(())
}

/// Upper bound on the source MPE value or partition function.
pub fn upper_bound(dm: &DecomposedModel, task: Task) -> Result<f64> {
    check_upper_bound_condition(dm)?;
    Ok(ComponentEngine::new(dm.graph()).value(dm.graph(), task.semiring()))
}

/// Separable dual objective of a fully decomposed model: per-variable maxima of
/// the θ products plus per-factor maxima of ψ divided by the clone-side θ.
pub fn dual_objective_closed_form(dm: &DecomposedModel) -> Result<f64> {
    if dm.num_recovered() > 0 {
        return Err(RcrError::Contract(
            "the closed-form dual objective needs a fully decomposed model".into(),
        ));
    }
    check_upper_bound_condition(dm)?;
    let source = dm.source();
    let n = source.num_variables();
    let mut per_var: Vec<Vec<f64>> = (0..n).map(|v| vec![0.0; source.cardinality(v)]).collect();
    let mut constraint_of_clone = vec![usize::MAX; dm.graph().num_variables()];
    for c in dm.constraints() {
        constraint_of_clone[c.clone] = c.id;
        let (to, _) = dm.theta(c.id)?;
        for (acc, t) in per_var[c.original].iter_mut().zip(to) {
            *acc = crate::model::log_mul(*acc, *t);
        }
    }
    let mut total = 0.0;
    for f in source.factors() {
        match f.scope.len() {
            0 => total = crate::model::log_mul(total, f.table[0]),
            1 => {
                for (acc, t) in per_var[f.scope[0]].iter_mut().zip(&f.table) {
                    *acc = crate::model::log_mul(*acc, *t);
                }
            }
            _ => {
                // clone-side multipliers are the reciprocals of the original-side ones
                let g = &dm.graph().factors()[f.id];
                let thetas: Vec<&[f64]> = g
                    .scope
                    .iter()
                    .map(|&clone| dm.theta(constraint_of_clone[clone]).map(|t| t.0))
                    .collect::<Result<_>>()?;
                let cards: Vec<usize> = f.scope.iter().map(|&v| source.cardinality(v)).collect();
                let mut states = vec![0usize; cards.len()];
                let mut best = LOG_ZERO;
                for &psi in &f.table {
                    if !is_log_zero(psi) {
                        let div: f64 = thetas.iter().zip(&states).map(|(t, &s)| t[s]).sum();
                        best = best.max(psi - div);
                    }
                    crate::model::advance(&mut states, cards.iter().copied());
                }
                total = crate::model::log_mul(total, best);
            }
        }
    }
    for t in &per_var {
        let m = t.iter().copied().fold(LOG_ZERO, f64::max);
        total = crate::model::log_mul(total, m);
    }
    Ok(total)
}

/// Partition-function estimate under model-split compensation: the compensated
/// partition function divided, per relaxed constraint, by Σ_x θ(x)θ(x_i). On a
/// fully decomposed model at a fixed point this is the Bethe approximation.
pub fn split_estimate(dm: &DecomposedModel) -> Result<f64> {
    let value = ComponentEngine::new(dm.graph()).value(dm.graph(), Semiring::SumProduct);
    correct_split(dm, value)
}

pub(crate) fn correct_split(dm: &DecomposedModel, compensated: f64) -> Result<f64> {
    let mut total = compensated;
    for id in dm.relaxed_ids() {
        let (to, tc) = dm.theta(id)?;
        let overlap: Vec<f64> = to.iter().zip(tc).map(|(a, b)| a + b).collect();
        total -= log_sum_exp(&overlap);
    }
    Ok(total)
}
