//! Variable cloning, the equivalence-constraint registry and recovery.
//!
//! The decomposed graph keeps the source variables at their original ids and
//! appends one clone per variable occurrence in each factor of arity two or
//! more. Every relaxed constraint `eq(X, X_i)` is represented by two unary
//! compensation factors, one over `X` and one over `X_i`. Potential factors
//! keep their source order at the front of the factor list.

use std::collections::BTreeSet;

use crate::error::{RcrError, Result};
use crate::model::{Assignment, Factor, FactorGraph, FactorKind, Side, VarOrigin, Variable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintStatus {
    Relaxed,
    Recovered,
}

/// Factor ids of the two compensation factors replacing one relaxed constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompensationPair {
    pub on_original: usize,
    pub on_clone: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalenceConstraint {
    pub id: usize,
    pub original: usize,
    /// Current id of the clone variable; meaningless once recovered.
    pub clone: usize,
    /// Potential factor in which the clone occurs.
    pub factor: usize,
    pub status: ConstraintStatus,
    pub compensation: Option<CompensationPair>,
}

impl EquivalenceConstraint {
    pub fn is_relaxed(&self) -> bool {
        self.status == ConstraintStatus::Relaxed
    }
}

#[derive(Debug, Clone)]
pub struct DecomposedModel {
    graph: FactorGraph,
    constraints: Vec<EquivalenceConstraint>,
    source: FactorGraph,
}

/// Clones every variable occurrence in factors of arity two or more and
/// registers a relaxed constraint with θ ≡ 1 compensation for each.
pub fn fully_decompose(fg: &FactorGraph) -> DecomposedModel {
    let n = fg.num_variables();
    let mut variables: Vec<Variable> = fg.variables().to_vec();
    let mut factors: Vec<Factor> = Vec::with_capacity(fg.num_factors());
    let mut constraints = Vec::new();
    for f in fg.factors() {
        let mut g = f.clone();
        if f.scope.len() >= 2 {
            for slot in g.scope.iter_mut() {
                let original = *slot;
                let clone = variables.len();
                variables.push(Variable {
                    id: clone,
                    cardinality: fg.cardinality(original),
                    origin: VarOrigin::CloneOf { original, factor: f.id },
                });
                constraints.push(EquivalenceConstraint {
                    id: constraints.len(),
                    original,
                    clone,
                    factor: f.id,
                    status: ConstraintStatus::Relaxed,
                    compensation: None,
                });
                *slot = clone;
            }
        }
        factors.push(g);
    }
    for c in &mut constraints {
        let card = fg.cardinality(c.original);
        let on_original = factors.len();
        factors.push(Factor {
            id: on_original,
            scope: vec![c.original],
            table: vec![0.0; card],
            kind: FactorKind::Compensation {
                constraint: c.id,
                side: Side::Original,
            },
        });
        let on_clone = factors.len();
        factors.push(Factor {
            id: on_clone,
            scope: vec![c.clone],
            table: vec![0.0; card],
            kind: FactorKind::Compensation {
                constraint: c.id,
                side: Side::Clone,
            },
        });
        c.compensation = Some(CompensationPair { on_original, on_clone });
    }
    debug_assert!(variables.len() >= n);
    let graph = FactorGraph::from_parts(variables, factors).expect("decomposition of a valid graph");
    DecomposedModel {
        graph,
        constraints,
        source: fg.clone(),
    }
}

impl DecomposedModel {
    pub fn graph(&self) -> &FactorGraph {
        &self.graph
    }

    pub fn source(&self) -> &FactorGraph {
        &self.source
    }

    pub fn constraints(&self) -> &[EquivalenceConstraint] {
        &self.constraints
    }

    pub fn constraint(&self, id: usize) -> Result<&EquivalenceConstraint> {
        self.constraints.get(id).ok_or(RcrError::UnknownConstraint(id))
    }

    pub fn relaxed(&self) -> impl Iterator<Item = &EquivalenceConstraint> {
        self.constraints.iter().filter(|c| c.is_relaxed())
    }

    pub fn relaxed_ids(&self) -> Vec<usize> {
        self.relaxed().map(|c| c.id).collect()
    }

    pub fn num_relaxed(&self) -> usize {
        self.relaxed().count()
    }

    pub fn num_recovered(&self) -> usize {
        self.constraints.len() - self.num_relaxed()
    }

    pub(crate) fn relaxed_pair(&self, id: usize) -> Result<(&EquivalenceConstraint, CompensationPair)> {
        let c = self.constraint(id)?;
        match c.compensation {
            Some(pair) if c.is_relaxed() => Ok((c, pair)),
            _ => Err(RcrError::AlreadyRecovered(id)),
        }
    }

    /// `(log θ(x), log θ(x_i))` tables of a relaxed constraint.
    pub fn theta(&self, id: usize) -> Result<(&[f64], &[f64])> {
        let (_, pair) = self.relaxed_pair(id)?;
        let fs = self.graph.factors();
        Ok((&fs[pair.on_original].table, &fs[pair.on_clone].table))
    }

    /// Replaces both compensation tables of a relaxed constraint.
    pub fn set_theta(&mut self, id: usize, on_original: &[f64], on_clone: &[f64]) -> Result<()> {
        let (c, pair) = self.relaxed_pair(id)?;
        let card = self.graph.cardinality(c.original);
        if on_original.len() != card || on_clone.len() != card {
            return Err(RcrError::Contract(format!(
                "compensation tables for constraint {id} need {card} entries"
            )));
        }
        if on_original.iter().chain(on_clone).any(|v| !v.is_finite()) {
            return Err(RcrError::Contract(format!(
                "compensation tables for constraint {id} must be finite"
            )));
        }
        let fs = self.graph.factors_mut();
        fs[pair.on_original].table.copy_from_slice(on_original);
        fs[pair.on_clone].table.copy_from_slice(on_clone);
        Ok(())
    }

    /// Merges the clone of a relaxed constraint back into its original variable
    /// and removes the two compensation factors.
    pub fn recover(&mut self, id: usize) -> Result<()> {
        let (c, pair) = self.relaxed_pair(id)?;
        let (original, clone, factor) = (c.original, c.clone, c.factor);

        // drop the compensation factors, higher id first
        let removed = [pair.on_original.max(pair.on_clone), pair.on_original.min(pair.on_clone)];
        {
            let fs = self.graph.factors_mut();
            for &r in &removed {
                fs.remove(r);
            }
            for f in fs.iter_mut() {
                for v in f.scope.iter_mut() {
                    if *v == clone {
                        *v = original;
                    } else if *v > clone {
                        *v -= 1;
                    }
                }
            }
        }
        self.graph.renumber_factors();
        {
            let vars = self.graph.variables_mut();
            vars.remove(clone);
            for (i, v) in vars.iter_mut().enumerate() {
                v.id = i;
            }
        }
        let shift = |fid: usize| fid - removed.iter().filter(|&&r| r < fid).count();
        for other in &mut self.constraints {
            if let Some(p) = other.compensation.as_mut() {
                if other.id != id {
                    p.on_original = shift(p.on_original);
                    p.on_clone = shift(p.on_clone);
                }
            }
            if other.is_relaxed() && other.clone > clone {
                other.clone -= 1;
            }
        }
        let c = &mut self.constraints[id];
        c.status = ConstraintStatus::Recovered;
        c.compensation = None;
        debug_assert!(self.graph.factors()[factor].scope.contains(&original));
        Ok(())
    }

    /// Relaxed constraints whose original and clone disagree under `a`.
    pub fn violated_constraints(&self, a: &Assignment) -> BTreeSet<usize> {
        self.relaxed()
            .filter(|c| a.values()[c.original] != a.values()[c.clone])
            .map(|c| c.id)
            .collect()
    }

    /// Restriction of an assignment on the decomposed graph to the source variables.
    pub fn project(&self, a: &Assignment) -> Assignment {
        Assignment(a.values()[..self.source.num_variables()].to_vec())
    }

    /// Extends a source assignment to the decomposed graph by copying each
    /// original state onto its clones.
    pub fn lift(&self, a: &Assignment) -> Assignment {
        let vals = self
            .graph
            .variables()
            .iter()
            .map(|v| match v.origin {
                VarOrigin::Original => a.values()[v.id],
                VarOrigin::CloneOf { original, .. } => a.values()[original],
            })
            .collect();
        Assignment(vals)
    }

    /// Largest violation of `log θ(x) + log θ(x_i) = 0` over relaxed constraints.
    pub fn upper_bound_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for c in self.relaxed() {
            let (a, b) = self.theta(c.id).expect("relaxed");
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x + y).abs());
            }
        }
        worst
    }
}
