//! Exhaustive enumeration, used as ground truth in tests.

use crate::compensate::Task;
use crate::error::{RcrError, Result};
use crate::model::{advance, is_log_zero, Assignment, FactorGraph, LOG_ZERO};

/// Largest state space [`brute_force`] will enumerate.
pub const ENUMERATION_LIMIT: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    /// Lexicographically smallest maximizer; only for [`Task::Mpe`].
    pub assignment: Option<Assignment>,
}

pub fn state_space(fg: &FactorGraph) -> f64 {
    fg.variables().iter().map(|v| v.cardinality as f64).product()
}

/// Enumerates every complete assignment.
pub fn brute_force(fg: &FactorGraph, task: Task) -> Result<OracleResult> {
    let states = state_space(fg);
    if states > ENUMERATION_LIMIT as f64 {
        return Err(RcrError::StateSpaceTooLarge {
            states,
            limit: ENUMERATION_LIMIT,
        });
    }
    let cards = fg.cardinalities();
    let total = states as u64;
    let mut values = vec![0usize; cards.len()];
    let mut best = LOG_ZERO;
    let mut best_at: Option<Vec<usize>> = None;
    // running log-sum-exp with max shift
    let mut shift = LOG_ZERO;
    let mut acc = 0.0f64;
    for _ in 0..total {
        let mut v = 0.0;
        for f in fg.factors() {
            let t = f.table[f.index_of(&cards, &values)];
            if is_log_zero(t) {
                v = LOG_ZERO;
                break;
            }
            v += t;
        }
        match task {
            Task::Mpe => {
                if best_at.is_none() || v > best {
                    best = v;
                    best_at = Some(values.clone());
                }
            }
            Task::Pr => {
                if !is_log_zero(v) {
                    if v > shift {
                        acc = acc * (shift - v).exp() + 1.0;
                        shift = v;
                    } else {
                        acc += (v - shift).exp();
                    }
                }
            }
        }
        advance(&mut values, cards.iter().copied());
    }
    Ok(match task {
        Task::Mpe => OracleResult {
            value: best,
            assignment: best_at.map(Assignment),
        },
        Task::Pr => OracleResult {
            value: if acc > 0.0 { shift + acc.ln() } else { LOG_ZERO },
            assignment: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_uai;

    #[test]
    fn unary() {
        let fg = parse_uai("MARKOV\n1\n2\n1\n1 0\n2\n0.6 0.4").unwrap();
        assert!(brute_force(&fg, Task::Pr).unwrap().value.abs() < 1e-15);
        let m = brute_force(&fg, Task::Mpe).unwrap();
        assert!((m.value - 0.6f64.ln()).abs() < 1e-15);
        assert_eq!(m.assignment, Some(Assignment(vec![0])));
    }

    #[test]
    fn identity_triangle() {
        let fg = parse_uai("MARKOV\n3\n2 2 2\n3\n2 0 1\n2 1 2\n2 0 2\n4\n1 1 1 1\n4\n1 1 1 1\n4\n1 1 1 1\n").unwrap();
        assert!((brute_force(&fg, Task::Pr).unwrap().value - 8f64.ln()).abs() < 1e-14);
        assert_eq!(
            brute_force(&fg, Task::Mpe).unwrap().assignment,
            Some(Assignment(vec![0, 0, 0]))
        );
    }

    #[test]
    fn guard_refuses_large_models() {
        let cards = vec![2usize; 25];
        let fg = FactorGraph::new(&cards, vec![]).unwrap();
        assert!(matches!(
            brute_force(&fg, Task::Pr),
            Err(RcrError::StateSpaceTooLarge { .. })
        ));
    }
}
