//! Discrete factor graphs in the log domain, UAI model I/O, assignment
//! evaluation and evidence conditioning.

use std::fmt::Write as _;

use crate::error::{RcrError, Result};

/// Log-domain representation of an exact zero.
pub const LOG_ZERO: f64 = -1e30;

/// Anything at or below this is treated as [`LOG_ZERO`].
const LOG_ZERO_CUTOFF: f64 = LOG_ZERO * 0.5;

#[inline]
pub fn is_log_zero(v: f64) -> bool {
    v <= LOG_ZERO_CUTOFF
}

/// Clamps a log value that has drifted below the cutoff back to the sentinel.
#[inline]
pub fn saturate(v: f64) -> f64 {
    if v <= LOG_ZERO_CUTOFF {
        LOG_ZERO
    } else {
        v
    }
}

/// Log-domain product.
#[inline]
pub fn log_mul(a: f64, b: f64) -> f64 {
    if is_log_zero(a) || is_log_zero(b) {
        LOG_ZERO
    } else {
        a + b
    }
}

/// Natural log of a linear-domain value, mapping 0 to [`LOG_ZERO`].
#[inline]
pub fn to_log(v: f64) -> f64 {
    if v <= 0.0 {
        LOG_ZERO
    } else {
        saturate(v.ln())
    }
}

/// Linear value of a log-domain entry.
#[inline]
pub fn from_log(v: f64) -> f64 {
    if is_log_zero(v) {
        0.0
    } else {
        v.exp()
    }
}

/// Max-shifted log-sum-exp.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_nan() || max <= LOG_ZERO_CUTOFF {
        return LOG_ZERO;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarOrigin {
    Original,
    /// A copy of `original` standing in for it inside factor `factor`.
    CloneOf {
        original: usize,
        factor: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub id: usize,
    pub cardinality: usize,
    pub origin: VarOrigin,
}

/// Which end of a relaxed equivalence constraint a compensation factor sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Original,
    Clone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    Potential,
    Compensation { constraint: usize, side: Side },
    Equivalence { constraint: usize },
}

/// A dense log-domain table, row-major in scope order (last variable fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub id: usize,
    pub scope: Vec<usize>,
    pub table: Vec<f64>,
    pub kind: FactorKind,
}

impl Factor {
    pub fn potential(scope: Vec<usize>, table: Vec<f64>) -> Self {
        Factor {
            id: 0,
            scope,
            table,
            kind: FactorKind::Potential,
        }
    }

    /// Deterministic `eq(a, b)` factor over two variables of cardinality `card`.
    pub fn equivalence(a: usize, b: usize, card: usize, constraint: usize) -> Self {
        let mut table = vec![LOG_ZERO; card * card];
        for s in 0..card {
            table[s * card + s] = 0.0;
        }
        Factor {
            id: 0,
            scope: vec![a, b],
            table,
            kind: FactorKind::Equivalence { constraint },
        }
    }

    /// Table index selected by a full assignment.
    #[inline]
    pub fn index_of(&self, cards: &[usize], values: &[usize]) -> usize {
        let mut idx = 0;
        for &v in &self.scope {
            idx = idx * cards[v] + values[v];
        }
        idx
    }
}

/// A complete instantiation: one state index per variable id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Assignment(pub Vec<usize>);

impl Assignment {
    pub fn values(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Partial assignment as `(variable, state)` pairs.
pub type Evidence = Vec<(usize, usize)>;

/// Product of log-domain factor tables over discrete variables.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    variables: Vec<Variable>,
    factors: Vec<Factor>,
}

impl FactorGraph {
    /// Builds a graph of original variables, validating every factor.
    /// Factor ids are reassigned to their list positions.
    pub fn new(cardinalities: &[usize], factors: Vec<Factor>) -> Result<Self> {
        let variables = cardinalities
            .iter()
            .enumerate()
            .map(|(id, &cardinality)| Variable {
                id,
                cardinality,
                origin: VarOrigin::Original,
            })
            .collect();
        Self::from_parts(variables, factors)
    }

    pub fn from_parts(variables: Vec<Variable>, mut factors: Vec<Factor>) -> Result<Self> {
        for (i, v) in variables.iter().enumerate() {
            if v.id != i {
                return Err(RcrError::Contract(format!(
                    "variable ids must be contiguous from 0, found {} at position {i}",
                    v.id
                )));
            }
            if v.cardinality < 2 {
                return Err(RcrError::UnsupportedModel(format!(
                    "variable {i} has cardinality {} (< 2)",
                    v.cardinality
                )));
            }
        }
        for (i, f) in factors.iter_mut().enumerate() {
            f.id = i;
        }
        let fg = FactorGraph { variables, factors };
        for f in &fg.factors {
            fg.check_factor(f)?;
        }
        Ok(fg)
    }

    fn check_factor(&self, f: &Factor) -> Result<()> {
        let n = self.variables.len();
        let mut size = 1usize;
        for (k, &v) in f.scope.iter().enumerate() {
            if v >= n {
                return Err(RcrError::UnknownVariable(v));
            }
            if f.scope[..k].contains(&v) {
                return Err(RcrError::Contract(format!(
                    "factor {} repeats variable {v} in its scope",
                    f.id
                )));
            }
            size *= self.variables[v].cardinality;
        }
        if f.table.len() != size {
            return Err(RcrError::Contract(format!(
                "factor {} has {} table entries, expected {size}",
                f.id,
                f.table.len()
            )));
        }
        if f.table.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(RcrError::Contract(format!(
                "factor {} has a non-finite table entry",
                f.id
            )));
        }
        Ok(())
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn cardinality(&self, var: usize) -> usize {
        self.variables[var].cardinality
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.variables.iter().map(|v| v.cardinality).collect()
    }

    /// Copy of the graph with one more factor appended.
    pub fn with_factor(&self, factor: Factor) -> Result<FactorGraph> {
        let mut factors = self.factors.clone();
        factors.push(factor);
        Self::from_parts(self.variables.clone(), factors)
    }

    /// Copy of the graph without the listed factor ids. Remaining factors are renumbered.
    pub fn without_factors(&self, ids: &[usize]) -> FactorGraph {
        let factors = self.factors.iter().filter(|f| !ids.contains(&f.id)).cloned().collect();
        Self::from_parts(self.variables.clone(), factors).expect("subset of a valid graph")
    }

    /// Same graph with the factor list reordered by `perm` (new position -> old position).
    pub fn permuted_factors(&self, perm: &[usize]) -> FactorGraph {
        let factors = perm.iter().map(|&i| self.factors[i].clone()).collect();
        Self::from_parts(self.variables.clone(), factors).expect("permutation of a valid graph")
    }

    pub(crate) fn variables_mut(&mut self) -> &mut Vec<Variable> {
        &mut self.variables
    }

    pub(crate) fn factors_mut(&mut self) -> &mut Vec<Factor> {
        &mut self.factors
    }

    pub(crate) fn renumber_factors(&mut self) {
        for (i, f) in self.factors.iter_mut().enumerate() {
            f.id = i;
        }
    }

    fn check_assignment(&self, a: &Assignment) -> Result<()> {
        if a.len() != self.variables.len() {
            return Err(RcrError::Contract(format!(
                "assignment covers {} variables, model has {}",
                a.len(),
                self.variables.len()
            )));
        }
        for (v, &s) in a.values().iter().enumerate() {
            if s >= self.variables[v].cardinality {
                return Err(RcrError::Contract(format!("state {s} out of range for variable {v}")));
            }
        }
        Ok(())
    }

    /// Log value of a complete assignment: the sum of selected table entries.
    pub fn evaluate(&self, a: &Assignment) -> Result<f64> {
        self.check_assignment(a)?;
        let cards = self.cardinalities();
        let mut total = 0.0;
        for f in &self.factors {
            let v = f.table[f.index_of(&cards, a.values())];
            if is_log_zero(v) {
                return Ok(LOG_ZERO);
            }
            total += v;
        }
        Ok(total)
    }

    /// Zeroes every table row inconsistent with `evidence`. A variable with evidence
    /// that occurs in no factor gets an indicator factor so the evidence is enforced.
    pub fn condition(&self, evidence: &[(usize, usize)]) -> Result<FactorGraph> {
        let n = self.variables.len();
        let mut fixed: Vec<Option<usize>> = vec![None; n];
        for &(v, s) in evidence {
            if v >= n {
                return Err(RcrError::Evidence(format!("unknown variable {v}")));
            }
            if s >= self.variables[v].cardinality {
                return Err(RcrError::Evidence(format!(
                    "state {s} out of range for variable {v} (cardinality {})",
                    self.variables[v].cardinality
                )));
            }
            if let Some(prev) = fixed[v] {
                if prev != s {
                    return Err(RcrError::Evidence(format!("conflicting evidence for variable {v}")));
                }
            }
            fixed[v] = Some(s);
        }
        let cards = self.cardinalities();
        let mut factors = self.factors.clone();
        let mut covered = vec![false; n];
        for f in &mut factors {
            if f.scope.iter().all(|&v| fixed[v].is_none()) {
                continue;
            }
            for &v in &f.scope {
                covered[v] = true;
            }
            let mut states = vec![0usize; f.scope.len()];
            for entry in f.table.iter_mut() {
                let consistent = f
                    .scope
                    .iter()
                    .zip(&states)
                    .all(|(&v, &s)| fixed[v].is_none_or(|e| e == s));
                if !consistent {
                    *entry = LOG_ZERO;
                }
                advance(&mut states, f.scope.iter().map(|&v| cards[v]));
            }
        }
        for v in 0..n {
            if let (Some(s), false) = (fixed[v], covered[v]) {
                let mut table = vec![LOG_ZERO; cards[v]];
                table[s] = 0.0;
                factors.push(Factor::potential(vec![v], table));
            }
        }
        Self::from_parts(self.variables.clone(), factors)
    }
}

/// Odometer increment, last position fastest.
pub(crate) fn advance(states: &mut [usize], cards: impl DoubleEndedIterator<Item = usize> + ExactSizeIterator) {
    let len = states.len();
    for (k, card) in cards.rev().enumerate() {
        let i = len - 1 - k;
        states[i] += 1;
        if states[i] < card {
            return;
        }
        states[i] = 0;
    }
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, line)| line.split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        Tokens { items, pos: 0 }
    }

    fn last_line(&self) -> usize {
        self.items.last().map_or(1, |t| t.0)
    }

    fn next(&mut self, expect: &str) -> Result<(usize, &'a str)> {
        match self.items.get(self.pos) {
            Some(&t) => {
                self.pos += 1;
                Ok(t)
            }
            None => Err(RcrError::Parse {
                line: self.last_line(),
                message: format!("unexpected end of input, expected {expect}"),
            }),
        }
    }

    fn usize(&mut self, expect: &str) -> Result<(usize, usize)> {
        let (line, tok) = self.next(expect)?;
        tok.parse::<usize>().map(|v| (line, v)).map_err(|_| RcrError::Parse {
            line,
            message: format!("expected {expect}, found {tok:?}"),
        })
    }

    fn prob(&mut self, expect: &str) -> Result<f64> {
        let (line, tok) = self.next(expect)?;
        match tok.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
            _ => Err(RcrError::Parse {
                line,
                message: format!("expected {expect} (finite, non-negative), found {tok:?}"),
            }),
        }
    }
}

/// Parses a model in the UAI competition format. Tables are read in the linear
/// domain and stored as logs. `BAYES` models are read as a plain product of tables.
pub fn parse_uai(text: &str) -> Result<FactorGraph> {
    let mut tok = Tokens::new(text);
    let (line, preamble) = tok.next("preamble")?;
    if !matches!(preamble.to_ascii_uppercase().as_str(), "MARKOV" | "BAYES") {
        return Err(RcrError::Parse {
            line,
            message: format!("unknown preamble {preamble:?}, expected MARKOV or BAYES"),
        });
    }
    let (_, n) = tok.usize("variable count")?;
    let mut cards = Vec::with_capacity(n);
    for i in 0..n {
        let (line, c) = tok.usize("cardinality")?;
        if c < 2 {
            return Err(RcrError::UnsupportedModel(format!(
                "variable {i} (line {line}) has cardinality {c}; at least 2 states are required"
            )));
        }
        cards.push(c);
    }
    let (_, m) = tok.usize("factor count")?;
    let mut scopes = Vec::with_capacity(m);
    for _ in 0..m {
        let (_, arity) = tok.usize("scope size")?;
        let mut scope = Vec::with_capacity(arity);
        for _ in 0..arity {
            let (line, v) = tok.usize("variable index")?;
            if v >= n {
                return Err(RcrError::Parse {
                    line,
                    message: format!("variable index {v} out of range (model has {n})"),
                });
            }
            if scope.contains(&v) {
                return Err(RcrError::Parse {
                    line,
                    message: format!("variable {v} repeated in a factor scope"),
                });
            }
            scope.push(v);
        }
        scopes.push(scope);
    }
    let mut factors = Vec::with_capacity(m);
    for scope in scopes {
        let expected: usize = scope.iter().map(|&v| cards[v]).product();
        let (line, len) = tok.usize("table size")?;
        if len != expected {
            return Err(RcrError::Parse {
                line,
                message: format!("table size {len} does not match scope, expected {expected}"),
            });
        }
        let mut table = Vec::with_capacity(len);
        for _ in 0..len {
            table.push(to_log(tok.prob("table entry")?));
        }
        factors.push(Factor::potential(scope, table));
    }
    if let Some(&(line, extra)) = tok.items.get(tok.pos) {
        return Err(RcrError::Parse {
            line,
            message: format!("trailing token {extra:?} after the last table"),
        });
    }
    FactorGraph::new(&cards, factors)
}

/// Writes a graph as a `MARKOV` UAI model in the linear domain.
pub fn write_uai(fg: &FactorGraph) -> String {
    let mut out = String::new();
    out.push_str("MARKOV\n");
    let _ = writeln!(out, "{}", fg.num_variables());
    let cards: Vec<String> = fg.variables().iter().map(|v| v.cardinality.to_string()).collect();
    let _ = writeln!(out, "{}", cards.join(" "));
    let _ = writeln!(out, "{}", fg.num_factors());
    for f in fg.factors() {
        let _ = write!(out, "{}", f.scope.len());
        for v in &f.scope {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    for f in fg.factors() {
        out.push('\n');
        let _ = writeln!(out, "{}", f.table.len());
        let row = f.scope.last().map_or(1, |&v| fg.cardinality(v));
        for chunk in f.table.chunks(row) {
            let vals: Vec<String> = chunk.iter().map(|&v| format!("{:e}", from_log(v))).collect();
            let _ = writeln!(out, " {}", vals.join(" "));
        }
    }
    out
}

/// Parses an evidence file: a count followed by that many `variable state` pairs.
pub fn parse_evidence(text: &str) -> Result<Evidence> {
    let mut tok = Tokens::new(text);
    if tok.items.is_empty() {
        return Ok(Vec::new());
    }
    let (_, count) = tok.usize("evidence count")?;
    let mut ev = Vec::with_capacity(count);
    for _ in 0..count {
        let (_, v) = tok.usize("evidence variable")?;
        let (_, s) = tok.usize("evidence state")?;
        ev.push((v, s));
    }
    if let Some(&(line, extra)) = tok.items.get(tok.pos) {
        return Err(RcrError::Parse {
            line,
            message: format!("trailing token {extra:?} after evidence"),
        });
    }
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = "MARKOV\n3\n2 2 2\n3\n2 0 1\n2 1 2\n2 0 2\n\n4\n 1 2\n 3 4\n4\n 2 1 1 2\n4\n 0.5 1.5 1 1\n";

    #[test]
    fn parses_single_unary_factor() {
        let fg = parse_uai("MARKOV\n1\n2\n1\n1 0\n2\n0.6 0.4").unwrap();
        assert_eq!(fg.num_variables(), 1);
        assert_eq!(fg.num_factors(), 1);
        let t = &fg.factors()[0].table;
        assert!((t[0] - 0.6f64.ln()).abs() < 1e-15);
        assert!((t[1] - 0.4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn parses_triangle() {
        let fg = parse_uai(TRIANGLE).unwrap();
        assert_eq!(fg.num_variables(), 3);
        assert_eq!(fg.num_factors(), 3);
        assert_eq!(fg.factors()[2].scope, vec![0, 2]);
    }

    #[test]
    fn bayes_preamble_is_accepted() {
        let fg = parse_uai("BAYES\n1\n2\n1\n1 0\n2\n0.6 0.4").unwrap();
        assert_eq!(fg.num_factors(), 1);
    }

    #[test]
    fn unknown_preamble_is_rejected() {
        let err = parse_uai("FOO\n1\n2\n1\n1 0\n2\n0.6 0.4").unwrap_err();
        match err {
            RcrError::Parse { line, message } => {
                assert_eq!(line, 1);
                assert!(message.contains("unknown preamble"), "{message}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn wrong_table_length_names_the_line() {
        let err = parse_uai("MARKOV\n1\n2\n1\n1 0\n3\n0.6 0.4 0.1").unwrap_err();
        assert!(matches!(err, RcrError::Parse { line: 6, .. }), "{err:?}");
    }

    #[test]
    fn cardinality_one_is_unsupported() {
        let err = parse_uai("MARKOV\n1\n1\n1\n1 0\n1\n1.0").unwrap_err();
        assert!(matches!(err, RcrError::UnsupportedModel(_)));
    }

    #[test]
    fn truncated_input_is_a_parse_error() {
        let err = parse_uai("MARKOV\n2\n2 2\n1\n2 0 1\n4\n1 1").unwrap_err();
        assert!(matches!(err, RcrError::Parse { .. }));
    }

    #[test]
    fn zero_entries_become_log_zero() {
        let fg = parse_uai("MARKOV\n1\n2\n1\n1 0\n2\n0 1").unwrap();
        assert_eq!(fg.factors()[0].table[0], LOG_ZERO);
    }

    #[test]
    fn evaluate_examples() {
        let fg = parse_uai("MARKOV\n1\n2\n1\n1 0\n2\n0.6 0.4").unwrap();
        assert!((fg.evaluate(&Assignment(vec![0])).unwrap() - 0.6f64.ln()).abs() < 1e-15);

        let ones = parse_uai("MARKOV\n2\n2 2\n1\n2 0 1\n4\n1 1 1 1").unwrap();
        assert_eq!(ones.evaluate(&Assignment(vec![1, 0])).unwrap(), 0.0);

        let zero = parse_uai("MARKOV\n1\n2\n1\n1 0\n2\n0 1").unwrap();
        assert_eq!(zero.evaluate(&Assignment(vec![0])).unwrap(), LOG_ZERO);
    }

    #[test]
    fn evaluate_rejects_incomplete_assignment() {
        let fg = parse_uai(TRIANGLE).unwrap();
        assert!(matches!(
            fg.evaluate(&Assignment(vec![0, 1])),
            Err(RcrError::Contract(_))
        ));
        assert!(matches!(
            fg.evaluate(&Assignment(vec![0, 1, 2])),
            Err(RcrError::Contract(_))
        ));
    }

    #[test]
    fn condition_examples() {
        let fg = parse_uai("MARKOV\n1\n2\n1\n1 0\n2\n0.6 0.4").unwrap();
        assert_eq!(fg.condition(&[]).unwrap(), fg);

        let c = fg.condition(&[(0, 1)]).unwrap();
        assert_eq!(c.factors()[0].table[0], LOG_ZERO);
        assert!((c.factors()[0].table[1] - 0.4f64.ln()).abs() < 1e-15);
        assert_eq!(c.num_variables(), 1);

        assert!(matches!(fg.condition(&[(0, 2)]), Err(RcrError::Evidence(_))));
    }

    #[test]
    fn condition_pairwise_rows() {
        let fg = parse_uai(TRIANGLE).unwrap();
        let c = fg.condition(&[(1, 0)]).unwrap();
        // factor 0 scope (0,1): entries with var1 = 1 are zeroed
        let t = &c.factors()[0].table;
        assert!(!is_log_zero(t[0]) && is_log_zero(t[1]) && !is_log_zero(t[2]) && is_log_zero(t[3]));
    }

    #[test]
    fn condition_adds_indicator_for_isolated_variable() {
        let fg = FactorGraph::new(&[2, 3], vec![Factor::potential(vec![0], vec![0.0, 0.0])]).unwrap();
        let c = fg.condition(&[(1, 2)]).unwrap();
        assert_eq!(c.num_factors(), 2);
        assert_eq!(c.evaluate(&Assignment(vec![0, 1])).unwrap(), LOG_ZERO);
        assert_eq!(c.evaluate(&Assignment(vec![0, 2])).unwrap(), 0.0);
    }

    #[test]
    fn evidence_file() {
        assert_eq!(parse_evidence("2 0 1 3 0").unwrap(), vec![(0, 1), (3, 0)]);
        assert_eq!(parse_evidence("").unwrap(), vec![]);
        assert!(parse_evidence("2 0 1").is_err());
    }

    #[test]
    fn log_sum_exp_handles_log_zero() {
        assert_eq!(log_sum_exp(&[LOG_ZERO, LOG_ZERO]), LOG_ZERO);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn write_then_parse_roundtrip() {
        let fg = parse_uai(TRIANGLE).unwrap();
        let again = parse_uai(&write_uai(&fg)).unwrap();
        assert_eq!(again.num_factors(), 3);
        for (a, b) in fg.factors().iter().zip(again.factors()) {
            assert_eq!(a.scope, b.scope);
            for (x, y) in a.table.iter().zip(&b.table) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
