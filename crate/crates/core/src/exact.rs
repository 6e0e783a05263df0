//! Variable elimination over the sum-product and max-product semirings.
//!
//! Queries compile an elimination order into a [`Program`]: a fixed sequence of
//! table products with precomputed index maps. A program only reads factor
//! tables at run time, so it can be re-run cheaply while compensation factors
//! change and the graph structure stays fixed. Marginals are obtained by
//! clamping the queried variables and re-running the program.

use crate::error::{RcrError, Result};
use crate::model::{saturate, Assignment, FactorGraph, LOG_ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Semiring {
    SumProduct,
    MaxProduct,
}

impl Semiring {
    fn slot(self) -> usize {
        match self {
            Semiring::SumProduct => 0,
            Semiring::MaxProduct => 1,
        }
    }

    /// Combines log values: log-sum-exp or max.
    pub fn combine(self, values: &[f64]) -> f64 {
        match self {
            Semiring::SumProduct => crate::model::log_sum_exp(values),
            Semiring::MaxProduct => saturate(values.iter().copied().fold(LOG_ZERO, f64::max)),
        }
    }
}

/// Elimination order with its cost accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EliminationPlan {
    pub order: Vec<usize>,
    /// log2 of the largest intermediate table, rounded up.
    pub max_cluster_size: u32,
    pub max_table_entries: u64,
    /// Sum of intermediate table sizes over all elimination steps.
    pub total_table_entries: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub value: f64,
}

/// Greedy min-fill order, ties broken by lowest variable id.
pub fn min_fill_order(fg: &FactorGraph) -> Vec<usize> {
    let n = fg.num_variables();
    let words = n.div_ceil(64).max(1);
    let mut adj_bits = vec![0u64; n * words];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let connect = |bits: &mut Vec<u64>, adj: &mut Vec<Vec<usize>>, a: usize, b: usize| {
        if a == b || bits[a * words + b / 64] >> (b % 64) & 1 == 1 {
            return;
        }
        bits[a * words + b / 64] |= 1 << (b % 64);
        bits[b * words + a / 64] |= 1 << (a % 64);
        adj[a].push(b);
        adj[b].push(a);
    };
    for f in fg.factors() {
        for (i, &a) in f.scope.iter().enumerate() {
            for &b in &f.scope[i + 1..] {
                connect(&mut adj_bits, &mut adj, a, b);
            }
        }
    }
    let has = |bits: &Vec<u64>, a: usize, b: usize| bits[a * words + b / 64] >> (b % 64) & 1 == 1;
    let fill_of = |bits: &Vec<u64>, adj: &Vec<Vec<usize>>, v: usize| -> usize {
        let nb = &adj[v];
        let mut fill = 0;
        for i in 0..nb.len() {
            for j in i + 1..nb.len() {
                if !has(bits, nb[i], nb[j]) {
                    fill += 1;
                }
            }
        }
        fill
    };
    let mut fill: Vec<usize> = (0..n).map(|v| fill_of(&adj_bits, &adj, v)).collect();
    let mut alive = vec![true; n];
    let mut order = Vec::with_capacity(n);
    let mut touched = vec![false; n];
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| alive[v])
            .min_by_key(|&v| (fill[v], v))
            .expect("a variable remains");
        alive[v] = false;
        order.push(v);
        let nb = std::mem::take(&mut adj[v]);
        for &u in &nb {
            adj[u].retain(|&w| w != v);
            adj_bits[u * words + v / 64] &= !(1 << (v % 64));
        }
        for i in 0..nb.len() {
            for j in i + 1..nb.len() {
                connect(&mut adj_bits, &mut adj, nb[i], nb[j]);
            }
        }
        let mut affected = Vec::new();
        for &u in &nb {
            if !touched[u] {
                touched[u] = true;
                affected.push(u);
            }
            for &w in &adj[u] {
                if !touched[w] {
                    touched[w] = true;
                    affected.push(w);
                }
            }
        }
        for &u in &affected {
            touched[u] = false;
            fill[u] = fill_of(&adj_bits, &adj, u);
        }
    }
    order
}

pub fn make_plan(fg: &FactorGraph) -> EliminationPlan {
    let order = min_fill_order(fg);
    let all: Vec<usize> = (0..fg.num_factors()).collect();
    let program = Program::compile(fg, &all, &order);
    program.plan(order)
}

fn check_plan(fg: &FactorGraph, plan: &EliminationPlan) -> Result<()> {
    let n = fg.num_variables();
    let mut seen = vec![false; n];
    for &v in &plan.order {
        if v >= n || seen[v] {
            return Err(RcrError::Contract(
                "elimination order is not a permutation of the variables".into(),
            ));
        }
        seen[v] = true;
    }
    if plan.order.len() != n {
        return Err(RcrError::Contract(
            "elimination order does not cover every variable".into(),
        ));
    }
    Ok(())
}

/// Global log value: log Z or the log MPE value.
pub fn query(fg: &FactorGraph, semiring: Semiring, plan: &EliminationPlan) -> Result<QueryResult> {
    check_plan(fg, plan)?;
    let all: Vec<usize> = (0..fg.num_factors()).collect();
    let program = Program::compile(fg, &all, &plan.order);
    Ok(QueryResult {
        value: program.run(fg, semiring, &[]),
    })
}

/// Per-state log marginal `Z(x)` or `mpe(x)`.
pub fn marginal(fg: &FactorGraph, semiring: Semiring, var: usize) -> Result<Vec<f64>> {
    if var >= fg.num_variables() {
        return Err(RcrError::UnknownVariable(var));
    }
    let program = Program::whole(fg);
    Ok(program.marginal(fg, semiring, var))
}

/// Joint log marginal over two variables, row-major with `x` as the row.
pub fn pair_marginal(fg: &FactorGraph, semiring: Semiring, x: usize, y: usize) -> Result<Vec<f64>> {
    for v in [x, y] {
        if v >= fg.num_variables() {
            return Err(RcrError::UnknownVariable(v));
        }
    }
    if x == y {
        return Err(RcrError::Contract(format!(
            "pair marginal needs two distinct variables, got {x} twice"
        )));
    }
    let program = Program::whole(fg);
    Ok(program.pair_marginal(fg, semiring, x, y))
}

/// Maximizing assignment by max-product elimination and backtracking.
/// Ties resolve to the lowest state index.
pub fn decode_mpe(fg: &FactorGraph, plan: &EliminationPlan) -> Result<Assignment> {
    check_plan(fg, plan)?;
    let all: Vec<usize> = (0..fg.num_factors()).collect();
    let program = Program::compile(fg, &all, &plan.order);
    let mut values = vec![0usize; fg.num_variables()];
    program.decode_into(fg, &mut values);
    Ok(Assignment(values))
}

#[derive(Debug, Clone, Copy)]
enum Operand {
    Factor(usize),
    Slot(usize),
}

#[derive(Debug, Clone)]
struct Step {
    var: usize,
    card: usize,
    /// Union scope with the eliminated variable last.
    scope: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
    operands: Vec<(Operand, Vec<u32>)>,
    out: usize,
}

/// A compiled elimination sequence over a subset of a graph's factors.
#[derive(Debug, Clone)]
pub struct Program {
    steps: Vec<Step>,
    slot_count: usize,
    /// Factors with an empty scope.
    scalars: Vec<usize>,
    /// Slots left holding a scalar after all steps.
    results: Vec<usize>,
    /// Variables covered by this program.
    vars: Vec<usize>,
    total_entries: u64,
    max_entries: u64,
}

impl Program {
    /// Compiles elimination of `order` over the factors `factor_ids` of `fg`.
    /// Variables of the listed factors must all appear in `order`.
    pub fn compile(fg: &FactorGraph, factor_ids: &[usize], order: &[usize]) -> Program {
        let cards = fg.cardinalities();
        let mut pool: Vec<(Operand, Vec<usize>)> = Vec::new();
        let mut scalars = Vec::new();
        for &fid in factor_ids {
            let scope = &fg.factors()[fid].scope;
            if scope.is_empty() {
                scalars.push(fid);
            } else {
                pool.push((Operand::Factor(fid), scope.clone()));
            }
        }
        let mut steps = Vec::with_capacity(order.len());
        let mut slot_count = 0;
        let mut total_entries = 0u64;
        let mut max_entries = 0u64;
        for &v in order {
            let mut taken = Vec::new();
            let mut i = 0;
            while i < pool.len() {
                if pool[i].1.contains(&v) {
                    taken.push(pool.swap_remove(i));
                } else {
                    i += 1;
                }
            }
            let mut scope: Vec<usize> = taken
                .iter()
                .flat_map(|(_, s)| s.iter().copied())
                .filter(|&u| u != v)
                .collect();
            scope.sort_unstable();
            scope.dedup();
            scope.push(v);
            let mut strides = vec![1usize; scope.len()];
            for k in (0..scope.len().saturating_sub(1)).rev() {
                strides[k] = strides[k + 1] * cards[scope[k + 1]];
            }
            let size = strides[0] * cards[scope[0]];
            total_entries += size as u64;
            max_entries = max_entries.max(size as u64);
            let operands = taken
                .into_iter()
                .map(|(op, op_scope)| {
                    let map = index_map(&scope, &strides, &op_scope, &cards, size);
                    (op, map)
                })
                .collect();
            let out = slot_count;
            slot_count += 1;
            let out_scope = scope[..scope.len() - 1].to_vec();
            pool.push((Operand::Slot(out), out_scope));
            steps.push(Step {
                var: v,
                card: cards[v],
                scope,
                strides,
                size,
                operands,
                out,
            });
        }
        let results = pool
            .iter()
            .map(|(op, scope)| {
                assert!(scope.is_empty(), "elimination order misses a factor variable");
                match op {
                    Operand::Slot(s) => *s,
                    Operand::Factor(_) => unreachable!("non-empty factor scopes are eliminated"),
                }
            })
            .collect();
        Program {
            steps,
            slot_count,
            scalars,
            results,
            vars: order.to_vec(),
            total_entries,
            max_entries,
        }
    }

    /// Program over the whole graph using a min-fill order.
    pub fn whole(fg: &FactorGraph) -> Program {
        let order = min_fill_order(fg);
        let all: Vec<usize> = (0..fg.num_factors()).collect();
        Program::compile(fg, &all, &order)
    }

    fn plan(&self, order: Vec<usize>) -> EliminationPlan {
        EliminationPlan {
            order,
            max_cluster_size: cluster_bits(self.max_entries),
            max_table_entries: self.max_entries,
            total_table_entries: self.total_entries,
        }
    }

    pub fn total_entries(&self) -> u64 {
        self.total_entries
    }

    pub fn max_entries(&self) -> u64 {
        self.max_entries
    }

    pub fn variables(&self) -> &[usize] {
        &self.vars
    }

    fn execute(
        &self,
        fg: &FactorGraph,
        semiring: Semiring,
        clamps: &[(usize, usize)],
        keep: bool,
    ) -> (f64, Vec<Vec<f64>>) {
        let factors = fg.factors();
        let mut slots: Vec<Vec<f64>> = vec![Vec::new(); self.slot_count];
        let mut kept = Vec::new();
        let mut buf = Vec::new();
        for step in &self.steps {
            buf.clear();
            buf.resize(step.size, 0.0);
            for (op, map) in &step.operands {
                let table: &[f64] = match *op {
                    Operand::Factor(f) => &factors[f].table,
                    Operand::Slot(s) => &slots[s],
                };
                for (b, &m) in buf.iter_mut().zip(map.iter()) {
                    *b += table[m as usize];
                }
            }
            for &(cv, cs) in clamps {
                if let Some(k) = step.scope.iter().position(|&u| u == cv) {
                    let stride = step.strides[k];
                    let card = fg.cardinality(cv);
                    for (u, b) in buf.iter_mut().enumerate() {
                        if (u / stride) % card != cs {
                            *b = LOG_ZERO;
                        }
                    }
                }
            }
            for b in buf.iter_mut() {
                *b = saturate(*b);
            }
            let out: Vec<f64> = buf
                .chunks_exact(step.card)
                .map(|chunk| reduce(semiring, chunk))
                .collect();
            for (op, _) in &step.operands {
                if let Operand::Slot(s) = *op {
                    slots[s] = Vec::new();
                }
            }
            slots[step.out] = out;
            if keep {
                kept.push(buf.clone());
            }
        }
        let mut total = 0.0;
        for &f in &self.scalars {
            total = crate::model::log_mul(total, factors[f].table[0]);
        }
        for &s in &self.results {
            total = crate::model::log_mul(total, slots[s][0]);
        }
        (saturate(total), kept)
    }

    /// Value of this program's factors with optional clamped variables.
    pub fn run(&self, fg: &FactorGraph, semiring: Semiring, clamps: &[(usize, usize)]) -> f64 {
        self.execute(fg, semiring, clamps, false).0
    }

    pub fn marginal(&self, fg: &FactorGraph, semiring: Semiring, var: usize) -> Vec<f64> {
        (0..fg.cardinality(var))
            .map(|s| self.run(fg, semiring, &[(var, s)]))
            .collect()
    }

    pub fn pair_marginal(&self, fg: &FactorGraph, semiring: Semiring, x: usize, y: usize) -> Vec<f64> {
        let (cx, cy) = (fg.cardinality(x), fg.cardinality(y));
        let mut out = Vec::with_capacity(cx * cy);
        for sx in 0..cx {
            for sy in 0..cy {
                out.push(self.run(fg, semiring, &[(x, sx), (y, sy)]));
            }
        }
        out
    }

    /// Writes the max-product maximizer of this program's variables into `values`.
    pub fn decode_into(&self, fg: &FactorGraph, values: &mut [usize]) {
        let (_, kept) = self.execute(fg, Semiring::MaxProduct, &[], true);
        for (step, buf) in self.steps.iter().zip(&kept).rev() {
            let last = step.scope.len() - 1;
            let offset: usize = step.scope[..last]
                .iter()
                .zip(&step.strides[..last])
                .map(|(&u, &stride)| values[u] * stride)
                .sum();
            let chunk = &buf[offset..offset + step.card];
            let mut best = 0;
            for (s, &v) in chunk.iter().enumerate() {
                if v > chunk[best] {
                    best = s;
                }
            }
            values[step.var] = best;
        }
    }
}

fn cluster_bits(entries: u64) -> u32 {
    if entries <= 1 {
        0
    } else {
        (entries as f64).log2().ceil() as u32
    }
}

fn reduce(semiring: Semiring, chunk: &[f64]) -> f64 {
    match semiring {
        Semiring::MaxProduct => chunk.iter().copied().fold(LOG_ZERO, f64::max),
        Semiring::SumProduct => crate::model::log_sum_exp(chunk),
    }
}

fn index_map(scope: &[usize], strides: &[usize], op_scope: &[usize], cards: &[usize], size: usize) -> Vec<u32> {
    // stride of each union position inside the operand table
    let mut op_strides = vec![0usize; scope.len()];
    let mut acc = 1;
    for &u in op_scope.iter().rev() {
        let k = scope.iter().position(|&w| w == u).expect("operand scope within union");
        op_strides[k] = acc;
        acc *= cards[u];
    }
    let mut map = Vec::with_capacity(size);
    let mut states = vec![0usize; scope.len()];
    let mut idx = 0usize;
    for _ in 0..size {
        map.push(idx as u32);
        for k in (0..scope.len()).rev() {
            states[k] += 1;
            idx += op_strides[k];
            if states[k] < cards[scope[k]] {
                break;
            }
            idx -= op_strides[k] * states[k];
            states[k] = 0;
        }
    }
    debug_assert_eq!(strides.len(), scope.len());
    map
}

/// Exact inference split over the connected components of a graph, with cached
/// per-component values. Global quantities combine the component of interest
/// with the cached values of all others.
#[derive(Debug, Clone)]
pub struct ComponentEngine {
    component_of: Vec<usize>,
    programs: Vec<Program>,
    cache: Vec<[Option<f64>; 2]>,
    plan: EliminationPlan,
}

impl ComponentEngine {
    pub fn new(fg: &FactorGraph) -> Self {
        let n = fg.num_variables();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for f in fg.factors() {
            if let Some(&first) = f.scope.first() {
                for &v in &f.scope[1..] {
                    let (a, b) = (find(&mut parent, first), find(&mut parent, v));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut component_of = vec![0; n];
        let mut count = 0;
        for (v, comp) in component_of.iter_mut().enumerate() {
            let r = find(&mut parent, v);
            if label[r] == usize::MAX {
                label[r] = count;
                count += 1;
            }
            *comp = label[r];
        }
        let order = min_fill_order(fg);
        let mut orders = vec![Vec::new(); count];
        for &v in &order {
            orders[component_of[v]].push(v);
        }
        let mut factor_sets = vec![Vec::new(); count];
        let mut loose_scalars = Vec::new();
        for f in fg.factors() {
            match f.scope.first() {
                Some(&v) => factor_sets[component_of[v]].push(f.id),
                None => loose_scalars.push(f.id),
            }
        }
        if !loose_scalars.is_empty() {
            if count == 0 {
                orders.push(Vec::new());
                factor_sets.push(Vec::new());
                count = 1;
            }
            factor_sets[0].extend(loose_scalars);
        }
        let programs: Vec<Program> = (0..count)
            .map(|c| Program::compile(fg, &factor_sets[c], &orders[c]))
            .collect();
        let total: u64 = programs.iter().map(|p| p.total_entries).sum();
        let max: u64 = programs.iter().map(|p| p.max_entries).max().unwrap_or(0);
        let plan = EliminationPlan {
            order,
            max_cluster_size: cluster_bits(max),
            max_table_entries: max,
            total_table_entries: total,
        };
        ComponentEngine {
            component_of,
            programs,
            cache: vec![[None, None]; count],
            plan,
        }
    }

    pub fn plan(&self) -> &EliminationPlan {
        &self.plan
    }

    pub fn num_components(&self) -> usize {
        self.programs.len()
    }

    pub fn component_of(&self, var: usize) -> usize {
        self.component_of[var]
    }

    pub fn same_component(&self, a: usize, b: usize) -> bool {
        self.component_of[a] == self.component_of[b]
    }

    /// Drops cached values of the component holding `var`. Call after changing any
    /// table of a factor over `var`.
    pub fn invalidate(&mut self, var: usize) {
        self.cache[self.component_of[var]] = [None, None];
    }

    pub fn invalidate_all(&mut self) {
        for c in &mut self.cache {
            *c = [None, None];
        }
    }

    pub fn component_value(&mut self, fg: &FactorGraph, semiring: Semiring, comp: usize) -> f64 {
        let slot = semiring.slot();
        if let Some(v) = self.cache[comp][slot] {
            return v;
        }
        let v = self.programs[comp].run(fg, semiring, &[]);
        self.cache[comp][slot] = Some(v);
        v
    }

    /// Sum of log values of every component except those listed.
    fn rest(&mut self, fg: &FactorGraph, semiring: Semiring, skip: &[usize]) -> f64 {
        let mut total = 0.0;
        for c in 0..self.programs.len() {
            if !skip.contains(&c) {
                total = crate::model::log_mul(total, self.component_value(fg, semiring, c));
            }
        }
        total
    }

    /// Global log value of the whole graph.
    pub fn value(&mut self, fg: &FactorGraph, semiring: Semiring) -> f64 {
        self.rest(fg, semiring, &[])
    }

    /// Marginal of `var` within its own component only.
    pub fn local_marginal(&self, fg: &FactorGraph, semiring: Semiring, var: usize) -> Vec<f64> {
        self.programs[self.component_of[var]].marginal(fg, semiring, var)
    }

    pub fn marginal(&mut self, fg: &FactorGraph, semiring: Semiring, var: usize) -> Vec<f64> {
        let comp = self.component_of[var];
        let rest = self.rest(fg, semiring, &[comp]);
        self.local_marginal(fg, semiring, var)
            .into_iter()
            .map(|v| crate::model::log_mul(v, rest))
            .collect()
    }

    /// Global joint marginal of two distinct variables, row-major in `x`.
    pub fn pair_marginal(&mut self, fg: &FactorGraph, semiring: Semiring, x: usize, y: usize) -> Vec<f64> {
        let (cx, cy) = (self.component_of[x], self.component_of[y]);
        if cx == cy {
            let rest = self.rest(fg, semiring, &[cx]);
            self.programs[cx]
                .pair_marginal(fg, semiring, x, y)
                .into_iter()
                .map(|v| crate::model::log_mul(v, rest))
                .collect()
        } else {
            let rest = self.rest(fg, semiring, &[cx, cy]);
            let mx = self.local_marginal(fg, semiring, x);
            let my = self.local_marginal(fg, semiring, y);
            let mut out = Vec::with_capacity(mx.len() * my.len());
            for &a in &mx {
                for &b in &my {
                    out.push(crate::model::log_mul(crate::model::log_mul(a, b), rest));
                }
            }
            out
        }
    }

    /// Joint marginal of two variables up to a factor common to all entries:
    /// only their own components are evaluated.
    pub fn local_pair_marginal(&self, fg: &FactorGraph, semiring: Semiring, x: usize, y: usize) -> Vec<f64> {
        let (cx, cy) = (self.component_of[x], self.component_of[y]);
        if cx == cy {
            return self.programs[cx].pair_marginal(fg, semiring, x, y);
        }
        let mx = self.local_marginal(fg, semiring, x);
        let my = self.local_marginal(fg, semiring, y);
        mx.iter()
            .flat_map(|&a| my.iter().map(move |&b| crate::model::log_mul(a, b)))
            .collect()
    }

    pub fn decode(&self, fg: &FactorGraph) -> Assignment {
        let mut values = vec![0usize; fg.num_variables()];
        for p in &self.programs {
            p.decode_into(fg, &mut values);
        }
        Assignment(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_uai, Factor};

    fn unary(p0: f64, p1: f64) -> FactorGraph {
        FactorGraph::new(&[2], vec![Factor::potential(vec![0], vec![p0.ln(), p1.ln()])]).unwrap()
    }

    fn chain() -> FactorGraph {
        parse_uai("MARKOV\n3\n2 2 2\n2\n2 0 1\n2 1 2\n4\n1 2 3 4\n4\n2 1 1 3\n").unwrap()
    }

    #[test]
    fn plan_single_variable() {
        let plan = make_plan(&unary(0.6, 0.4));
        assert_eq!(plan.order, vec![0]);
        assert_eq!(plan.total_table_entries, 2);
    }

    #[test]
    fn plan_chain() {
        let plan = make_plan(&chain());
        assert_eq!(plan.max_cluster_size, 2);
        assert_eq!(plan.order, vec![0, 1, 2]);
        assert_eq!(plan.total_table_entries, 4 + 4 + 2);
    }

    #[test]
    fn query_single_factor() {
        let fg = unary(0.6, 0.4);
        let plan = make_plan(&fg);
        assert!(query(&fg, Semiring::SumProduct, &plan).unwrap().value.abs() < 1e-15);
        let m = query(&fg, Semiring::MaxProduct, &plan).unwrap().value;
        assert!((m - 0.6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn disconnected_unaries_add() {
        let fg = FactorGraph::new(
            &[2, 2],
            vec![
                Factor::potential(vec![0], vec![0.2f64.ln(), 0.5f64.ln()]),
                Factor::potential(vec![1], vec![1.0f64.ln(), 3.0f64.ln()]),
            ],
        )
        .unwrap();
        let plan = make_plan(&fg);
        let z = query(&fg, Semiring::SumProduct, &plan).unwrap().value;
        assert!((z - (0.7f64.ln() + 4f64.ln())).abs() < 1e-14);
        let m = query(&fg, Semiring::MaxProduct, &plan).unwrap().value;
        assert!((m - (0.5f64.ln() + 3f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn unary_marginals() {
        let fg = unary(0.6, 0.4);
        let m = marginal(&fg, Semiring::SumProduct, 0).unwrap();
        assert!((m[0] - 0.6f64.ln()).abs() < 1e-15 && (m[1] - 0.4f64.ln()).abs() < 1e-15);
        assert!(matches!(
            marginal(&fg, Semiring::SumProduct, 3),
            Err(RcrError::UnknownVariable(3))
        ));
    }

    #[test]
    fn uniform_pairwise_marginal_is_symmetric() {
        let fg = parse_uai("MARKOV\n2\n2 2\n1\n2 0 1\n4\n1 1 1 1").unwrap();
        for s in [Semiring::SumProduct, Semiring::MaxProduct] {
            let m = marginal(&fg, s, 1).unwrap();
            assert_eq!(m[0], m[1]);
        }
    }

    #[test]
    fn pair_marginal_cases() {
        let fg = FactorGraph::new(
            &[2, 2],
            vec![
                Factor::potential(vec![0], vec![0.2f64.ln(), 0.5f64.ln()]),
                Factor::potential(vec![1], vec![1.0f64.ln(), 3.0f64.ln()]),
            ],
        )
        .unwrap();
        let p = pair_marginal(&fg, Semiring::SumProduct, 0, 1).unwrap();
        let m0 = marginal(&fg, Semiring::SumProduct, 0).unwrap();
        let m1 = marginal(&fg, Semiring::SumProduct, 1).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert!(
                    (p[a * 2 + b] - (m0[a] + m1[b] - query(&fg, Semiring::SumProduct, &make_plan(&fg)).unwrap().value))
                        .abs()
                        < 1e-12
                );
            }
        }
        assert!(pair_marginal(&fg, Semiring::SumProduct, 1, 1).is_err());

        let eq = FactorGraph::new(&[3, 3], vec![Factor::equivalence(0, 1, 3, 0)]).unwrap();
        let p = pair_marginal(&eq, Semiring::MaxProduct, 0, 1).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(crate::model::is_log_zero(p[a * 3 + b]), a != b);
            }
        }
    }

    #[test]
    fn decode_examples() {
        let fg = unary(0.6, 0.4);
        assert_eq!(decode_mpe(&fg, &make_plan(&fg)).unwrap(), Assignment(vec![0]));
        let tie = unary(0.5, 0.5);
        assert_eq!(decode_mpe(&tie, &make_plan(&tie)).unwrap(), Assignment(vec![0]));
        let fg = chain();
        let plan = make_plan(&fg);
        let a = decode_mpe(&fg, &plan).unwrap();
        let m = query(&fg, Semiring::MaxProduct, &plan).unwrap().value;
        assert!((fg.evaluate(&a).unwrap() - m).abs() < 1e-12);
        assert_eq!(a, Assignment(vec![1, 1, 1]));
    }

    #[test]
    fn isolated_variable_counts_its_states() {
        let fg = FactorGraph::new(&[2, 3], vec![Factor::potential(vec![0], vec![0.0, 0.0])]).unwrap();
        let plan = make_plan(&fg);
        let z = query(&fg, Semiring::SumProduct, &plan).unwrap().value;
        assert!((z - 6f64.ln()).abs() < 1e-14);
        assert_eq!(query(&fg, Semiring::MaxProduct, &plan).unwrap().value, 0.0);
    }

    #[test]
    fn component_engine_matches_whole_graph() {
        let fg = parse_uai(
            "MARKOV\n5\n2 2 2 2 2\n4\n2 0 1\n2 1 2\n1 3\n2 3 4\n4\n1 2 3 4\n4\n2 1 1 3\n2\n0.3 0.7\n4\n5 1 1 5\n",
        )
        .unwrap();
        let mut engine = ComponentEngine::new(&fg);
        assert_eq!(engine.num_components(), 2);
        let plan = make_plan(&fg);
        assert_eq!(engine.plan().total_table_entries, plan.total_table_entries);
        for s in [Semiring::SumProduct, Semiring::MaxProduct] {
            let v = query(&fg, s, &plan).unwrap().value;
            assert!((engine.value(&fg, s) - v).abs() < 1e-12);
            for var in 0..5 {
                let a = engine.marginal(&fg, s, var);
                let b = marginal(&fg, s, var).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
            for (x, y) in [(0, 2), (1, 4), (4, 0)] {
                let a = engine.pair_marginal(&fg, s, x, y);
                let b = pair_marginal(&fg, s, x, y).unwrap();
                for (p, q) in a.iter().zip(&b) {
                    assert!((p - q).abs() < 1e-12);
                }
            }
        }
        let a = engine.decode(&fg);
        let m = query(&fg, Semiring::MaxProduct, &plan).unwrap().value;
        assert!((fg.evaluate(&a).unwrap() - m).abs() < 1e-12);
    }
}
