//! Seeded benchmark models and the grid experiment.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Factor, FactorGraph};
use crate::recover::{rcr_solve, RecoveryConfig, StopReason};

/// Ising grid parameters. Unary fields are drawn from `[-u, u]` and couplings
/// from `[-w, w]`, so edges mix attractive and repulsive interactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub unary_strength: f64,
    pub coupling_strength: f64,
    pub seed: u64,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, seed: u64) -> Self {
        GridSpec {
            rows,
            cols,
            unary_strength: 1.0,
            coupling_strength: 1.0,
            seed,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, strength: f64) -> f64 {
    if strength == 0.0 {
        0.0
    } else {
        rng.random_range(-strength..=strength)
    }
}

/// Binary variables on a `rows × cols` lattice, id `r * cols + c`. All unary
/// factors come first, then one pairwise factor per edge in row-major order
/// (right neighbour before lower neighbour).
pub fn generate_grid(spec: &GridSpec) -> FactorGraph {
    assert!(
        spec.rows >= 2 && spec.cols >= 2,
        "grids need at least 2 rows and 2 columns"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.rows * spec.cols;
    let mut factors = Vec::with_capacity(3 * n);
    for v in 0..n {
        let h = uniform(&mut rng, spec.unary_strength);
        factors.push(Factor::potential(vec![v], vec![h, -h]));
    }
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let v = r * spec.cols + c;
            if c + 1 < spec.cols {
                let w = uniform(&mut rng, spec.coupling_strength);
                factors.push(Factor::potential(vec![v, v + 1], vec![w, -w, -w, w]));
            }
            if r + 1 < spec.rows {
                let w = uniform(&mut rng, spec.coupling_strength);
                factors.push(Factor::potential(vec![v, v + spec.cols], vec![w, -w, -w, w]));
            }
        }
    }
    FactorGraph::new(&vec![2; n], factors).expect("grid construction")
}

/// Random tree over binary variables: node `v > 0` attaches to a uniformly
/// chosen earlier node. Every table entry is drawn from `[-strength, strength]`.
pub fn generate_tree(nodes: usize, strength: f64, seed: u64) -> FactorGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factors = Vec::new();
    for v in 0..nodes {
        factors.push(Factor::potential(
            vec![v],
            (0..2).map(|_| uniform(&mut rng, strength)).collect(),
        ));
    }
    for v in 1..nodes {
        let parent = rng.random_range(0..v);
        factors.push(Factor::potential(
            vec![parent, v],
            (0..4).map(|_| uniform(&mut rng, strength)).collect(),
        ));
    }
    FactorGraph::new(&vec![2; nodes], factors).expect("tree construction")
}

/// Random pairwise model: each of the `n(n-1)/2` pairs becomes a factor with
/// probability `edge_probability`; cardinalities are drawn from `2..=max_card`.
pub fn generate_random_pairwise(
    n: usize,
    edge_probability: f64,
    max_card: usize,
    strength: f64,
    seed: u64,
) -> FactorGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cards: Vec<usize> = (0..n).map(|_| rng.random_range(2..=max_card.max(2))).collect();
    let mut factors = Vec::new();
    for (v, &card) in cards.iter().enumerate() {
        factors.push(Factor::potential(
            vec![v],
            (0..card).map(|_| uniform(&mut rng, strength)).collect(),
        ));
    }
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(edge_probability) {
                let table = (0..cards[a] * cards[b]).map(|_| uniform(&mut rng, strength)).collect();
                factors.push(Factor::potential(vec![a, b], table));
            }
        }
    }
    FactorGraph::new(&cards, factors).expect("random model construction")
}

/// Chain of overlapping cliques over binary variables: each variable joins a
/// factor with up to `max_clique - 1` parents drawn from the previous `window`
/// variables, which bounds the treewidth by `window`.
pub fn generate_clique_chain(
    variables: usize,
    max_clique: usize,
    window: usize,
    strength: f64,
    seed: u64,
) -> FactorGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factors = Vec::new();
    for v in 0..variables {
        let h = uniform(&mut rng, strength);
        factors.push(Factor::potential(vec![v], vec![h, -h]));
        if v == 0 {
            continue;
        }
        let lo = v.saturating_sub(window);
        let k = rng.random_range(1..=(max_clique - 1).min(v - lo));
        let mut parents: Vec<usize> = Vec::with_capacity(k);
        while parents.len() < k {
            let p = rng.random_range(lo..v);
            if !parents.contains(&p) {
                parents.push(p);
            }
        }
        parents.sort_unstable();
        parents.push(v);
        let size = 1 << parents.len();
        let table = (0..size).map(|_| uniform(&mut rng, strength)).collect();
        factors.push(Factor::potential(parents, table));
    }
    FactorGraph::new(&vec![2; variables], factors).expect("clique chain construction")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub recovery: RecoveryConfig,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Adds a wall-time column; output is then no longer byte-reproducible.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            recovery: RecoveryConfig::default(),
            tolerance: crate::compensate::DEFAULT_TOLERANCE,
            max_iterations: crate::compensate::DEFAULT_MAX_ITERATIONS,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub unary_strength: f64,
    pub coupling_strength: f64,
    pub constraints_total: usize,
    pub recovered: usize,
    pub rounds: usize,
    pub certified: bool,
    pub upper_bound_log: f64,
    pub lower_bound_log: f64,
    pub decomposed_table_entries: u64,
    pub final_table_entries: u64,
    pub size_increase: f64,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub lo: usize,
    pub hi: usize,
    pub instances: usize,
    pub percent: f64,
    /// Mean of `size_increase` over the bucket, `None` when empty.
    pub mean_size_increase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
    pub timing: bool,
}

const CSV_COLUMNS: &[&str] = &[
    "seed",
    "rows",
    "cols",
    "unary_strength",
    "coupling_strength",
    "constraints_total",
    "recovered",
    "rounds",
    "certified",
    "upper_bound_log",
    "lower_bound_log",
    "decomposed_table_entries",
    "final_table_entries",
    "size_increase",
];

impl ExperimentTable {
    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        if self.timing {
            out.push_str(",wall_ms");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.seed,
                r.rows,
                r.cols,
                r.unary_strength,
                r.coupling_strength,
                r.constraints_total,
                r.recovered,
                r.rounds,
                r.certified,
                r.upper_bound_log,
                r.lower_bound_log,
                r.decomposed_table_entries,
                r.final_table_entries,
                r.size_increase
            );
            if self.timing {
                let _ = write!(out, ",{:.3}", r.wall_ms.unwrap_or(f64::NAN));
            }
            out.push('\n');
        }
        out
    }

    /// Certified instances bucketed by constraints recovered: `0–90`, then
    /// widths of 30 up to the largest constraint total.
    pub fn buckets(&self) -> Vec<Bucket> {
        let total = self.rows.iter().map(|r| r.constraints_total).max().unwrap_or(0);
        let mut edges = vec![(0usize, 90usize)];
        let mut hi = 90;
        while hi < total {
            edges.push((hi + 1, hi + 30));
            hi += 30;
        }
        let n = self.rows.len().max(1) as f64;
        edges
            .into_iter()
            .map(|(lo, hi)| {
                let members: Vec<&ExperimentRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.certified && r.recovered >= lo && r.recovered <= hi)
                    .collect();
                let mean = if members.is_empty() {
                    None
                } else {
                    Some(members.iter().map(|r| r.size_increase).sum::<f64>() / members.len() as f64)
                };
                Bucket {
                    lo,
                    hi,
                    instances: members.len(),
                    percent: 100.0 * members.len() as f64 / n,
                    mean_size_increase: mean,
                }
            })
            .collect()
    }

    /// Bucket table in plain text, plus the count of uncertified instances.
    pub fn summary(&self) -> String {
        let mut out = String::from("constraints recovered,% instances,% increase in plan size\n");
        for b in self.buckets() {
            let inc = b
                .mean_size_increase
                .map_or("---".to_string(), |m| format!("{:.2}%", 100.0 * m));
            let _ = writeln!(out, "{}-{},{:.0}%,{}", b.lo, b.hi, b.percent, inc);
        }
        let uncertified = self.rows.iter().filter(|r| !r.certified).count();
        let _ = writeln!(out, "uncertified,{uncertified},");
        out
    }
}

/// Solves one grid and summarizes the run.
pub fn run_instance(spec: &GridSpec, config: &ExperimentConfig) -> Result<ExperimentRow> {
    let fg = generate_grid(spec);
    let start = Instant::now();
    let (state, trace) = rcr_solve(&fg, &config.recovery, config.tolerance, config.max_iterations)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let last = trace.last().expect("at least one round");
    let decomposed = trace.decomposed_table_entries;
    let final_entries = last.plan_total_table_entries;
    Ok(ExperimentRow {
        seed: spec.seed,
        rows: spec.rows,
        cols: spec.cols,
        unary_strength: spec.unary_strength,
        coupling_strength: spec.coupling_strength,
        constraints_total: trace.constraints_total,
        recovered: last.recovered_total,
        rounds: trace.records.len(),
        certified: state.certified && matches!(trace.stop, StopReason::Certified | StopReason::Exact),
        upper_bound_log: state.upper,
        lower_bound_log: state.lower,
        decomposed_table_entries: decomposed,
        final_table_entries: final_entries,
        size_increase: final_entries as f64 / decomposed as f64 - 1.0,
        wall_ms: config.timing.then_some(wall_ms),
    })
}

/// Runs every instance in order.
pub fn run_experiment(specs: &[GridSpec], config: &ExperimentConfig) -> Result<ExperimentTable> {
    let rows = specs
        .iter()
        .map(|s| run_instance(s, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentTable {
        rows,
        timing: config.timing,
    })
}
