//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its own PASS/FAIL line; exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcr::bench::{
    generate_clique_chain, generate_grid, generate_random_pairwise, generate_tree, run_experiment, ExperimentConfig,
    GridSpec,
};
use rcr::compensate::{compensate, dual_objective_closed_form, upper_bound, Compensator, DEFAULT_TOLERANCE};
use rcr::exact::{make_plan, marginal, query, Semiring};
use rcr::model::{log_sum_exp, Factor};
use rcr::oracle::brute_force;
use rcr::recover::{impact_of_recovery, rcr_solve, Heuristic, RecoveryConfig};
use rcr::{fully_decompose, DecomposedModel, FactorGraph, Scheme, Task};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

const TASKS: [Task; 2] = [Task::Mpe, Task::Pr];

fn oracle(fg: &FactorGraph, task: Task) -> f64 {
    brute_force(fg, task).expect("small model").value
}

fn small_grid(seed: u64) -> FactorGraph {
    generate_grid(&GridSpec::new(3, 3, seed))
}

fn randomize_theta(dm: &mut DecomposedModel, rng: &mut ChaCha8Rng) {
    for id in dm.relaxed_ids() {
        let card = dm.graph().cardinality(dm.constraint(id).unwrap().original);
        let on_original: Vec<f64> = (0..card).map(|_| rng.random_range(-2.0..=2.0)).collect();
        let on_clone: Vec<f64> = on_original.iter().map(|v| -v).collect();
        dm.set_theta(id, &on_original, &on_clone).unwrap();
    }
}

fn normalized(log_values: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(log_values);
    log_values.iter().map(|v| (v - z).exp()).collect()
}

fn decomposition_count() -> Outcome {
    let fg = generate_grid(&GridSpec::new(10, 10, 1));
    let n = fully_decompose(&fg).constraints().len();
    outcome(n == 360, format!("{n} constraints"))
}

fn bound_validity() -> Outcome {
    let mut checks = 0usize;
    let mut worst = f64::INFINITY;
    let mut failures = Vec::new();
    for seed in 0..200u64 {
        let size = if seed % 2 == 0 { 3 } else { 4 };
        let fg = generate_grid(&GridSpec::new(size, size, seed));
        let exact = [oracle(&fg, Task::Mpe), oracle(&fg, Task::Pr)];
        let mut check = |dm: &DecomposedModel, label: &str| {
            for (task, &truth) in TASKS.iter().zip(&exact) {
                let ub = upper_bound(dm, *task).unwrap();
                checks += 1;
                worst = worst.min(ub - truth);
                if ub < truth - 1e-9 {
                    failures.push(format!("seed {seed} {label} {task:?}: {ub} < {truth}"));
                }
            }
        };
        let dm = fully_decompose(&fg);
        check(&dm, "unit");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let mut dm = fully_decompose(&fg);
            randomize_theta(&mut dm, &mut rng);
            check(&dm, "random");
        }
        for scheme in [Scheme::MpeDd, Scheme::PrDd] {
            let mut dm = fully_decompose(&fg);
            let mut comp = Compensator::new(&dm, scheme);
            for _ in 0..1000 {
                let delta = comp.sweep(&mut dm).unwrap();
                check(&dm, "sweep");
                if delta <= DEFAULT_TOLERANCE {
                    break;
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{checks} bound checks, min slack {worst:.3e}, {} violations {:?}",
            failures.len(),
            failures.first()
        ),
    )
}

fn update_monotonicity() -> Outcome {
    let mut updates = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..50u64 {
        let fg = generate_grid(&GridSpec::new(4, 4, 1000 + seed));
        for (scheme, task) in [(Scheme::MpeDd, Task::Mpe), (Scheme::PrDd, Task::Pr)] {
            let mut dm = fully_decompose(&fg);
            let mut comp = Compensator::new(&dm, scheme);
            for _ in 0..1000 {
                let mut delta = 0.0f64;
                for id in dm.relaxed_ids() {
                    let before = comp.bound(&dm, task);
                    delta = delta.max(comp.update(&mut dm, id).unwrap());
                    let after = comp.bound(&dm, task);
                    worst = worst.max(after - before);
                    updates += 1;
                }
                if delta <= DEFAULT_TOLERANCE {
                    break;
                }
            }
        }
    }
    outcome(
        worst <= 1e-9,
        format!("{updates} updates, largest increase {worst:.3e}"),
    )
}

fn fixed_point_equivalence() -> Outcome {
    let mut worst_mpe = 0.0f64;
    let mut worst_pr = 0.0f64;
    let mut unconverged = 0;
    for seed in 0..50u64 {
        let fg = small_grid(2000 + seed);
        for scheme in [Scheme::MpeDd, Scheme::PrDd] {
            let mut dm = fully_decompose(&fg);
            let mut comp = Compensator::new(&dm, scheme);
            let report = comp.run(&mut dm, 1e-8, 1000).unwrap();
            if !report.converged {
                unconverged += 1;
            }
            let s = scheme.semiring();
            for c in dm.constraints() {
                let a = comp.engine().marginal(dm.graph(), s, c.original);
                let b = comp.engine().marginal(dm.graph(), s, c.clone);
                let gap = match scheme {
                    Scheme::MpeDd => a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
                    _ => normalized(&a)
                        .iter()
                        .zip(normalized(&b))
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max),
                };
                match scheme {
                    Scheme::MpeDd => worst_mpe = worst_mpe.max(gap),
                    _ => worst_pr = worst_pr.max(gap),
                }
            }
        }
    }
    outcome(
        worst_mpe <= 1e-6 && worst_pr <= 1e-6,
        format!("max-marginal gap {worst_mpe:.3e}, marginal gap {worst_pr:.3e}, {unconverged} runs hit the sweep cap"),
    )
}

fn impact_matches_restoration() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..200u64 {
        let fg = small_grid(3000 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dm = fully_decompose(&fg);
        if seed % 2 == 0 {
            randomize_theta(&mut dm, &mut rng);
        } else {
            compensate(&mut dm, Scheme::MpeDd, 1e-8, rng.random_range(1..20)).unwrap();
        }
        for _ in 0..rng.random_range(0..6) {
            let ids = dm.relaxed_ids();
            dm.recover(ids[rng.random_range(0..ids.len())]).unwrap();
        }
        let ids = dm.relaxed_ids();
        let id = ids[rng.random_range(0..ids.len())];
        let c = dm.constraint(id).unwrap().clone();
        let pair = c.compensation.unwrap();
        let restored = dm
            .graph()
            .without_factors(&[pair.on_original, pair.on_clone])
            .with_factor(Factor::equivalence(c.original, c.clone, 2, id))
            .unwrap();
        let plan = make_plan(&restored);
        for task in TASKS {
            let explicit = query(&restored, task.semiring(), &plan).unwrap().value;
            let impact = impact_of_recovery(&dm, id, task).unwrap();
            worst = worst.max((explicit - impact).abs());
        }
    }
    outcome(worst <= 1e-9, format!("400 comparisons, max difference {worst:.3e}"))
}

fn certification_soundness() -> Outcome {
    let mut worst = 0.0f64;
    let mut uncertified = 0;
    let mut solved = 0;
    for seed in 0..50u64 {
        let fg = small_grid(4000 + seed);
        let truth = oracle(&fg, Task::Mpe);
        for heuristic in [Heuristic::ImpactThenViolation, Heuristic::Impact, Heuristic::Violation] {
            let config = RecoveryConfig {
                heuristic,
                ..RecoveryConfig::default()
            };
            let (state, _) = rcr_solve(&fg, &config, 1e-8, 1000).unwrap();
            solved += 1;
            if !state.certified {
                uncertified += 1;
                continue;
            }
            let incumbent = fg.evaluate(state.incumbent.as_ref().unwrap()).unwrap();
            worst = worst
                .max((state.lower - truth).abs())
                .max((state.upper - truth).abs())
                .max((incumbent - truth).abs());
        }
    }
    outcome(
        worst <= 1e-6 && uncertified == 0,
        format!("{solved} solves, {uncertified} uncertified, max error {worst:.3e}"),
    )
}

fn small_random_model(seed: u64) -> FactorGraph {
    match seed % 3 {
        0 => generate_random_pairwise(6, 0.5, 3, 1.5, seed),
        1 => generate_clique_chain(9, 4, 4, 1.5, seed),
        _ => generate_grid(&GridSpec::new(3, 3, seed)),
    }
}

fn full_recovery_exactness() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let fg = small_random_model(5000 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dm = fully_decompose(&fg);
        randomize_theta(&mut dm, &mut rng);
        while dm.num_relaxed() > 0 {
            let ids = dm.relaxed_ids();
            dm.recover(ids[rng.random_range(0..ids.len())]).unwrap();
        }
        for task in TASKS {
            let value = upper_bound(&dm, task).unwrap();
            worst = worst.max((value - oracle(&fg, task)).abs());
        }
    }
    outcome(worst <= 1e-9, format!("100 comparisons, max difference {worst:.3e}"))
}

fn split_exact_on_trees() -> Outcome {
    let mut worst = 0.0f64;
    let mut unconverged = 0;
    for seed in 0..25u64 {
        let fg = generate_tree(10, 1.5, 6000 + seed);
        let mut dm = fully_decompose(&fg);
        let mut comp = Compensator::new(&dm, Scheme::ModelSplit);
        if !comp.run(&mut dm, DEFAULT_TOLERANCE, 1000).unwrap().converged {
            unconverged += 1;
        }
        for v in 0..fg.num_variables() {
            let approx = normalized(&comp.engine().marginal(dm.graph(), Semiring::SumProduct, v));
            let exact = normalized(&marginal(&fg, Semiring::SumProduct, v).unwrap());
            for (a, e) in approx.iter().zip(&exact) {
                worst = worst.max((a - e).abs());
            }
        }
    }
    outcome(
        worst <= 1e-6,
        format!("250 node marginals, max difference {worst:.3e}, {unconverged} runs hit the sweep cap"),
    )
}

fn grid_study() -> Outcome {
    let specs: Vec<GridSpec> = (0..50).map(|s| GridSpec::new(10, 10, s)).collect();
    let table = run_experiment(&specs, &ExperimentConfig::default()).unwrap();
    let mut worst = 0.0f64;
    for (spec, row) in specs.iter().zip(&table.rows) {
        if row.certified {
            let fg = generate_grid(spec);
            let exact = query(&fg, Semiring::MaxProduct, &make_plan(&fg)).unwrap().value;
            worst = worst
                .max((row.lower_bound_log - exact).abs())
                .max((row.upper_bound_log - exact).abs());
        }
    }
    let certified = table.rows.iter().filter(|r| r.certified).count();
    let early = table.rows.iter().filter(|r| r.certified && r.recovered <= 240).count();
    println!("    grid study buckets:");
    for line in table.summary().lines() {
        println!("      {line}");
    }
    println!(
        "    certified within 240 of 360 recoveries: {early}/{} ({})",
        table.rows.len(),
        if 2 * early > table.rows.len() {
            "majority"
        } else {
            "not a majority"
        }
    );
    outcome(
        worst <= 1e-6,
        format!("{certified}/50 certified, max error against elimination {worst:.3e}"),
    )
}

fn closed_form_dual() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let fg = small_random_model(7000 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dm = fully_decompose(&fg);
        randomize_theta(&mut dm, &mut rng);
        let closed = dual_objective_closed_form(&dm).unwrap();
        let bound = upper_bound(&dm, Task::Mpe).unwrap();
        worst = worst.max((closed - bound).abs());
    }
    outcome(worst <= 1e-9, format!("100 models, max difference {worst:.3e}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("decomposition count", decomposition_count),
        ("bound validity", bound_validity),
        ("per-update monotonicity", update_monotonicity),
        ("fixed-point equivalence", fixed_point_equivalence),
        ("impact matches restored model", impact_matches_restoration),
        ("certification soundness", certification_soundness),
        ("full-recovery exactness", full_recovery_exactness),
        ("model-split exact on trees", split_exact_on_trees),
        ("grid study", grid_study),
        ("closed-form dual objective", closed_form_dual),
    ];
    let budgets = [1, 120, 60, 60, 60, 120, 60, 30, 1200, 30].map(Duration::from_secs);
    let mut failed = 0;
    for (i, ((name, check), budget)) in criteria.iter().zip(budgets).enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let passed = result.passed && in_time;
        if !passed {
            failed += 1;
        }
        println!(
            "[{:>2}] {:<32} {}  {} ({:.1}s of {}s{})",
            i + 1,
            name,
            if passed { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
