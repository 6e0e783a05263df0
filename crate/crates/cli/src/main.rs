use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rcr::bench::{generate_grid, run_experiment, ExperimentConfig, GridSpec};
use rcr::compensate::{DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE};
use rcr::model::{is_log_zero, parse_evidence, parse_uai, write_uai, Assignment};
use rcr::oracle::brute_force;
use rcr::recover::{rcr_solve, Heuristic, RecoveryConfig, StopReason};
use rcr::{FactorGraph, RcrError, Scheme, Task};

/// Linear values are only printed while the log value stays within this range.
const LINEAR_LOG_LIMIT: f64 = 300.0;

#[derive(Parser)]
#[command(
    name = "rcr",
    version,
    about = "Relax-compensate-recover bounds and MPE solving for discrete Markov networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bound and, for MPE, solve a UAI model by relaxation with incremental recovery.
    Solve(SolveArgs),
    /// Exact answer by enumeration (small models only).
    Oracle(OracleArgs),
    /// Write a seeded Ising grid in UAI format.
    GenGrid(GridArgs),
    /// Solve a range of seeded grids and write per-instance CSV.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Mpe,
    Pr,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Mpe => Task::Mpe,
            TaskArg::Pr => Task::Pr,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    MpeDd,
    PrDd,
    ModelSplit,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Scheme {
        match s {
            SchemeArg::MpeDd => Scheme::MpeDd,
            SchemeArg::PrDd => Scheme::PrDd,
            SchemeArg::ModelSplit => Scheme::ModelSplit,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RecoverArg {
    Impact,
    Violation,
    ImpactViolation,
    None,
}

impl From<RecoverArg> for Heuristic {
    fn from(r: RecoverArg) -> Heuristic {
        match r {
            RecoverArg::Impact => Heuristic::Impact,
            RecoverArg::Violation => Heuristic::Violation,
            RecoverArg::ImpactViolation => Heuristic::ImpactThenViolation,
            RecoverArg::None => Heuristic::None,
        }
    }
}

#[derive(Args)]
struct RecoveryArgs {
    #[arg(long, value_enum, default_value = "mpe")]
    task: TaskArg,
    /// Compensation scheme [default: mpe-dd for mpe, pr-dd for pr]
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Recovery heuristic [default: impact-violation for mpe, impact for pr]
    #[arg(long, value_enum)]
    recover: Option<RecoverArg>,
    /// Constraints recovered per round.
    #[arg(long, default_value_t = 5)]
    batch: usize,
    /// Stop after this many recovery rounds.
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Compensation sweeps per round.
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    iters: usize,
    /// Convergence tolerance on log θ.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
    /// Stop before a round whose elimination plan needs more table entries.
    #[arg(long)]
    budget: Option<u64>,
}

impl RecoveryArgs {
    fn config(&self) -> RecoveryConfig {
        let task: Task = self.task.into();
        let (scheme, heuristic) = match task {
            Task::Mpe => (Scheme::MpeDd, Heuristic::ImpactThenViolation),
            Task::Pr => (Scheme::PrDd, Heuristic::Impact),
        };
        RecoveryConfig {
            heuristic: self.recover.map_or(heuristic, Into::into),
            batch_size: self.batch,
            max_rounds: self.max_rounds.unwrap_or(usize::MAX),
            task,
            scheme: self.scheme.map_or(scheme, Into::into),
            cost_budget: self.budget,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    recovery: RecoveryArgs,
    /// Write the per-round trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Model in UAI format (MARKOV or BAYES).
    model: PathBuf,
    /// UAI evidence file.
    evidence: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, value_enum, default_value = "mpe")]
    task: TaskArg,
    /// Model in UAI format (MARKOV or BAYES).
    model: PathBuf,
    /// UAI evidence file.
    evidence: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = 10)]
    rows: usize,
    #[arg(long, default_value_t = 10)]
    cols: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Unary log-potentials are drawn from [-u, u].
    #[arg(long, default_value_t = 1.0)]
    unary: f64,
    /// Couplings are drawn from [-w, w].
    #[arg(long, default_value_t = 1.0)]
    coupling: f64,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    recovery: RecoveryArgs,
    #[arg(long, default_value_t = 10)]
    rows: usize,
    #[arg(long, default_value_t = 10)]
    cols: usize,
    /// Number of instances.
    #[arg(long, default_value_t = 50)]
    seeds: u64,
    /// First seed; instances use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    #[arg(long, default_value_t = 1.0)]
    unary: f64,
    #[arg(long, default_value_t = 1.0)]
    coupling: f64,
    /// Add a wall-time column (output is then not reproducible).
    #[arg(long)]
    timing: bool,
    /// Also print the bucket summary to stderr.
    #[arg(long)]
    summary: bool,
    /// CSV output file; stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Unsupported(String),
}

impl From<RcrError> for Failure {
    fn from(e: RcrError) -> Failure {
        match e {
            RcrError::Parse { .. } | RcrError::Evidence(_) | RcrError::UnknownVariable(_) => {
                Failure::Input(e.to_string())
            }
            _ => Failure::Unsupported(e.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Input(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(model: &Path, evidence: Option<&Path>) -> Result<FactorGraph, Failure> {
    let fg = parse_uai(&read(model)?).map_err(|e| Failure::Input(format!("{}: {e}", model.display())))?;
    match evidence {
        Some(p) => {
            let ev = parse_evidence(&read(p)?).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
            Ok(fg.condition(&ev)?)
        }
        None => Ok(fg),
    }
}

fn format_value(log: f64) -> String {
    if is_log_zero(log) {
        "log -inf (linear 0)".into()
    } else if log.abs() > LINEAR_LOG_LIMIT {
        format!("log {log:.10}")
    } else {
        format!("log {log:.10} (linear {:.10e})", log.exp())
    }
}

fn format_assignment(a: &Assignment) -> String {
    a.values().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn solve(args: &SolveArgs) -> Result<(), Failure> {
    let fg = load(&args.model, args.evidence.as_deref())?;
    let config = args.recovery.config();
    let (state, trace) = rcr_solve(&fg, &config, args.recovery.tol, args.recovery.iters)?;
    if let Some(path) = &args.trace {
        fs::write(path, trace.to_jsonl()).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    }
    let last = trace.last().expect("at least one round");
    let stop = match trace.stop {
        StopReason::Certified => "certified",
        StopReason::Exact => "all constraints recovered",
        StopReason::MaxRounds => "round limit",
        StopReason::CostBudget => "cost budget",
        StopReason::NoRecovery => "no recovery requested",
    };
    let upper_label = if config.scheme == Scheme::ModelSplit {
        "approximation"
    } else {
        "upper bound"
    };
    println!("rounds: {}", trace.records.len());
    println!("recovered: {}/{}", last.recovered_total, trace.constraints_total);
    println!("stopped: {stop}");
    println!("{upper_label}: {}", format_value(state.upper));
    match (config.task, state.certified) {
        (Task::Mpe, _) if state.incumbent.is_some() => println!("lower bound: {}", format_value(state.lower)),
        (Task::Pr, true) => println!("lower bound: {}", format_value(state.lower)),
        _ => println!("lower bound: none"),
    }
    println!("certified: {}", if state.certified { "yes" } else { "no" });
    if let Some(a) = &state.incumbent {
        println!("assignment: {}", format_assignment(a));
    }
    Ok(())
}

fn oracle(args: &OracleArgs) -> Result<(), Failure> {
    let fg = load(&args.model, args.evidence.as_deref())?;
    let result = brute_force(&fg, args.task.into())?;
    println!("value: {}", format_value(result.value));
    if let Some(a) = &result.assignment {
        println!("assignment: {}", format_assignment(a));
    }
    Ok(())
}

fn grid_spec(rows: usize, cols: usize, seed: u64, unary: f64, coupling: f64) -> Result<GridSpec, Failure> {
    if rows < 2 || cols < 2 {
        return Err(Failure::Unsupported("grids need at least 2 rows and 2 columns".into()));
    }
    if !(unary >= 0.0 && coupling >= 0.0 && unary.is_finite() && coupling.is_finite()) {
        return Err(Failure::Unsupported("strengths must be finite and non-negative".into()));
    }
    Ok(GridSpec {
        rows,
        cols,
        unary_strength: unary,
        coupling_strength: coupling,
        seed,
    })
}

fn gen_grid(args: &GridArgs) -> Result<(), Failure> {
    let spec = grid_spec(args.rows, args.cols, args.seed, args.unary, args.coupling)?;
    write_output(args.output.as_deref(), &write_uai(&generate_grid(&spec)))
}

fn experiment(args: &ExperimentArgs) -> Result<(), Failure> {
    let specs = (args.first_seed..args.first_seed + args.seeds)
        .map(|s| grid_spec(args.rows, args.cols, s, args.unary, args.coupling))
        .collect::<Result<Vec<_>, _>>()?;
    let config = ExperimentConfig {
        recovery: args.recovery.config(),
        tolerance: args.recovery.tol,
        max_iterations: args.recovery.iters,
        timing: args.timing,
    };
    let table = run_experiment(&specs, &config)?;
    write_output(args.output.as_deref(), &table.to_csv())?;
    if args.summary {
        eprint!("{}", table.summary());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Oracle(a) => oracle(a),
        Command::GenGrid(a) => gen_grid(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Unsupported(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
