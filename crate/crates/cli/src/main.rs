//! `matchburn` command-line driver.
//!
//! Exit codes: 0 on success, 1 when a solver does not converge or a result
//! fails its stability check, 2 on invalid input or file errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use matchburn::constrained::{
    solve_constrained, solve_constrained_logit, CapacityFile, ConstrainedOptions, SweepOrder,
};
use matchburn::da::{da_run, write_trace, DaOptions, Proposer};
use matchburn::demand::{DemandProvider, Family, ShockConfig, ShockProvider, ShockSpec};
use matchburn::deterministic::{
    aggregate_outcome, check_aggregate_stability, check_classical_stability, classical_da,
    disaggregate_outcome, sigma_limit, trajectory_csv, LimitOptions,
};
use matchburn::equilibrium::{
    definition4_residual, logit_margins, matching_functions, solve_equilibrium,
    solve_equilibrium_logit, EquilibriumOptions, MatchingFunctions,
};
use matchburn::generate::{gen_instance, GenOptions};
use matchburn::io::{market_to_json, read_json, read_market, to_json, write_outcome, write_text};
use matchburn::queue::{sim_run, trace_csv, SimOptions, WaitMap};
use matchburn::suite::{run_instance, suite_instance, SuiteOptions, SuiteReport};
use matchburn::{
    DeterministicOutcome, EquilibriumOutcome, Error, IndividualMarket, IndividualMatching,
    MarketSpec, Result, Side,
};

#[derive(Parser)]
#[command(name = "matchburn", version, about = "Matching markets with waiting times")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the random-utility equilibrium.
    Solve(SolveArgs),
    /// Run generalized deferred acceptance.
    Da(DaArgs),
    /// Solve the capacity-constrained choice problem of one side.
    Constrained(ConstrainedArgs),
    /// Simulate the queueing market until it settles.
    Simulate(SimulateArgs),
    /// Trace the logit equilibrium as the noise vanishes and round it.
    Limit(LimitArgs),
    /// Check an outcome file for stability.
    Check(CheckArgs),
    /// Move between individual and type-level deterministic matchings.
    Bridge(BridgeArgs),
    /// Evaluate the matching functions.
    Mmf(MmfArgs),
    /// Generate a random market.
    Gen(GenArgs),
    /// Run the cross-solver suite on generated markets.
    Batch(BatchArgs),
}

#[derive(Args)]
struct MarketArg {
    /// Market JSON file.
    #[arg(long)]
    market: PathBuf,
}

#[derive(Args)]
struct OutArg {
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverKind {
    /// Closed form for logit shocks, general solver otherwise.
    Auto,
    General,
    Logit,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    market: MarketArg,
    #[arg(long, value_enum, default_value = "auto")]
    solver: SolverKind,
    /// Target sup-norm of the excess demand.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    /// Shuffle the sweep order of the general solver with this seed.
    #[arg(long)]
    shuffle: Option<u64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProposerArg {
    Passengers,
    Taxis,
}

impl From<ProposerArg> for Proposer {
    fn from(p: ProposerArg) -> Self {
        match p {
            ProposerArg::Passengers => Proposer::Passengers,
            ProposerArg::Taxis => Proposer::Taxis,
        }
    }
}

#[derive(Args)]
struct DaArgs {
    #[command(flatten)]
    market: MarketArg,
    #[arg(long, value_enum, default_value = "passengers")]
    proposer: ProposerArg,
    /// Stop once rejections fall below this mass.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_rounds: usize,
    /// Fail on the first round that breaks a monotonicity invariant.
    #[arg(long)]
    strict: bool,
    /// Per-round CSV trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Alpha,
    Gamma,
}

#[derive(Args)]
struct ConstrainedArgs {
    #[command(flatten)]
    market: MarketArg,
    /// JSON file `{"mu_bar": [[...]]}` with one capacity per segment.
    #[arg(long)]
    capacity: PathBuf,
    /// Which side chooses: alpha (passengers) or gamma (taxis).
    #[arg(long, value_enum, default_value = "alpha")]
    side: SideArg,
    #[arg(long, value_enum, default_value = "auto")]
    solver: SolverKind,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum WaitMapArg {
    Relaxation,
    Little,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    market: MarketArg,
    #[arg(long, value_enum, default_value = "relaxation")]
    wait_map: WaitMapArg,
    /// Gain of the relaxation map.
    #[arg(long, default_value_t = 0.5)]
    kappa: f64,
    /// Number of periods.
    #[arg(long = "T", default_value_t = 5000)]
    periods: usize,
    #[arg(long, default_value_t = 1e-6)]
    stat_tol: f64,
    /// Per-period CSV trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct LimitArgs {
    #[command(flatten)]
    market: MarketArg,
    /// Last exponent of the schedule sigma = 2^-k.
    #[arg(long = "K", default_value_t = 20)]
    k_max: u32,
    /// Tolerance of the fallback stability check.
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// CSV of the payoff trajectory.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    market: MarketArg,
    /// Outcome JSON: deterministic (`mu`, `u`, `v`) or random-utility
    /// (`mu`, `tau_alpha`, `tau_gamma`).
    #[arg(long)]
    outcome: PathBuf,
    /// Slack for the deterministic conditions; 0 checks exactly.
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    /// Residual bound for random-utility outcomes.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Args)]
struct BridgeArgs {
    #[command(flatten)]
    market: MarketArg,
    /// Split this type-level outcome into individuals.
    #[arg(long, conflicts_with = "matching")]
    outcome: Option<PathBuf>,
    /// Aggregate this individual matching (`{"pi": [[...]]}`).
    #[arg(long)]
    matching: Option<PathBuf>,
    /// Proposing side when deferred acceptance is run.
    #[arg(long, value_enum, default_value = "passengers")]
    proposer: ProposerArg,
    /// Seed for tie-breaking and for the order of individuals.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct MmfArgs {
    /// Evaluate on every segment of the logit equilibrium of this market.
    #[arg(long, conflicts_with_all = ["mu_x0", "mu_0y", "alpha", "gamma"])]
    market: Option<PathBuf>,
    #[arg(long)]
    mu_x0: Option<f64>,
    #[arg(long)]
    mu_0y: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShockArg {
    Logit,
    Normal,
    Logistic,
    None,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 3)]
    nx: usize,
    #[arg(long, default_value_t = 3)]
    ny: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    utility_min: f64,
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    utility_max: f64,
    #[arg(long, default_value_t = 0.5)]
    mass_min: f64,
    #[arg(long, default_value_t = 2.0)]
    mass_max: f64,
    /// Integer masses and utilities.
    #[arg(long)]
    integer: bool,
    /// Shock family; `none` gives a deterministic market.
    #[arg(long, value_enum, default_value = "logit")]
    shocks: ShockArg,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long, default_value_t = 50)]
    instances: usize,
    #[arg(long, default_value_t = 8)]
    max_types: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pass threshold on the largest pairwise deviation of mu.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Skip the queue simulation.
    #[arg(long)]
    no_simulate: bool,
    #[command(flatten)]
    out: OutArg,
}

fn emit<T: Serialize>(value: &T, out: &OutArg) -> Result<()> {
    match &out.out {
        Some(path) => write_outcome(value, path),
        None => {
            println!("{}", to_json(value)?);
            Ok(())
        }
    }
}

fn check_tol(name: &str, tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("--{name} must be positive, got {tol}")))
    }
}

fn is_logit(spec: &MarketSpec) -> bool {
    spec.shocks.as_ref().is_some_and(|s| s.logit_sigma().is_some())
}

fn solve(args: &SolveArgs) -> Result<ExitCode> {
    let spec = read_market(&args.market.market)?;
    check_tol("tol", args.tol)?;
    let opts = EquilibriumOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        order: args.shuffle.map_or(SweepOrder::RowMajor, SweepOrder::Shuffled),
    };
    let logit = match args.solver {
        SolverKind::Auto => is_logit(&spec) && args.shuffle.is_none(),
        SolverKind::General => false,
        SolverKind::Logit => true,
    };
    let out = if logit {
        solve_equilibrium_logit(&spec, &opts)?
    } else {
        solve_equilibrium(&spec, &opts)?
    };
    eprintln!(
        "{}: {} iterations, residual {:e}",
        out.diagnostics.solver, out.diagnostics.iterations, out.diagnostics.residual
    );
    emit(&out, &args.out)?;
    Ok(ExitCode::SUCCESS)
}

fn da(args: &DaArgs) -> Result<ExitCode> {
    let spec = read_market(&args.market.market)?;
    check_tol("tol", args.tol)?;
    let run = da_run(
        &spec,
        &DaOptions {
            tol: args.tol,
            max_rounds: args.max_rounds,
            strict: args.strict,
            proposer: args.proposer.into(),
        },
    )?;
    if let Some(path) = &args.trace {
        write_trace(&run.rounds, path)?;
    }
    eprintln!("{} rounds, {} invariant violations", run.rounds.len(), run.violations.len());
    for v in &run.violations {
        eprintln!("  {v}");
    }
    emit(&run.outcome, &args.out)?;
    Ok(ExitCode::SUCCESS)
}

fn constrained(args: &ConstrainedArgs) -> Result<ExitCode> {
    let spec = read_market(&args.market.market)?;
    check_tol("tol", args.tol)?;
    let cap: CapacityFile = read_json(&args.capacity)?;
    let side = match args.side {
        SideArg::Alpha => Side::Alpha,
        SideArg::Gamma => Side::Gamma,
    };
    let provider = ShockProvider::new(&spec, side)?;
    let logit = match args.solver {
        SolverKind::Auto => provider.logit_scales().is_some(),
        SolverKind::General => false,
        SolverKind::Logit => true,
    };
    let sol = if logit {
        solve_constrained_logit(&provider, &cap.mu_bar)?
    } else {
        let opts = ConstrainedOptions {
            tol: args.tol,
            ..Default::default()
        };
        solve_constrained(&provider, &cap.mu_bar, &opts)?
    };
    emit(&sol, &args.out)?;
    Ok(ExitCode::SUCCESS)
}

fn simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let spec = read_market(&args.market.market)?;
    check_tol("stat-tol", args.stat_tol)?;
    let wait_map = match args.wait_map {
        WaitMapArg::Relaxation => WaitMap::Relaxation { kappa: args.kappa },
        WaitMapArg::Little => WaitMap::Little,
    };
    let run = sim_run(
        &spec,
        &SimOptions {
            wait_map,
            periods: args.periods,
            stat_tol: args.stat_tol,
        },
    )?;
    if let Some(path) = &args.trace {
        write_text(path, trace_csv(&spec, &run.trajectory).trim_end())?;
    }
    let r = &run.report;
    match r.stationary_at {
        Some(t) => eprintln!(
            "stationary at t = {t}, residual {:e}, distance to static equilibrium {:e}",
            r.residual, r.static_deviation
        ),
        None => eprintln!(
            "not stationary after {} periods (last change {:e})",
            args.periods, r.last_change
        ),
    }
    emit(r, &args.out)?;
    Ok(if r.is_stationary() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn limit(args: &LimitArgs) -> Result<ExitCode> {
    let spec = read_market(&args.market.market)?;
    let result = sigma_limit(
        &spec,
        &LimitOptions {
            k_max: args.k_max,
            tol: args.tol,
            ..Default::default()
        },
    )?;
    if let Some(path) = &args.trajectory {
        write_text(path, trajectory_csv(&spec, &result.schedule).trim_end())?;
    }
    let diffs = result.schedule.successive_differences();
    if let Some(d) = diffs.last() {
        eprintln!("last successive difference {d:e}");
    }
    eprintln!(
        "rounded outcome: {}{}",
        result.verdict,
        if result.exact { "" } else { " (within tolerance)" }
    );
    emit(&result.outcome, &args.out)?;
    Ok(ExitCode::SUCCESS)
}

fn check(args: &CheckArgs) -> Result<ExitCode> {
    let spec = read_market(&args.market.market)?;
    let value: serde_json::Value = read_json(&args.outcome)?;
    let context = |source| Error::Json {
        context: args.outcome.display().to_string(),
        source,
    };
    if value.get("u").is_some() {
        let out: DeterministicOutcome = serde_json::from_value(value).map_err(context)?;
        let verdict = check_aggregate_stability(&spec, &out, args.eps)?;
        println!("{verdict}");
        return Ok(if verdict.is_stable() {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(1)
        });
    }
    let out: EquilibriumOutcome = serde_json::from_value(value).map_err(context)?;
    let (residual, two_sided) = definition4_residual(&spec, &out)?;
    let feasible = out.matching.check_feasible(&spec.n, &spec.m, args.tol);
    println!("demand residual {residual:e}, largest two-sided wait {two_sided:e}");
    if let Err(e) = &feasible {
        println!("{e}");
    }
    Ok(if residual <= args.tol && two_sided == 0.0 && feasible.is_ok() {
        println!("equilibrium");
        ExitCode::SUCCESS
    } else {
        println!("not an equilibrium");
        ExitCode::from(1)
    })
}

#[derive(Serialize)]
struct BridgeReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    individual: Option<IndividualMatching>,
    aggregate: DeterministicOutcome,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    burned_passengers: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    burned_taxis: Vec<f64>,
}

fn bridge(args: &BridgeArgs) -> Result<ExitCode> {
    let spec = read_market(&args.market.market)?;
    let market = IndividualMarket::from_spec(&spec)?;
    if let Some(path) = &args.outcome {
        let out: DeterministicOutcome = read_json(path)?;
        let pi = disaggregate_outcome(&spec, &out, args.seed)?;
        let verdict = check_classical_stability(&market, &pi)?;
        eprintln!("individual matching: {verdict}");
        emit(
            &BridgeReport {
                individual: Some(pi),
                aggregate: out,
                burned_passengers: Vec::new(),
                burned_taxis: Vec::new(),
            },
            &args.out,
        )?;
        return Ok(if verdict.is_stable() {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(1)
        });
    }
    let pi = match &args.matching {
        Some(path) => read_json(path)?,
        None => classical_da(&market, args.proposer.into(), args.seed)?.matching,
    };
    let agg = aggregate_outcome(&market, &pi)?;
    let verdict = check_aggregate_stability(&spec, &agg.outcome, 0.0)?;
    eprintln!("aggregate outcome: {verdict}");
    emit(
        &BridgeReport {
            individual: Some(pi),
            aggregate: agg.outcome,
            burned_passengers: agg.burned_passengers,
            burned_taxis: agg.burned_taxis,
        },
        &args.out,
    )?;
    Ok(if verdict.is_stable() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

#[derive(Serialize)]
struct SegmentFunctions {
    passenger: String,
    taxi: String,
    mu: f64,
    #[serde(flatten)]
    functions: MatchingFunctions,
}

fn mmf(args: &MmfArgs) -> Result<ExitCode> {
    let Some(path) = &args.market else {
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| Error::InvalidArgument(format!("--{name} is required without --market")))
        };
        let f = matching_functions(
            need("mu-x0", args.mu_x0)?,
            need("mu-0y", args.mu_0y)?,
            need("alpha", args.alpha)?,
            need("gamma", args.gamma)?,
        )?;
        emit(&f, &args.out)?;
        return Ok(ExitCode::SUCCESS);
    };
    let spec = read_market(path)?;
    let margins = logit_margins(&spec, &EquilibriumOptions::with_tol(1e-12))?;
    let out = margins.outcome(&spec);
    let mut rows = Vec::new();
    for ((x, y), &mu) in out.matching.indexed_iter() {
        // Utilities in units of the logit scale of each side.
        let functions = matching_functions(
            margins.log_outside_x[x].exp(),
            margins.log_outside_y[y].exp(),
            spec.alpha[[x, y]] / margins.sigma_x[x],
            spec.gamma[[x, y]] / margins.sigma_y[y],
        )?;
        rows.push(SegmentFunctions {
            passenger: spec.passenger_types[x].clone(),
            taxi: spec.taxi_types[y].clone(),
            mu,
            functions,
        });
    }
    emit(&rows, &args.out)?;
    Ok(ExitCode::SUCCESS)
}

fn generate(args: &GenArgs) -> Result<ExitCode> {
    let shocks = match args.shocks {
        ShockArg::None => None,
        ShockArg::Logit => Some(ShockConfig::logit(args.sigma)),
        ShockArg::Normal | ShockArg::Logistic => {
            let family = if matches!(args.shocks, ShockArg::Normal) {
                Family::Normal
            } else {
                Family::Logistic
            };
            Some(ShockConfig::uniform(ShockSpec::Iid {
                family,
                sigma: args.sigma,
                order: 64,
            }))
        }
    };
    let spec = gen_instance(&GenOptions {
        nx: args.nx,
        ny: args.ny,
        utility_range: (args.utility_min, args.utility_max),
        mass_range: (args.mass_min, args.mass_max),
        seed: args.seed,
        integer: args.integer,
        shocks,
    })?;
    let text = market_to_json(&spec);
    match &args.out.out {
        Some(path) => write_text(path, &text)?,
        None => println!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("MATCHBURN_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::InvalidArgument(format!(
                "MATCHBURN_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}

fn batch(args: &BatchArgs) -> Result<ExitCode> {
    check_tol("tol", args.tol)?;
    let opts = SuiteOptions {
        instances: args.instances,
        max_types: args.max_types,
        base_seed: args.seed,
        tol: args.tol,
        simulate: !args.no_simulate,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let reports = pool.install(|| {
        (0..opts.instances)
            .into_par_iter()
            .map(|i| run_instance(i, &suite_instance(i, &opts)?, opts.simulate))
            .collect::<Result<Vec<_>>>()
    })?;
    let report = SuiteReport::from_instances(reports, opts.tol);
    eprintln!(
        "{} instances, max pairwise deviation {:e}: {}",
        report.instances.len(),
        report.max_deviation,
        if report.passed() { "pass" } else { "FAIL" }
    );
    emit(&report, &args.out)?;
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Da(a) => da(a),
        Command::Constrained(a) => constrained(a),
        Command::Simulate(a) => simulate(a),
        Command::Limit(a) => limit(a),
        Command::Check(a) => check(a),
        Command::Bridge(a) => bridge(a),
        Command::Mmf(a) => mmf(a),
        Command::Gen(a) => generate(a),
        Command::Batch(a) => batch(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_convergence_failure() { 1 } else { 2 })
        }
    }
}
