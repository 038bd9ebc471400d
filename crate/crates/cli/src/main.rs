use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use var_bdca::bench::{
    self, AggregateOptions, Dataset, ExperimentGrid, InitScheme, ParamConfig, SchemeId, BENCH_R_MINS,
};
use var_bdca::data::{self, SyntheticSpec};
use var_bdca::objective;
use var_bdca::solvers::{self, Algorithm, SolverConfig, StopCriterion, TerminationReason};
use var_bdca::subproblem;
use var_bdca::{load_scenarios, DataFormat, Error, ProblemSpec};

// sysexits
const EX_USAGE: u8 = 64;
const EX_DATAERR: u8 = 65;
const EX_NOINPUT: u8 = 66;

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EX_USAGE,
            message: message.into(),
        }
    }

    fn software(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

/// Maps library errors raised while loading input.
fn input_failure(e: Error) -> Failure {
    let code = match e {
        Error::Io { .. } => EX_NOINPUT,
        Error::Invalid(_) => EX_USAGE,
        _ => EX_DATAERR,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

/// Maps errors from validating user-supplied parameters.
fn param_failure(e: Error) -> Failure {
    Failure::usage(e.to_string())
}

fn run_failure(e: Error) -> Failure {
    Failure::software(e.to_string())
}

type CmdResult = Result<u8, Failure>;

#[derive(Parser, Debug)]
#[command(name = "var-bdca", version, about = "VaR-constrained portfolio selection with DCA and boosted DCA")]
struct Cli {
    /// Repeat for more progress output on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one problem from one starting point.
    Solve(SolveArgs),
    /// Run DCA/BDCA over thresholds, schemes and random starts.
    Bench(BenchArgs),
    /// Run BDCA over a grid of fixed (beta, rho, tau) values.
    Sensitivity(SensitivityArgs),
    /// Per-asset and cross-asset summary statistics.
    Stats(StatsArgs),
    /// Draw a multivariate normal scenario file.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Scenario file; repeat for several datasets where supported.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    /// csv_returns (strictly positive gross returns) or csv_signed.
    #[arg(long, default_value = "csv_returns", value_parser = parse_format)]
    format: DataFormat,
}

#[derive(Args, Debug)]
struct RiskArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Lower DC level gap; defaults to half the boundary mass.
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args, Debug)]
struct StopArgs {
    #[arg(long, value_parser = parse_stop, default_value = "dk_abs")]
    stop: StopCriterion,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Subproblem interior-point tolerance.
    #[arg(long, default_value_t = subproblem::DEFAULT_TOL)]
    qp_tol: f64,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    risk: RiskArgs,
    #[command(flatten)]
    stop: StopArgs,
    /// Output directory for result.json and trace.jsonl.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_algorithm, default_value = "bdca")]
    algorithm: Algorithm,
    #[arg(long, default_value_t = 0.96, allow_hyphen_values = true)]
    r_min: f64,
    #[arg(long, default_value_t = 1.5)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 0.9)]
    beta: f64,
    /// Use the adaptive tau/rho/beta schedule instead of the fixed values.
    #[arg(long)]
    adaptive: bool,
    #[arg(long)]
    time_limit: Option<f64>,
    /// Comma-separated starting weights; uniform if omitted.
    #[arg(long, value_delimiter = ',')]
    start: Option<Vec<f64>>,
    /// Write the first subproblem as dense matrices to this file.
    #[arg(long)]
    dump_qp: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemeChoice {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

impl SchemeChoice {
    fn ids(self) -> Vec<SchemeId> {
        match self {
            SchemeChoice::One => vec![SchemeId::NearUniform],
            SchemeChoice::Two => vec![SchemeId::Skewed],
            SchemeChoice::Both => vec![SchemeId::NearUniform, SchemeId::Skewed],
        }
    }
}

#[derive(Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    risk: RiskArgs,
    #[command(flatten)]
    stop: StopArgs,
    /// Output directory for the CSV tables.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed for starting points, run seeds and bootstrap.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "both")]
    scheme: SchemeChoice,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value_t = bench::DEFAULT_RESAMPLES)]
    resamples: usize,
    /// Family-wide confidence level, Bonferroni-adjusted per interval.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = BENCH_R_MINS)]
    r_min: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_algorithm, default_values = ["dca", "bdca"])]
    algorithm: Vec<Algorithm>,
    #[arg(long, default_value_t = 250)]
    starts: usize,
    #[arg(long, default_value_t = 240.0)]
    time_limit: f64,
    /// Adaptive schedule; `--adaptive false` uses the fixed values below.
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    adaptive: bool,
    #[arg(long, default_value_t = 1.5)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 0.9)]
    beta: f64,
}

#[derive(Args, Debug)]
struct SensitivityArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [0.96])]
    r_min: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_algorithm, default_values = ["bdca"])]
    algorithm: Vec<Algorithm>,
    #[arg(long, default_value_t = 50)]
    starts: usize,
    #[arg(long, default_value_t = 60.0)]
    time_limit: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 0.75])]
    beta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 10.0])]
    rho: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 10.0])]
    tau: Vec<f64>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Output directory; one `<dataset>_stats.csv` per dataset.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Comma-separated mean vector; defaults to the three-asset toy.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mean: Option<Vec<f64>>,
    /// Covariance rows separated by `;`, entries by `,`.
    #[arg(long, allow_hyphen_values = true)]
    cov: Option<String>,
    #[arg(long, default_value_t = 2000)]
    scenarios: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output scenario file.
    #[arg(long, default_value = "synthetic.csv")]
    out: PathBuf,
}

fn parse_format(s: &str) -> Result<DataFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_stop(s: &str) -> Result<StopCriterion, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn create_file(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::software(format!("{}: {e}", parent.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::software(format!("{}: {e}", path.display())))
}

fn load_all(args: &DataArgs) -> Result<Vec<Dataset>, Failure> {
    let mut out: Vec<Dataset> = Vec::new();
    for path in &args.data {
        let scenarios = load_scenarios(path, args.format).map_err(input_failure)?;
        let mut id = scenarios.source_id().to_string();
        if out.iter().any(|d| d.id == id) {
            id = format!("{id}_{}", out.len());
        }
        out.push(Dataset {
            id,
            scenarios: Arc::new(scenarios),
        });
    }
    Ok(out)
}

fn stop_config(stop: &StopArgs) -> SolverConfig {
    SolverConfig {
        max_iter: stop.max_iter,
        stop_criterion: stop.stop,
        stop_tol: stop.tol,
        subproblem_tol: stop.qp_tol,
        ..SolverConfig::default()
    }
}

fn cmd_solve(args: SolveArgs, verbose: u8) -> CmdResult {
    if args.data.data.len() != 1 {
        return Err(Failure::usage("solve takes exactly one --data file"));
    }
    let dataset = load_all(&args.data)?.remove(0);
    let spec = ProblemSpec::new(
        dataset.scenarios.clone(),
        args.risk.alpha,
        args.risk.gamma,
        args.r_min,
        args.tau,
        args.rho,
    )
    .map_err(param_failure)?;
    spec.validate().map_err(param_failure)?;
    let config = SolverConfig {
        algorithm: args.algorithm,
        time_limit_seconds: args.time_limit,
        beta: args.beta,
        adaptive: args.adaptive,
        seed: args.seed,
        ..stop_config(&args.stop)
    };
    config.validate().map_err(param_failure)?;
    let n = spec.n_assets();
    let w0 = match args.start {
        Some(w) => var_bdca::simplex::accept_start(&w, solvers::START_SLACK).map_err(param_failure)?,
        None => var_bdca::simplex::uniform(n),
    };
    if w0.len() != n {
        return Err(Failure::usage(format!("--start has {} weights, data has {n} assets", w0.len())));
    }

    if let Some(path) = &args.dump_qp {
        let u = objective::h_subgradient(&spec, &w0, Some(args.seed)).map_err(run_failure)?;
        let qp = subproblem::build_epigraph_qp(&spec, &u).map_err(run_failure)?;
        let mut f = create_file(path)?;
        qp.write_listing(&mut f)
            .and_then(|_| f.flush())
            .map_err(|e| Failure::software(format!("{}: {e}", path.display())))?;
    }

    let result = solvers::solve(&spec, &w0, &config).map_err(run_failure)?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::software(format!("{}: {e}", args.out.display())))?;
    let mut f = create_file(&args.out.join("result.json"))?;
    result.write_json(&mut f).map_err(run_failure)?;
    f.flush().map_err(|e| Failure::software(e.to_string()))?;
    let mut f = create_file(&args.out.join("trace.jsonl"))?;
    solvers::write_trace_jsonl(&result.trace, &mut f).map_err(run_failure)?;
    f.flush().map_err(|e| Failure::software(e.to_string()))?;

    println!("dataset          {}", dataset.id);
    println!("algorithm        {}", result.algorithm);
    println!("expected return  {:.6}", result.expected_return);
    println!("var              {:.6}", result.var);
    println!("feasible         {}", result.feasible);
    println!("iterations       {}", result.iterations);
    println!("seconds          {:.3}", result.total_seconds);
    println!("termination      {}", result.reason);
    if let Some(k) = result.kkt_residual {
        println!("kkt residual     {k:.3e}");
    }
    if verbose > 0 {
        let weights: Vec<String> = result.w.iter().map(|w| format!("{w:.6}")).collect();
        eprintln!("weights {}", weights.join(" "));
    }
    Ok(match result.reason {
        TerminationReason::Converged => 0,
        TerminationReason::MaxIter | TerminationReason::TimeLimit => 2,
        TerminationReason::NumericalFailure => 1,
    })
}

fn run_grid(
    grid_args: &GridArgs,
    r_mins: Vec<f64>,
    algorithms: Vec<Algorithm>,
    configs: Vec<ParamConfig>,
    starts: usize,
    time_limit: f64,
    verbose: u8,
) -> CmdResult {
    if r_mins.is_empty() || algorithms.is_empty() || configs.is_empty() || starts == 0 {
        return Err(Failure::usage("the experiment grid is empty"));
    }
    if !(grid_args.level > 0.0 && grid_args.level < 1.0) || grid_args.resamples == 0 {
        return Err(Failure::usage("--level must lie in (0, 1) and --resamples must be positive"));
    }
    let datasets = load_all(&grid_args.data)?;
    let grid = ExperimentGrid {
        datasets,
        r_mins,
        algorithms,
        schemes: grid_args
            .scheme
            .ids()
            .into_iter()
            .map(|id| InitScheme::new(id, grid_args.seed))
            .collect(),
        starts,
        configs,
        alpha: grid_args.risk.alpha,
        gamma: grid_args.risk.gamma,
        solver: SolverConfig {
            time_limit_seconds: Some(time_limit),
            ..stop_config(&grid_args.stop)
        },
        master_seed: grid_args.seed,
    };
    grid.validate().map_err(param_failure)?;
    if verbose > 0 {
        eprintln!("running {} solves", grid.n_runs());
    }
    let records = bench::run_experiment(&grid, grid_args.jobs).map_err(param_failure)?;
    let summary = bench::aggregate(&records, &AggregateOptions {
        resamples: grid_args.resamples,
        level: grid_args.level,
        seed: grid_args.seed,
    })
    .map_err(run_failure)?;
    let written = bench::write_outputs(&grid_args.out, &records, &summary).map_err(run_failure)?;

    println!(
        "{:<12} {:>8} {:<5} {:<12} {:<28} {:>5} {:>10} {:>12}",
        "dataset", "r_min", "alg", "scheme", "config", "runs", "infeasible", "med_return"
    );
    for r in &summary {
        let ret = r
            .median_return
            .map_or(data::UNDEFINED.to_string(), |c| format!("{:.6}", c.point));
        println!(
            "{:<12} {:>8} {:<5} {:<12} {:<28} {:>5} {:>10} {:>12}",
            r.dataset,
            r.r_min,
            r.algorithm.to_string(),
            r.scheme.to_string(),
            r.config,
            r.runs,
            r.infeasible_count,
            ret
        );
    }
    for path in written {
        println!("wrote {}", path.display());
    }
    let errors: usize = summary.iter().map(|r| r.errors).sum();
    Ok(if errors > 0 { 1 } else { 0 })
}

fn cmd_bench(args: BenchArgs, verbose: u8) -> CmdResult {
    let config = if args.adaptive {
        ParamConfig::adaptive()
    } else {
        ParamConfig::fixed(args.tau, args.rho, args.beta)
    };
    run_grid(&args.grid, args.r_min, args.algorithm, vec![config], args.starts, args.time_limit, verbose)
}

fn cmd_sensitivity(args: SensitivityArgs, verbose: u8) -> CmdResult {
    let mut configs = Vec::new();
    for &beta in &args.beta {
        for &rho in &args.rho {
            for &tau in &args.tau {
                configs.push(ParamConfig::fixed(tau, rho, beta));
            }
        }
    }
    println!("{} configurations per scheme", configs.len());
    run_grid(&args.grid, args.r_min, args.algorithm, configs, args.starts, args.time_limit, verbose)
}

fn cmd_stats(args: StatsArgs) -> CmdResult {
    let datasets = load_all(&args.data)?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::software(format!("{}: {e}", args.out.display())))?;
    for d in datasets {
        let stats = data::summary_stats(&d.scenarios, args.alpha).map_err(input_failure)?;
        let path = args.out.join(format!("{}_stats.csv", d.id));
        let mut f = create_file(&path)?;
        data::write_summary_csv(&stats, &mut f).map_err(run_failure)?;
        f.flush().map_err(|e| Failure::software(e.to_string()))?;
        println!("{} (alpha = {})", d.id, args.alpha);
        println!("{:<6} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}", "", "mu", "sigma", "var", "cvar", "skew", "kurt");
        for q in &stats.quantiles {
            let cells: Vec<String> = q
                .values
                .iter()
                .map(|m| m.value().map_or(data::UNDEFINED.to_string(), |v| format!("{v:.5}")))
                .collect();
            println!(
                "{:<6} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
                q.row.label(),
                cells[0],
                cells[1],
                cells[2],
                cells[3],
                cells[4],
                cells[5]
            );
        }
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn parse_cov(text: &str) -> Result<Vec<Vec<f64>>, Failure> {
    text.split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Failure::usage(format!("bad covariance entry {v:?}")))
                })
                .collect()
        })
        .collect()
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    let toy = SyntheticSpec::toy(args.seed);
    let spec = SyntheticSpec {
        mean: args.mean.unwrap_or(toy.mean),
        covariance: match &args.cov {
            Some(text) => parse_cov(text)?,
            None => toy.covariance,
        },
        scenario_count: args.scenarios,
        seed: args.seed,
    };
    let scenarios = data::generate_synthetic(&spec).map_err(|e| Failure {
        code: EX_DATAERR,
        message: e.to_string(),
    })?;
    let mut f = create_file(&args.out)?;
    data::write_scenarios(&scenarios, &mut f).map_err(run_failure)?;
    f.flush().map_err(|e| Failure::software(e.to_string()))?;
    println!(
        "wrote {} scenarios x {} assets to {}",
        scenarios.n_scenarios(),
        scenarios.n_assets(),
        args.out.display()
    );
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EX_USAGE } else { 0 });
        }
    };
    let verbose = cli.verbose;
    let outcome = match cli.command {
        Command::Solve(a) => cmd_solve(a, verbose),
        Command::Bench(a) => cmd_bench(a, verbose),
        Command::Sensitivity(a) => cmd_sensitivity(a, verbose),
        Command::Stats(a) => cmd_stats(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
