//! Command-line front end.
//!
//! Every analysis reads one model file (or standard input), runs, and emits
//! a report with the fields `command`, `inputs`, `results`, `checks` and
//! `version`. Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | malformed input or arguments |
//! | 2 | model failed validation |
//! | 3 | precondition failure (e.g. not positive recurrent) |
//! | 4 | classification inconclusive |
//! | 5 | `verify` found a failing check |

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::branching::BranchingData;
use crate::classification::{
    classify_with_tol, expected_return_time, Classification, Verdict, DEFAULT_HORIZON,
};
use crate::error::Error;
use crate::model::{build_retrial, ModelFile, QbdModel, ThetaSpec};
use crate::numeric::RowVector;
use crate::oracle::{
    compare_cells, default_truncation, simulate, truncated_solve, Estimate, Per, SimConfig,
    SimStats,
};
use crate::stationary::{
    balance_residual, decay_rate, decay_rate_of_tail, matrix_product_check, stationary_dist,
    StationaryResult,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_MALFORMED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_PRECONDITION: i32 = 3;
pub const EXIT_INCONCLUSIVE: i32 = 4;
pub const EXIT_CHECK_FAILED: i32 = 5;

/// Levels compared against the oracles in `verify`.
const VERIFY_LEVELS: usize = 30;
const CYCLE_TRICK_LEVELS: usize = 20;
const Z_LIMIT: f64 = 3.0;
/// Leading series terms shown in classification reports.
const TERMS_SHOWN: usize = 50;

#[derive(Debug, Parser)]
#[command(
    name = "halfstrip",
    version,
    about = "Branching-structure analysis of level-dependent QBD walks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Json,
    Csv,
    Pretty,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Model file; `-` reads standard input.
    #[arg(short = 'm', long = "model", default_value = "-")]
    pub model: String,
    #[arg(short = 'o', long, value_enum, default_value_t = Output::Pretty)]
    pub output: Output,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    /// Series horizon K.
    #[arg(short = 'K', long, default_value_t = DEFAULT_HORIZON)]
    pub horizon: usize,
    /// Truncation level M; chosen automatically when absent.
    #[arg(short = 'M', long)]
    pub levels: Option<usize>,
    /// Comma-separated initial phase law on layer 0 (default uniform).
    #[arg(long)]
    pub initial: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = crate::oracle::simulate::DEFAULT_CYCLES)]
    pub cycles: u64,
    /// Step budget; overrides `--cycles`.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Highest level tallied by the simulator.
    #[arg(long, default_value_t = crate::oracle::simulate::DEFAULT_WINDOW)]
    pub window: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transient / null / positive recurrence verdict.
    Classify(Common),
    /// Stationary distribution level by level.
    Stationary(Common),
    /// Geometric decay rate of the stationary distribution.
    Decay(Common),
    /// Monte Carlo estimates from regenerative cycles.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Analytic results against the truncated solve and the simulator.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Generate a model file.
    Example {
        #[command(subcommand)]
        kind: ExampleKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChainCommand {
    Classify,
    Stationary,
    Decay,
}

#[derive(Debug, Subcommand)]
pub enum ExampleKind {
    /// M/M/c retrial queue with orbit-dependent retrial rate.
    Retrial {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long, default_value_t = 1)]
        c: usize,
        /// `0.3`, `0.3+0.3/n`, or a path to a table of per-level rates.
        #[arg(long)]
        theta: String,
        /// Levels given explicitly before the limiting blocks take over.
        #[arg(long, default_value_t = 200)]
        prefix_levels: usize,
        /// Uniformization rate; defaults to the largest exit rate.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run this analysis on the generated model.
        #[arg(long, value_enum)]
        then: Option<ChainCommand>,
    },
}

/// Everything one analysis run needs.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub model_path: String,
    pub levels: Option<usize>,
    pub tol: f64,
    pub horizon: usize,
    pub seed: Option<u64>,
    pub cycles: u64,
    pub steps: Option<u64>,
    pub window: usize,
    pub output: Output,
    #[serde(skip)]
    pub out_path: Option<PathBuf>,
    pub initial: Option<Vec<f64>>,
}

impl RunConfig {
    fn from_common(command: &str, c: &Common, sim: Option<&SimArgs>) -> Result<Self, Error> {
        let initial = match &c.initial {
            None => None,
            Some(s) => Some(
                s.split(',')
                    .map(|x| {
                        x.trim().parse::<f64>().map_err(|_| {
                            Error::InvalidArgument(format!("bad initial law entry `{x}`"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        let cfg = Self {
            command: command.to_string(),
            model_path: c.model.clone(),
            levels: c.levels,
            tol: c.tol,
            horizon: c.horizon,
            seed: sim.map(|s| s.seed),
            cycles: sim.map_or(crate::oracle::simulate::DEFAULT_CYCLES, |s| s.cycles),
            steps: sim.and_then(|s| s.steps),
            window: sim.map_or(crate::oracle::simulate::DEFAULT_WINDOW, |s| s.window),
            output: c.output,
            out_path: c.out.clone(),
            initial,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.tol.is_nan() || self.tol <= 0.0 {
            return bad("--tol must be positive");
        }
        if self.levels == Some(0) {
            return bad("--levels must be at least 1");
        }
        if self.horizon == 0 {
            return bad("--horizon must be at least 1");
        }
        if self.cycles == 0 || self.steps == Some(0) {
            return bad("simulation budget must be at least 1");
        }
        Ok(())
    }

    fn sim_config(&self) -> SimConfig {
        let cfg = SimConfig::new(self.seed.unwrap_or_default()).with_max_level(self.window);
        match self.steps {
            Some(s) => cfg.with_steps(s),
            None => cfg.with_cycles(self.cycles),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub inputs: Value,
    pub results: Value,
    pub checks: Vec<Check>,
    pub version: String,
}

/// A finished run: the exit status and what to print.
pub struct Outcome {
    pub status: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    fn fail(status: i32, msg: impl std::fmt::Display) -> Self {
        Self {
            status,
            stdout: String::new(),
            stderr: format!("error: {msg}\n"),
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse(_) | Error::Io(_) | Error::InvalidArgument(_) | Error::Dimension(_) => {
            EXIT_MALFORMED
        }
        Error::Invalid(_) | Error::GammaTooSmall { .. } => EXIT_INVALID,
        _ => EXIT_PRECONDITION,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I, stdin: &mut dyn Read) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let status = if e.use_stderr() {
                EXIT_MALFORMED
            } else {
                EXIT_OK
            };
            let text = e.render().to_string();
            return if status == EXIT_OK {
                Outcome {
                    status,
                    stdout: text,
                    stderr: String::new(),
                }
            } else {
                Outcome {
                    status,
                    stdout: String::new(),
                    stderr: text,
                }
            };
        }
    };
    dispatch(cli.command, stdin)
}

fn dispatch(command: Command, stdin: &mut dyn Read) -> Outcome {
    let config = match &command {
        Command::Classify(c) => RunConfig::from_common("classify", c, None),
        Command::Stationary(c) => RunConfig::from_common("stationary", c, None),
        Command::Decay(c) => RunConfig::from_common("decay", c, None),
        Command::Simulate { common, sim } => RunConfig::from_common("simulate", common, Some(sim)),
        Command::Verify { common, sim } => RunConfig::from_common("verify", common, Some(sim)),
        Command::Example { kind } => return run_example(kind),
    };
    match config {
        Ok(config) => match load_model(&config.model_path, stdin) {
            Ok(model) => finish(&config, run(&config, &model)),
            Err(e) => Outcome::fail(exit_code(&e), e),
        },
        Err(e) => Outcome::fail(exit_code(&e), e),
    }
}

fn load_model(path: &str, stdin: &mut dyn Read) -> Result<QbdModel, Error> {
    let mut text = String::new();
    if path == "-" {
        stdin.read_to_string(&mut text)?;
    } else {
        text = std::fs::read_to_string(path)?;
    }
    let file = ModelFile::from_json(&text)?;
    if let ModelFile::Generator { model, .. } = &file {
        let report = model.validate();
        if !report.is_valid() {
            return Err(Error::Invalid(report));
        }
    }
    file.into_qbd()?.validated()
}

/// A rendered report plus its exit status.
pub struct Rendered {
    pub status: i32,
    pub report: Report,
    pub pretty: String,
    pub csv: String,
}

fn finish(config: &RunConfig, rendered: Result<Rendered, Error>) -> Outcome {
    let r = match rendered {
        Ok(r) => r,
        Err(e) => return Outcome::fail(exit_code(&e), e),
    };
    let text = match config.output {
        Output::Json => {
            let mut s = serde_json::to_string_pretty(&r.report).expect("report serializes");
            s.push('\n');
            s
        }
        Output::Csv => r.csv,
        Output::Pretty => r.pretty,
    };
    let mut stderr = String::new();
    if r.status == EXIT_INCONCLUSIVE {
        stderr.push_str("classification is inconclusive within the horizon\n");
    } else if r.status == EXIT_CHECK_FAILED {
        let failed: Vec<_> = r
            .report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        let _ = writeln!(stderr, "failed checks: {}", failed.join(", "));
    }
    match &config.out_path {
        Some(path) => match std::fs::write(path, text) {
            Ok(()) => Outcome {
                status: r.status,
                stdout: String::new(),
                stderr,
            },
            Err(e) => Outcome::fail(EXIT_MALFORMED, e),
        },
        None => Outcome {
            status: r.status,
            stdout: text,
            stderr,
        },
    }
}

fn inputs(config: &RunConfig, model: &QbdModel) -> Value {
    let mut v = serde_json::to_value(config).expect("config serializes");
    v["d"] = json!(model.d);
    v["prefix_levels"] = json!(model.prefix_len());
    v
}

fn report(command: &str, inputs: Value, results: Value, checks: Vec<Check>) -> Report {
    Report {
        command: command.to_string(),
        inputs,
        results,
        checks,
        version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

fn initial_law(config: &RunConfig, d: usize) -> Result<RowVector, Error> {
    match &config.initial {
        None => Ok(RowVector::uniform(d)),
        Some(v) => {
            let mu = RowVector(v.clone());
            if mu.len() != d {
                return Err(Error::Dimension(format!(
                    "initial law has {} entries, model has {d} phases",
                    mu.len()
                )));
            }
            if !mu.is_probability(1e-9) {
                return Err(Error::InvalidArgument(
                    "initial law must be a probability vector".into(),
                ));
            }
            Ok(mu)
        }
    }
}

/// Runs one analysis on an already validated model.
pub fn run(config: &RunConfig, model: &QbdModel) -> Result<Rendered, Error> {
    match config.command.as_str() {
        "classify" => run_classify(config, model),
        "stationary" => run_stationary(config, model),
        "decay" => run_decay(config, model),
        "simulate" => run_simulate(config, model),
        "verify" => run_verify(config, model),
        other => Err(Error::InvalidArgument(format!("unknown command `{other}`"))),
    }
}

fn series_json(v: crate::classification::SeriesValue) -> Value {
    serde_json::to_value(v).expect("series value serializes")
}

fn series_text(v: crate::classification::SeriesValue) -> String {
    use crate::classification::SeriesValue::*;
    match v {
        Finite(x) => format!("{x:.10}"),
        Infinite => "infinite".into(),
        Inconclusive => "inconclusive".into(),
    }
}

fn run_classify(config: &RunConfig, model: &QbdModel) -> Result<Rendered, Error> {
    let mu = initial_law(config, model.d)?;
    let c: Classification = classify_with_tol(model, &mu, config.horizon, config.tol)?;
    let shown = c.beta_terms.len().min(TERMS_SHOWN);
    let results = json!({
        "verdict": c.verdict,
        "beta": series_json(c.beta),
        "rho1": series_json(c.rho1),
        "rho": series_json(c.rho),
        "tail_radius_plus": c.tail_radius_plus,
        "tail_radius_minus": c.tail_radius_minus,
        "horizon": c.horizon,
        "beta_terms_computed": c.beta_terms.len(),
        "beta_terms": &c.beta_terms[..shown],
        "beta_partial": &c.beta_partial[..shown],
    });
    let mut pretty = String::new();
    let _ = writeln!(pretty, "verdict: {}", c.verdict);
    let _ = writeln!(pretty, "beta+: {}", series_text(c.beta));
    let _ = writeln!(pretty, "rho1+: {}", series_text(c.rho1));
    let _ = writeln!(pretty, "rho+: {}", series_text(c.rho));
    match c.tail_radius_plus {
        Some(r) => {
            let _ = writeln!(pretty, "tail radius A+: {r:.10}");
        }
        None => {
            let _ = writeln!(pretty, "tail radius A+: not settled");
        }
    }
    let _ = writeln!(pretty, "tail radius A-: {:.10}", c.tail_radius_minus);
    let _ = writeln!(pretty, "beta+ terms computed: {}", c.beta_terms.len());

    let mut csv = String::from("k,term,partial_sum\n");
    for (k, (t, s)) in c.beta_terms.iter().zip(&c.beta_partial).enumerate() {
        let _ = writeln!(csv, "{k},{t:e},{s:e}");
    }
    let status = if c.verdict == Verdict::Inconclusive {
        EXIT_INCONCLUSIVE
    } else {
        EXIT_OK
    };
    Ok(Rendered {
        status,
        report: report("classify", inputs(config, model), results, vec![]),
        pretty,
        csv,
    })
}

fn stationary_for(
    config: &RunConfig,
    model: &QbdModel,
    max_level: Option<usize>,
) -> Result<(BranchingData, StationaryResult), Error> {
    let data = BranchingData::compute(model, 1, config.tol)?;
    let res = stationary_dist(model, &data, max_level)?;
    Ok((data, res))
}

fn run_stationary(config: &RunConfig, model: &QbdModel) -> Result<Rendered, Error> {
    let (data, res) = stationary_for(config, model, config.levels)?;
    let checks = vec![
        Check::new(
            "matrix_product",
            matrix_product_check(model, &data, &res),
            1e-10,
        ),
        Check::new("balance", balance_residual(model, &res), 1e-8),
    ];
    let results = serde_json::to_value(&res).expect("result serializes");

    let mut pretty = String::new();
    let _ = writeln!(pretty, "levels: {}", res.levels);
    let _ = writeln!(
        pretty,
        "expected return time to layer 0: {:.10}",
        res.normalizer
    );
    let _ = writeln!(pretty, "decay rate: {:.10}", res.decay_rate);
    let _ = writeln!(pretty, "mass on computed levels: {:.12}", res.mass);
    if res.underflow {
        let _ = writeln!(pretty, "note: entries below 1e-300 were flushed to zero");
    }
    let _ = writeln!(pretty, "{:>6} {:>5} {:>22}", "level", "phase", "nu");
    for (n, row) in res.nu.iter().enumerate() {
        for (j, x) in row.0.iter().enumerate() {
            let _ = writeln!(pretty, "{n:>6} {j:>5} {x:>22.15e}");
        }
    }
    let mut csv = Vec::new();
    res.write_csv(&mut csv)?;
    Ok(Rendered {
        status: EXIT_OK,
        report: report("stationary", inputs(config, model), results, checks),
        pretty,
        csv: String::from_utf8(csv).expect("csv is utf-8"),
    })
}

fn run_decay(config: &RunConfig, model: &QbdModel) -> Result<Rendered, Error> {
    let lambda = decay_rate_of_tail(model, config.tol)?;
    // Empirical rates need the distribution itself, which exists only for
    // positive recurrent walks.
    let empirical = match stationary_for(config, model, config.levels) {
        Ok((data, res)) => Some(decay_rate(&data, &res)?.empirical),
        Err(Error::NotPositiveRecurrent(_)) => None,
        Err(e) => return Err(e),
    };
    let results = json!({ "lambda": lambda, "empirical": empirical });
    let pretty = format!("{lambda:.6}\n");
    let mut csv = String::from("phase,empirical_rate\n");
    if let Some(rates) = &empirical {
        for (j, r) in rates.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{j},{}",
                r.map(|x| format!("{x:e}")).unwrap_or_default()
            );
        }
    }
    csv.insert_str(0, &format!("lambda,{lambda:e}\n"));
    Ok(Rendered {
        status: EXIT_OK,
        report: report("decay", inputs(config, model), results, vec![]),
        pretty,
        csv,
    })
}

fn sim_csv(stats: &SimStats) -> String {
    let mut csv =
        String::from("level,phase,visits_per_cycle,visits_se,probability,probability_se\n");
    for (n, (v, p)) in stats
        .visits_per_cycle
        .iter()
        .zip(&stats.empirical_distribution)
        .enumerate()
    {
        for (j, (a, b)) in v.iter().zip(p).enumerate() {
            let _ = writeln!(
                csv,
                "{n},{j},{:e},{:e},{:e},{:e}",
                a.mean, a.se, b.mean, b.se
            );
        }
    }
    csv
}

fn require_seed(config: &RunConfig) -> Result<(), Error> {
    if config.seed.is_none() {
        return Err(Error::InvalidArgument("--seed is required".into()));
    }
    Ok(())
}

fn run_simulate(config: &RunConfig, model: &QbdModel) -> Result<Rendered, Error> {
    require_seed(config)?;
    let stats = simulate(model, &config.sim_config())?;
    let mut pretty = String::new();
    let _ = writeln!(pretty, "seed: {}", stats.seed);
    let _ = writeln!(
        pretty,
        "cycles: {} (discarded {})",
        stats.cycles, stats.discarded
    );
    let _ = writeln!(pretty, "steps: {}", stats.steps);
    let t = stats.mean_return_time;
    let _ = writeln!(
        pretty,
        "mean return time to layer 0: {:.6} +/- {:.6}",
        t.mean, t.se
    );
    for (j, e) in stats.censored_measure.iter().enumerate() {
        let _ = writeln!(
            pretty,
            "censored measure phase {j}: {:.6} +/- {:.6}",
            e.mean, e.se
        );
    }
    let _ = writeln!(
        pretty,
        "time above level {}: {:.3e}",
        config.window, stats.mass_above_window
    );
    Ok(Rendered {
        status: EXIT_OK,
        report: report(
            "simulate",
            inputs(config, model),
            serde_json::to_value(&stats).expect("stats serialize"),
            vec![],
        ),
        csv: sim_csv(&stats),
        pretty,
    })
}

fn run_verify(config: &RunConfig, model: &QbdModel) -> Result<Rendered, Error> {
    require_seed(config)?;
    let data = BranchingData::compute(model, VERIFY_LEVELS, config.tol)?;
    let m = config
        .levels
        .unwrap_or_else(|| default_truncation(model))
        .max(VERIFY_LEVELS);
    let res = stationary_dist(model, &data, Some(m))?;
    let truncated = truncated_solve(model, m)?;
    let window = config.window.min(VERIFY_LEVELS);
    let sim_cfg = config.sim_config().with_max_level(window);
    let stats = simulate(model, &sim_cfg)?;

    let l1: f64 = (0..=VERIFY_LEVELS)
        .map(|n| res.nu[n].l1_diff(&truncated[n]))
        .sum();
    let kac = match expected_return_time(model, &data, &res.mu0, 0, config.horizon)? {
        crate::classification::SeriesValue::Finite(t) => (1.0 / t - res.nu[0].sum()).abs(),
        _ => f64::INFINITY,
    };
    let return_z = stats.mean_return_time.z_score(res.normalizer);
    let censored_z = stats
        .censored_measure
        .iter()
        .zip(&res.mu0.0)
        .map(|(e, x)| e.z_score(*x))
        .fold(0.0, f64::max);
    let per_cycle: Vec<RowVector> = res.nu[..=CYCLE_TRICK_LEVELS.min(window)]
        .iter()
        .map(|r| r.scale(res.normalizer))
        .collect();
    let cycle_cmp = compare_cells(&stats, &per_cycle, Per::Cycle);
    let dist_cmp = compare_cells(&stats, &truncated[..=window], Per::Step);

    let meta = &data.meta;
    let zeta = meta
        .plus_stochastic_defect
        .max(meta.plus_residual)
        .max(meta.minus_residual)
        .max(meta.tail_residual);

    let checks = vec![
        Check::new("stationary_vs_truncated_l1", l1, 1e-7),
        Check::new("mean_return_time_z", return_z, Z_LIMIT),
        Check::new("censored_measure_z", censored_z, Z_LIMIT),
        Check::new("cycle_visits_z", cycle_cmp.max_z(), Z_LIMIT),
        Check::new("empirical_distribution_z", dist_cmp.max_z(), Z_LIMIT),
        Check::new(
            "matrix_product",
            matrix_product_check(model, &data, &res),
            1e-10,
        ),
        Check::new("balance", balance_residual(model, &res), 1e-8),
        Check::new("kac", kac, 1e-8),
        Check::new("exit_matrices", zeta, 1e-9),
    ];

    let rows = |v: &[RowVector]| {
        v.iter()
            .take(VERIFY_LEVELS + 1)
            .map(|r| r.0.clone())
            .collect::<Vec<_>>()
    };
    let est_rows = |v: &[Vec<Estimate>]| {
        v.iter()
            .map(|r| r.iter().map(|e| [e.mean, e.se]).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    let results = json!({
        "truncation_level": m,
        "normalizer": res.normalizer,
        "censored_measure": res.mu0,
        "decay_rate": res.decay_rate,
        "analytic": rows(&res.nu),
        "truncated": rows(&truncated),
        "simulated": est_rows(&stats.empirical_distribution),
        "simulation": {
            "seed": stats.seed,
            "cycles": stats.cycles,
            "steps": stats.steps,
            "discarded": stats.discarded,
            "batches": stats.batches,
            "mean_return_time": stats.mean_return_time,
            "censored_measure": stats.censored_measure,
            "cycle_visits": cycle_cmp,
            "empirical_distribution": dist_cmp,
        },
        "branching": meta,
    });

    let mut pretty = String::new();
    let mut csv = String::from("check,value,tolerance,passed\n");
    for c in &checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(
            pretty,
            "{mark} {:<28} {:>12.4e} (limit {:e})",
            c.name, c.value, c.tolerance
        );
        let _ = writeln!(
            csv,
            "{},{:e},{:e},{}",
            c.name, c.value, c.tolerance, c.passed
        );
    }
    let status = if checks.iter().all(|c| c.passed) {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    };
    Ok(Rendered {
        status,
        report: report("verify", inputs(config, model), results, checks),
        pretty,
        csv,
    })
}

fn run_example(kind: &ExampleKind) -> Outcome {
    let ExampleKind::Retrial {
        lambda,
        mu,
        c,
        theta,
        prefix_levels,
        gamma,
        out,
        then,
    } = kind;
    let built =
        ThetaSpec::parse(theta, *prefix_levels).and_then(|t| build_retrial(*lambda, *mu, *c, &t));
    let g = match built {
        Ok(g) => g,
        Err(e) => return Outcome::fail(exit_code(&e), e),
    };
    let gamma = gamma.unwrap_or_else(|| g.max_exit_rate());
    let file = ModelFile::Generator { model: g, gamma };
    if let Err(e) = file.clone().into_qbd().and_then(QbdModel::validated) {
        return Outcome::fail(exit_code(&e), e);
    }
    let mut text = file.to_json();
    text.push('\n');

    if let Some(path) = out {
        if let Err(e) = std::fs::write(path, &text) {
            return Outcome::fail(EXIT_MALFORMED, e);
        }
    }
    let Some(next) = then else {
        return Outcome {
            status: EXIT_OK,
            stdout: if out.is_some() { String::new() } else { text },
            stderr: String::new(),
        };
    };
    let command = match next {
        ChainCommand::Classify => "classify",
        ChainCommand::Stationary => "stationary",
        ChainCommand::Decay => "decay",
    };
    let config = RunConfig {
        command: command.to_string(),
        model_path: out.as_ref().map_or("-".into(), |p| p.display().to_string()),
        levels: None,
        tol: 1e-12,
        horizon: DEFAULT_HORIZON,
        seed: None,
        cycles: crate::oracle::simulate::DEFAULT_CYCLES,
        steps: None,
        window: crate::oracle::simulate::DEFAULT_WINDOW,
        output: Output::Pretty,
        out_path: None,
        initial: None,
    };
    match load_model("-", &mut text.as_bytes()) {
        Ok(model) => finish(&config, run(&config, &model)),
        Err(e) => Outcome::fail(exit_code(&e), e),
    }
}

/// Entry point used by the binary.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let outcome = run_args(args, &mut std::io::stdin().lock());
    let _ = std::io::stdout().write_all(outcome.stdout.as_bytes());
    let _ = std::io::stderr().write_all(outcome.stderr.as_bytes());
    outcome.status
}
