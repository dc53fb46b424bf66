//! Command-line front end. Every command writes `<command>.csv` and
//! `manifest.json` into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::harness::{
    monte_carlo, sweep, trial_realization, Execution, HarnessError, Moments, MonteCarloSummary,
    SweepParam, SweepTable, TrialResult,
};
use crate::metrics::evaluate;
use crate::optimizer::{equal_power_baseline, grid_oracle, lower_bound_ee, solve, SolveError};
use crate::sysmodel::{partition_users, ModelError, SystemConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("{path}: {source}")]
    Validation { path: PathBuf, source: ModelError },
    #[error("{command}: {source}")]
    Harness {
        command: &'static str,
        source: HarnessError,
    },
    #[error("{command} (seed {seed}): {source}")]
    Solve {
        command: &'static str,
        seed: u64,
        source: SolveError,
    },
    #[error("{command}: invalid config: {source}")]
    Config {
        command: &'static str,
        source: ModelError,
    },
    #[error("{command}: no admissible realization for seed {seed} within the redraw budget")]
    NoRealization { command: &'static str, seed: u64 },
    #[error("{command}: {reason}")]
    Usage {
        command: &'static str,
        reason: String,
    },
}

#[derive(Debug, Parser)]
#[command(
    name = "mimo-ee",
    version,
    about = "Energy-efficient massive-MIMO downlink power allocation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML config file; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for trial-level parallelism (defaults to all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Run trials on the calling thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated, ascending parameter values.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the realization drawn from `--seed` and report per-user results.
    SolveOnce(CommonArgs),
    /// Per-trial results of a Monte Carlo run.
    MonteCarlo(CommonArgs),
    /// EE versus the RF mismatch log-variance (both sides).
    SweepRf(SweepArgs),
    /// EE and sum rate versus the channel-estimation error variance.
    SweepEsterr(SweepArgs),
    /// EE versus the minimum user rate.
    SweepRmin(SweepArgs),
    /// Aggregate comparison of the optimized and equal-power allocations.
    CompareBaseline(CommonArgs),
    /// Optimized EE against an exhaustive power grid, one row per seed.
    OracleCheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Grid points per user.
        #[arg(long, default_value_t = 200)]
        grid: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SolveOnce(_) => "solve-once",
            Self::MonteCarlo(_) => "monte-carlo",
            Self::SweepRf(_) => "sweep-rf",
            Self::SweepEsterr(_) => "sweep-esterr",
            Self::SweepRmin(_) => "sweep-rmin",
            Self::CompareBaseline(_) => "compare-baseline",
            Self::OracleCheck { .. } => "oracle-check",
        }
    }

    pub fn common(&self) -> &CommonArgs {
        match self {
            Self::SolveOnce(c) | Self::MonteCarlo(c) | Self::CompareBaseline(c) => c,
            Self::SweepRf(s) | Self::SweepEsterr(s) | Self::SweepRmin(s) => &s.common,
            Self::OracleCheck { common, .. } => common,
        }
    }
}

/// Reads a TOML config. Unknown keys are rejected and missing keys take the
/// defaults of [`SystemConfig`].
pub fn parse_config(path: &Path) -> Result<SystemConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text).map_err(|e| match e {
        ConfigError::Parse(source) => CliError::Parse {
            path: path.to_path_buf(),
            source,
        },
        ConfigError::Validation(source) => CliError::Validation {
            path: path.to_path_buf(),
            source,
        },
    })
}

#[derive(Debug)]
pub enum ConfigError {
    Parse(Box<toml::de::Error>),
    Validation(ModelError),
}

pub fn parse_config_str(text: &str) -> Result<SystemConfig, ConfigError> {
    let config: SystemConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(Box::new(e)))?;
    config.validate().map_err(ConfigError::Validation)?;
    Ok(config)
}

pub fn config_to_toml(config: &SystemConfig) -> String {
    toml::to_string(config).expect("config fields are all TOML-representable")
}

/// One CSV cell.
#[derive(Debug, Clone)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Bool(bool),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Self::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Self::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Self::Int(v)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Self::Int(v as u64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Self::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Self::Text(v.to_owned())
    }
}

/// Header plus rows, rendered with 17 significant digits and LF endings.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                match cell {
                    Cell::Float(v) => write!(out, "{v:.16e}"),
                    Cell::Int(v) => write!(out, "{v}"),
                    Cell::Bool(v) => write!(out, "{v}"),
                    Cell::Text(v) => write!(out, "{v}"),
                }
                .expect("writing to a String cannot fail");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub trials: usize,
    pub values: Option<Vec<f64>>,
    pub grid: Option<usize>,
    pub execution: String,
    pub threads: Option<usize>,
    pub config: SystemConfig,
    pub config_toml: String,
    pub outputs: Vec<String>,
    pub elapsed_seconds: f64,
    pub model: Value,
    pub summary: Value,
}

/// Modelling choices in effect for every run.
fn model_flags() -> Value {
    json!({
        "interference": "linear in interferer power",
        "optimized_objective": "sum of rate lower bounds over total power",
        "reported_ee": "lower-bound rates (ee_*), achievable rates (ee_achievable_*)",
        "user_order": "ascending large-scale gain",
        "bisection_bracket": "[0, v_init]",
        "equal_power": "P / (K (T - tau_d)) per user",
        "shadowing": "drawn once per trial realization",
    })
}

pub const RF_VALUES: [f64; 6] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
pub const EST_ERR_VALUES: [f64; 5] = [0.01, 0.05, 0.1, 0.15, 0.2];
pub const R_MIN_VALUES: [f64; 3] = [1.0, 1.5, 2.0];

struct Output {
    table: Table,
    summary: Value,
    values: Option<Vec<f64>>,
    grid: Option<usize>,
}

/// Runs a command and writes its CSV and manifest.
pub fn execute(command: &Command) -> Result<RunManifest, CliError> {
    let name = command.name();
    let common = command.common();
    let config = match &common.config {
        Some(path) => parse_config(path)?,
        None => SystemConfig::default(),
    };
    let execution = if common.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let started = Instant::now();
    let output = with_thread_count(common.threads, || run(command, &config, execution))?;
    let elapsed_seconds = started.elapsed().as_secs_f64();

    fs::create_dir_all(&common.out).map_err(|source| CliError::Io {
        path: common.out.clone(),
        source,
    })?;
    let csv_name = format!("{name}.csv");
    write_file(&common.out.join(&csv_name), &output.table.to_csv())?;

    let manifest = RunManifest {
        command: name.to_owned(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
        seed: common.seed,
        trials: common.trials,
        values: output.values,
        grid: output.grid,
        execution: format!("{execution:?}").to_lowercase(),
        threads: common.threads,
        config_toml: config_to_toml(&config),
        config,
        outputs: vec![csv_name],
        elapsed_seconds,
        model: model_flags(),
        summary: output.summary,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&common.out.join("manifest.json"), &(json + "\n"))?;
    Ok(manifest)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(feature = "parallel")]
fn with_thread_count<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) => crate::harness::with_threads(n, f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_thread_count<T: Send>(_threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    f()
}

fn run(command: &Command, config: &SystemConfig, execution: Execution) -> Result<Output, CliError> {
    let name = command.name();
    let common = command.common();
    match command {
        Command::SolveOnce(_) => solve_once(name, config, common.seed),
        Command::MonteCarlo(_) => {
            let summary =
                monte_carlo(config, common.trials, common.seed, execution).map_err(|source| {
                    CliError::Harness {
                        command: name,
                        source,
                    }
                })?;
            Ok(Output {
                table: trial_table(&summary.trials),
                summary: summary_json(&summary),
                values: None,
                grid: None,
            })
        }
        Command::CompareBaseline(_) => {
            let summary =
                monte_carlo(config, common.trials, common.seed, execution).map_err(|source| {
                    CliError::Harness {
                        command: name,
                        source,
                    }
                })?;
            let mut table = Table::new(SUMMARY_COLUMNS);
            table.push(summary_cells(&summary));
            Ok(Output {
                table,
                summary: summary_json(&summary),
                values: None,
                grid: None,
            })
        }
        Command::SweepRf(args) => {
            run_sweep(name, config, SweepParam::RfVar, &RF_VALUES, args, execution)
        }
        Command::SweepEsterr(args) => run_sweep(
            name,
            config,
            SweepParam::EstErrVar,
            &EST_ERR_VALUES,
            args,
            execution,
        ),
        Command::SweepRmin(args) => run_sweep(
            name,
            config,
            SweepParam::RMin,
            &R_MIN_VALUES,
            args,
            execution,
        ),
        Command::OracleCheck { grid, .. } => {
            oracle_check(name, config, common.seed, common.trials, *grid)
        }
    }
}

const SUMMARY_COLUMNS: [&str; 18] = [
    "n",
    "converged",
    "unconverged",
    "rejected",
    "mean_ee_proposed",
    "std_ee_proposed",
    "mean_ee_equal",
    "std_ee_equal",
    "mean_ee_gap",
    "std_ee_gap",
    "win_fraction",
    "mean_sum_rate_proposed",
    "std_sum_rate_proposed",
    "mean_sum_rate_equal",
    "std_sum_rate_equal",
    "mean_ee_achievable_proposed",
    "mean_ee_achievable_equal",
    "mean_outer_iters",
];

fn mean_outer_iters(summary: &MonteCarloSummary) -> f64 {
    let iters: Vec<f64> = summary
        .trials
        .iter()
        .filter(|t| t.converged)
        .map(|t| t.outer_iters as f64)
        .collect();
    Moments::of(&iters).mean
}

fn summary_cells(s: &MonteCarloSummary) -> Vec<Cell> {
    vec![
        s.n_trials.into(),
        s.converged.into(),
        s.unconverged.into(),
        s.rejected.into(),
        s.ee_proposed.mean.into(),
        s.ee_proposed.std.into(),
        s.ee_equal.mean.into(),
        s.ee_equal.std.into(),
        s.ee_gap.mean.into(),
        s.ee_gap.std.into(),
        s.win_fraction.into(),
        s.sum_rate_proposed.mean.into(),
        s.sum_rate_proposed.std.into(),
        s.sum_rate_equal.mean.into(),
        s.sum_rate_equal.std.into(),
        s.ee_achievable_proposed.mean.into(),
        s.ee_achievable_equal.mean.into(),
        mean_outer_iters(s).into(),
    ]
}

fn summary_json(s: &MonteCarloSummary) -> Value {
    json!({
        "n": s.n_trials,
        "converged": s.converged,
        "unconverged": s.unconverged,
        "rejected": s.rejected,
        "mean_ee_proposed": s.ee_proposed.mean,
        "mean_ee_equal": s.ee_equal.mean,
        "win_fraction": s.win_fraction,
    })
}

fn trial_table(trials: &[TrialResult]) -> Table {
    let mut table = Table::new([
        "seed",
        "rejected",
        "converged",
        "outer_iters",
        "redraws",
        "ee_proposed",
        "ee_equal",
        "sum_rate_proposed",
        "sum_rate_equal",
        "ee_achievable_proposed",
        "ee_achievable_equal",
    ]);
    for t in trials {
        let m = t.metrics;
        let f = |get: fn(&crate::harness::TrialMetrics) -> f64| -> Cell {
            m.as_ref().map_or(f64::NAN, get).into()
        };
        table.push(vec![
            t.seed.into(),
            t.rejected.into(),
            t.converged.into(),
            t.outer_iters.into(),
            t.redraws.into(),
            f(|m| m.ee_proposed),
            f(|m| m.ee_equal),
            f(|m| m.sum_rate_proposed),
            f(|m| m.sum_rate_equal),
            f(|m| m.ee_achievable_proposed),
            f(|m| m.ee_achievable_equal),
        ]);
    }
    table
}

/// Sweep CSV: parameter value, the EE columns, counts, then extras.
pub fn sweep_table(table: &SweepTable) -> Table {
    let mut header = vec![
        table.parameter.name().to_owned(),
        "mean_ee_proposed".into(),
        "std_ee_proposed".into(),
        "mean_ee_equal".into(),
        "std_ee_equal".into(),
        "n".into(),
        "rejected".into(),
    ];
    header.extend(
        [
            "converged",
            "unconverged",
            "mean_ee_gap",
            "std_ee_gap",
            "win_fraction",
            "mean_sum_rate_proposed",
            "std_sum_rate_proposed",
            "mean_sum_rate_equal",
            "std_sum_rate_equal",
            "mean_ee_achievable_proposed",
            "mean_ee_achievable_equal",
        ]
        .map(String::from),
    );
    let mut out = Table::new(header);
    for row in &table.rows {
        let s = &row.summary;
        out.push(vec![
            row.value.into(),
            s.ee_proposed.mean.into(),
            s.ee_proposed.std.into(),
            s.ee_equal.mean.into(),
            s.ee_equal.std.into(),
            s.n_trials.into(),
            s.rejected.into(),
            s.converged.into(),
            s.unconverged.into(),
            s.ee_gap.mean.into(),
            s.ee_gap.std.into(),
            s.win_fraction.into(),
            s.sum_rate_proposed.mean.into(),
            s.sum_rate_proposed.std.into(),
            s.sum_rate_equal.mean.into(),
            s.sum_rate_equal.std.into(),
            s.ee_achievable_proposed.mean.into(),
            s.ee_achievable_equal.mean.into(),
        ]);
    }
    out
}

fn run_sweep(
    name: &'static str,
    config: &SystemConfig,
    parameter: SweepParam,
    defaults: &[f64],
    args: &SweepArgs,
    execution: Execution,
) -> Result<Output, CliError> {
    let values = args.values.clone().unwrap_or_else(|| defaults.to_vec());
    let table = sweep(
        config,
        parameter,
        &values,
        args.common.trials,
        args.common.seed,
        execution,
    )
    .map_err(|source| CliError::Harness {
        command: name,
        source,
    })?;
    let summary = Value::Array(
        table
            .rows
            .iter()
            .map(|r| json!({ "value": r.value, "summary": summary_json(&r.summary) }))
            .collect(),
    );
    Ok(Output {
        table: sweep_table(&table),
        summary,
        values: Some(values),
        grid: None,
    })
}

fn solve_once(name: &'static str, config: &SystemConfig, seed: u64) -> Result<Output, CliError> {
    config.validate().map_err(|source| CliError::Config {
        command: name,
        source,
    })?;
    let (ch, redraws) = trial_realization(config, seed).ok_or(CliError::NoRealization {
        command: name,
        seed,
    })?;
    let partition = partition_users(&ch.beta, config);
    let solve_err = |source| CliError::Solve {
        command: name,
        seed,
        source,
    };
    let solved = solve(&ch, &partition, config).map_err(solve_err)?;
    let equal = equal_power_baseline(config);
    let proposed = evaluate(&solved.powers, &ch, config).map_err(|e| solve_err(e.into()))?;
    let baseline = evaluate(&equal, &ch, config).map_err(|e| solve_err(e.into()))?;

    let mut table = Table::new([
        "user",
        "group",
        "beta",
        "gain_norm_sq",
        "power_proposed",
        "power_equal",
        "rate_proposed",
        "rate_equal",
        "rate_lb_proposed",
        "rate_lb_equal",
    ]);
    for k in 0..ch.users() {
        let group = format!("{:?}", partition.group(k)).to_lowercase();
        table.push(vec![
            k.into(),
            group.as_str().into(),
            ch.beta[k].into(),
            ch.gain_norm_sq(k).into(),
            solved.powers[k].into(),
            equal[k].into(),
            proposed.rate[k].into(),
            baseline.rate[k].into(),
            proposed.rate_lb[k].into(),
            baseline.rate_lb[k].into(),
        ]);
    }
    println!(
        "seed {seed}: ee_proposed {:.6} ee_equal {:.6} sum_rate_proposed {:.6} sum_rate_equal {:.6} converged {}",
        proposed.ee_lb, baseline.ee_lb, proposed.sum_rate, baseline.sum_rate, solved.converged
    );
    Ok(Output {
        table,
        summary: json!({
            "redraws": redraws,
            "q": solved.q,
            "converged": solved.converged,
            "outer_iters": solved.outer_iters,
            "certificate_gap": solved.certificate_gap,
            "kkt_residual_max": solved.kkt_residual_max,
            "ee_proposed": proposed.ee_lb,
            "ee_equal": baseline.ee_lb,
            "sum_rate_proposed": proposed.sum_rate,
            "sum_rate_equal": baseline.sum_rate,
        }),
        values: None,
        grid: None,
    })
}

fn oracle_check(
    name: &'static str,
    config: &SystemConfig,
    base_seed: u64,
    trials: usize,
    grid: usize,
) -> Result<Output, CliError> {
    config.validate().map_err(|source| CliError::Config {
        command: name,
        source,
    })?;
    if trials == 0 {
        return Err(CliError::Usage {
            command: name,
            reason: "--trials must be at least 1".into(),
        });
    }
    let mut table = Table::new([
        "seed",
        "ee_proposed",
        "ee_oracle",
        "relative_gap",
        "converged",
    ]);
    let mut worst = f64::NEG_INFINITY;
    for seed in (0..trials as u64).map(|i| base_seed.wrapping_add(i)) {
        let (ch, _) = trial_realization(config, seed).ok_or(CliError::NoRealization {
            command: name,
            seed,
        })?;
        let partition = partition_users(&ch.beta, config);
        let solve_err = |source| CliError::Solve {
            command: name,
            seed,
            source,
        };
        let solved = solve(&ch, &partition, config).map_err(solve_err)?;
        let ee = lower_bound_ee(solved.powers.as_slice(), &ch, config).map_err(solve_err)?;
        let (_, ee_oracle) = grid_oracle(&ch, &partition, config, grid).map_err(solve_err)?;
        let gap = (ee_oracle - ee) / ee_oracle.abs();
        worst = worst.max(gap);
        println!(
            "seed {seed}: proposed EE {ee:.6} oracle EE {ee_oracle:.6} relative gap {gap:.3e}"
        );
        table.push(vec![
            seed.into(),
            ee.into(),
            ee_oracle.into(),
            gap.into(),
            solved.converged.into(),
        ]);
    }
    Ok(Output {
        table,
        summary: json!({ "worst_relative_gap": worst }),
        values: None,
        grid: Some(grid),
    })
}
