//! Command-line front end.
//!
//! Exit statuses: 0 no drift (or success), 1 drift detected, 2 error.
//! Reports go to files or standard output; diagnostics go to standard error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::feature_space::{load_softmax_csv, save_softmax_csv, Origin};
use crate::harness::{
    run_method, run_power_study_with_model, run_timing_benchmark_with_model, simulate_run, train_simulated_reducer,
    ExperimentConfig, Method, PowerReport, Sweep, TestParams,
};

pub const EXIT_NO_DRIFT: i32 = 0;
pub const EXIT_DRIFT: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "halfkfn", version, about = "Covariate drift detection with the Half-KFN statistic")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test two softmax CSV files for drift.
    Detect(DetectArgs),
    /// Write reduced source/target CSVs from the simulated pipeline.
    Simulate(SimulateArgs),
    /// Rejection-rate study over simulated runs.
    Power(StudyArgs),
    /// Like `power`, plus permutation/bootstrap timing ratios.
    Bench(StudyArgs),
}

#[derive(Debug, Args)]
pub struct TestFlags {
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Permutation count.
    #[arg(long, default_value_t = 100)]
    pub perms: usize,
    /// Bootstrap resample count.
    #[arg(long, default_value_t = 10)]
    pub boots: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Standard deviation of the tie-breaking noise.
    #[arg(long, default_value_t = 1e-8)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TestFlags {
    fn params(&self) -> TestParams {
        TestParams {
            k: self.k,
            permutations: self.perms,
            resamples: self.boots,
            sigma_noise: self.noise,
            alpha: self.alpha,
            ..TestParams::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, default_value = "half_kfn_bootstrap")]
    pub method: String,
    #[command(flatten)]
    pub test: TestFlags,
    /// Report path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub n1: usize,
    #[arg(long, default_value_t = 500)]
    pub n2: usize,
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    #[arg(long = "sigma-gn", default_value_t = 20.0)]
    pub sigma_gn: f64,
    /// Output directory for source.csv and target.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct StudyArgs {
    /// Flat `key = value` file; keys mirror the flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n2: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long = "sigma-gn")]
    pub sigma_gn: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Methods to run (repeat or comma-separate); all by default.
    #[arg(long = "method", value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub perms: Option<usize>,
    #[arg(long)]
    pub boots: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Parses and runs a command line, returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_NO_DRIFT };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Detect(args) => cmd_detect(&args),
        Command::Simulate(args) => cmd_simulate(&args).map(|_| EXIT_NO_DRIFT),
        Command::Power(args) => cmd_study(&args, false).map(|_| EXIT_NO_DRIFT),
        Command::Bench(args) => cmd_study(&args, true).map(|_| EXIT_NO_DRIFT),
    }
}

pub fn cmd_detect(args: &DetectArgs) -> Result<i32> {
    let method: Method = args.method.parse()?;
    let source = load_softmax_csv(&args.source, Origin::Source)?;
    let target = load_softmax_csv(&args.target, Origin::Target)?;
    let report = run_method(method, &source, &target, &args.test.params(), args.test.seed)?;
    let json = report.to_json()?;
    match &args.out {
        Some(path) => fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?,
        None => println!("{json}"),
    }
    Ok(if report.decision.is_drift() { EXIT_DRIFT } else { EXIT_NO_DRIFT })
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = ExperimentConfig {
        n1: args.n1,
        n2: args.n2,
        delta: args.delta,
        sigma_gn: args.sigma_gn,
        runs: 1,
        master_seed: args.seed,
        ..ExperimentConfig::default()
    };
    cfg.validate()?;
    if !args.out.is_dir() {
        return Err(Error::io(
            &args.out,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        ));
    }
    let model = train_simulated_reducer(&cfg.training)?;
    let (source, target) = simulate_run(&cfg, &model, 0)?;
    save_softmax_csv(&source, args.out.join("source.csv"))?;
    save_softmax_csv(&target, args.out.join("target.csv"))?;
    Ok(())
}

/// Reads a flat `key = value` file; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Fully resolved study description.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyPlan {
    pub base: ExperimentConfig,
    pub sweep: Sweep,
    pub n2: Option<usize>,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|n| n.trim().parse()).collect()
}

/// Merges the optional config file with flags (flags win).
pub fn plan_study(args: &StudyArgs) -> Result<StudyPlan> {
    let mut base = ExperimentConfig::default();
    let mut sweep = Sweep::default();
    let mut n2 = None;

    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (key, value) in parse_key_values(&text)? {
            let v = value.as_str();
            match key.as_str() {
                "n1" => sweep.sizes = vec![parse_value(&key, v)?],
                "sizes" => sweep.sizes = parse_list(&key, v)?,
                "n2" => n2 = Some(parse_value(&key, v)?),
                "delta" => sweep.deltas = vec![parse_value(&key, v)?],
                "deltas" => sweep.deltas = parse_list(&key, v)?,
                "sigma-gn" => base.sigma_gn = parse_value(&key, v)?,
                "runs" => base.runs = parse_value(&key, v)?,
                "method" | "methods" => {
                    base.methods = parse_methods(&v.split(',').map(str::to_string).collect::<Vec<_>>())?
                }
                "k" => base.params.k = parse_value(&key, v)?,
                "perms" => base.params.permutations = parse_value(&key, v)?,
                "boots" => base.params.resamples = parse_value(&key, v)?,
                "alpha" => base.params.alpha = parse_value(&key, v)?,
                "noise" => base.params.sigma_noise = parse_value(&key, v)?,
                "seed" => base.master_seed = parse_value(&key, v)?,
                "lr" => base.training.learning_rate = parse_value(&key, v)?,
                "iterations" => base.training.iterations = parse_value(&key, v)?,
                "train-seed" => base.training.seed = parse_value(&key, v)?,
                other => return Err(Error::Config(format!("unknown config key {other:?}"))),
            }
        }
    }

    if let Some(n1) = args.n1 {
        sweep.sizes = vec![n1];
    }
    if args.n2.is_some() {
        n2 = args.n2;
    }
    if let Some(delta) = args.delta {
        sweep.deltas = vec![delta];
    }
    if let Some(v) = args.sigma_gn {
        base.sigma_gn = v;
    }
    if let Some(v) = args.runs {
        base.runs = v;
    }
    if !args.methods.is_empty() {
        base.methods = parse_methods(&args.methods)?;
    }
    if let Some(v) = args.k {
        base.params.k = v;
    }
    if let Some(v) = args.perms {
        base.params.permutations = v;
    }
    if let Some(v) = args.boots {
        base.params.resamples = v;
    }
    if let Some(v) = args.alpha {
        base.params.alpha = v;
    }
    if let Some(v) = args.noise {
        base.params.sigma_noise = v;
    }
    if let Some(v) = args.seed {
        base.master_seed = v;
    }
    if sweep.sizes.is_empty() || sweep.deltas.is_empty() {
        return Err(Error::Config("sweep needs at least one size and one delta".into()));
    }
    if n2.is_some() && sweep.sizes.len() > 1 {
        return Err(Error::Config("n2 can only be set for a single n1".into()));
    }
    base.validate()?;
    Ok(StudyPlan { base, sweep, n2 })
}

pub fn execute_plan(plan: &StudyPlan, timing: bool) -> Result<PowerReport> {
    let model = train_simulated_reducer(&plan.base.training)?;
    let mut report = PowerReport::default();
    for &n1 in &plan.sweep.sizes {
        for &delta in &plan.sweep.deltas {
            let cfg = ExperimentConfig {
                n1,
                n2: plan.n2.unwrap_or(n1),
                delta,
                ..plan.base.clone()
            };
            cfg.validate()?;
            let cell = if timing {
                run_timing_benchmark_with_model(&cfg, &model)?
            } else {
                run_power_study_with_model(&cfg, &model)?
            };
            report.metadata = cell.metadata;
            report.rows.extend(cell.rows);
            report.timing.extend(cell.timing);
        }
    }
    Ok(report)
}

fn cmd_study(args: &StudyArgs, timing: bool) -> Result<()> {
    let plan = plan_study(args)?;
    if !args.out.is_dir() {
        return Err(Error::io(
            &args.out,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        ));
    }
    let report = execute_plan(&plan, timing)?;
    let stem = if timing { "bench" } else { "power" };
    write_study(&report, &args.out, stem)
}

fn write_study(report: &PowerReport, dir: &Path, stem: &str) -> Result<()> {
    report.write_csv(dir.join(format!("{stem}.csv")))?;
    report.write_json(dir.join(format!("{stem}.json")))?;
    if !report.timing.is_empty() {
        report.write_timing_csv(dir.join("timing.csv"))?;
    }
    Ok(())
}
