//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error,
//! 3 numerical failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::bounds::{evaluate_batch, write_tube_csv, BoundParams, TubeMethod};
use crate::control::{run_control_demo_with, ControlConfig};
use crate::error::{Error, Result};
use crate::experiments::{
    aggregate, preset, run_experiment_with_jobs, table_row, CoverageReport, ExperimentConfig, SamplerKind,
    TableQuantity, PRESET_TAGS,
};
use crate::gpr::{fit, Dataset};
use crate::kernels::{Grid, KernelFamily, KernelSpec};
use crate::rkhs::{sample_onb, sample_pre_rkhs, OnbSampler, PreRkhsSampler, RkhsFunction};

#[derive(Debug, Parser)]
#[command(name = "gp-bounds", version, about = "Frequentist uncertainty tubes for GP regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte-Carlo coverage experiment.
    Experiment(ExperimentArgs),
    /// Run the beta-scaling conservatism sweep of an experiment.
    Sweep(ExperimentArgs),
    /// Sample an RKHS function and, optionally, a noisy dataset from it.
    SampleFunction(SampleArgs),
    /// Fit GPR to a dataset and write uncertainty tubes on a grid.
    FitAndBound(FitArgs),
    /// Learn disturbance sets for the control example.
    ControlDemo(ControlArgs),
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Preset tag; ignored when --config is given.
    pub preset: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub functions: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub delta: Option<Vec<f64>>,
    /// Record wall-clock time in the manifest (makes it non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[arg(long, default_value = "se")]
    pub kernel: KernelFamily,
    #[arg(long, default_value_t = 0.2)]
    pub lengthscale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub variance: f64,
}

impl KernelArgs {
    fn spec(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.kernel, self.lengthscale, self.variance).map_err(as_config)
    }
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub lower: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub upper: f64,
    #[arg(long, default_value_t = 1000)]
    pub grid_points: usize,
}

impl GridArgs {
    fn grid(&self) -> Result<Grid> {
        Grid::equidistant(self.lower, self.upper, self.grid_points).map_err(as_config)
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value = "pre_rkhs")]
    pub sampler: String,
    #[arg(long, default_value_t = 2.0)]
    pub norm: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also draw this many noisy samples at uniform grid inputs.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub noise_sd: f64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset CSV with columns x,y.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2.0)]
    pub norm_bound: f64,
    #[arg(long, default_value_t = 0.5)]
    pub subgaussian: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    pub delta: Vec<f64>,
    #[arg(long, default_value = "nominal")]
    pub method: TubeMethod,
    #[arg(long, default_value_t = 0.0)]
    pub eps_tilde: f64,
    /// Function file to check the tubes against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ControlArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Nominal noise variance of the fit; defaults to the noise variance 1e-4.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub subgaussian: Option<f64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitManifest {
    pub tool_version: String,
    pub data: String,
    pub kernel: KernelSpec,
    pub method: TubeMethod,
    pub lambda: f64,
    pub norm_bound: f64,
    pub subgaussian: f64,
    pub eps_tilde: f64,
    pub outputs: Vec<FitOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub delta: f64,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_contained: Option<bool>,
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidParameter(m) => Error::Config(m),
        other => other,
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Csv { .. } => 1,
        Error::Config(_) | Error::InvalidParameter(_) => 2,
        Error::FactorizationFailure { .. } | Error::DimensionMismatch { .. } | Error::DegenerateDraw(_) => 3,
    }
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Experiment(a) => cmd_experiment(&a, false),
        Command::Sweep(a) => cmd_experiment(&a, true),
        Command::SampleFunction(a) => cmd_sample_function(&a),
        Command::FitAndBound(a) => cmd_fit_and_bound(&a),
        Command::ControlDemo(a) => cmd_control_demo(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_toml<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::Config(e.to_string()))
}

/// Resolves the experiment configuration from a preset or file plus overrides.
pub fn resolve_config(a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = match (&a.config, &a.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            ExperimentConfig::from_toml(&text)?
        }
        (None, Some(tag)) => preset(tag).ok_or_else(|| {
            Error::Config(format!("unknown preset {tag:?}; known presets: {}", PRESET_TAGS.join(", ")))
        })?,
        (None, None) => return Err(Error::Config("give a preset tag or --config".into())),
    };
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(r) = a.reps {
        cfg.n_reps = r;
    }
    if let Some(f) = a.functions {
        cfg.n_functions = f;
    }
    if let Some(d) = &a.delta {
        cfg.bounds.deltas = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_experiment(a: &ExperimentArgs, sweep_only: bool) -> Result<()> {
    let cfg = resolve_config(a)?;
    if sweep_only && cfg.sweep.is_none() {
        return Err(Error::Config(format!("{} has no sweep section", cfg.tag)));
    }
    create_dir(&a.out)?;
    let start = Instant::now();
    let jobs = a.jobs.unwrap_or_else(rayon::current_num_threads);
    let report = run_experiment_with_jobs(&cfg, jobs)?;
    let mut outputs = report.write_csvs(&a.out)?;

    let table = a.out.join("table.csv");
    let mut rows = vec![table_row(&cfg.tag, &report, TableQuantity::WidthMean), table_row(&cfg.tag, &report, TableQuantity::WidthSd)];
    if cfg.method.uses_beta() {
        rows.insert(0, table_row(&cfg.tag, &report, TableQuantity::Beta));
    }
    aggregate(&rows, &table)?;
    outputs.push(table);

    let manifest_path = a.out.join("manifest.toml");
    outputs.push(manifest_path.clone());
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: if sweep_only { "sweep" } else { "experiment" }.to_string(),
        master_seed: cfg.master_seed,
        wall_clock_seconds: a.timing.then(|| start.elapsed().as_secs_f64()),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        warnings: warnings(&report),
        config: cfg,
    };
    write_text(&manifest_path, &to_toml(&manifest)?)?;
    print_summary(&report);
    Ok(())
}

fn warnings(report: &CoverageReport) -> Vec<String> {
    let mut w = Vec::new();
    if report.factorization_failures > 0 {
        w.push(format!("{} instances failed to factorize and were excluded", report.factorization_failures));
    }
    w
}

fn print_summary(report: &CoverageReport) {
    println!("{} ({}), eps_tilde = {:.6}", report.tag, report.method.name(), report.eps_tilde);
    for a in &report.aggregates {
        let beta = a.beta.map_or("-".to_string(), |b| format!("{:.3} ± {:.3}", b.mean, b.sd));
        println!(
            "delta = {:<8} beta = {beta:<16} failures = {}/{}  functions above delta = {}  width = {:.3}",
            a.delta, a.failures, a.instances, a.functions_exceeding, a.width_mean.mean
        );
    }
    if let Some(s) = &report.sweep {
        for (scale, worst) in s.scalings.iter().zip(s.worst_function_rate()) {
            println!("scaling = {scale:.3}  worst-function failure rate = {worst:.4}");
        }
    }
}

fn cmd_sample_function(a: &SampleArgs) -> Result<()> {
    let kernel = a.kernel.spec()?;
    let grid = a.grid.grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let sampler: SamplerKind = toml::Value::String(a.sampler.clone())
        .try_into()
        .map_err(|_| Error::Config(format!("unknown sampler {:?} (expected pre_rkhs | onb)", a.sampler)))?;
    let f = match sampler {
        SamplerKind::PreRkhs => sample_pre_rkhs(kernel, &grid, a.norm, &PreRkhsSampler::default(), &mut rng),
        SamplerKind::Onb => {
            if kernel.family != KernelFamily::SquaredExponential || kernel.variance != 1.0 {
                return Err(Error::Config("ONB sampling needs --kernel se --variance 1".into()));
            }
            sample_onb(kernel.lengthscale, a.norm, &OnbSampler::default(), &mut rng)
        }
    }
    .map_err(as_config)?;
    create_dir(&a.out)?;
    write_text(&a.out.join("function.toml"), &f.to_toml()?)?;
    println!("norm = {:.12}", f.computed_norm());

    if let Some(n) = a.samples {
        if n == 0 || !(a.noise_sd >= 0.0) {
            return Err(Error::Config("--samples must be >= 1 and --noise-sd >= 0".into()));
        }
        let pick = Uniform::new(0, grid.len());
        let inputs: Vec<f64> = (0..n).map(|_| grid.points()[pick.sample(&mut rng)]).collect();
        let targets = inputs.iter().map(|&x| f.evaluate(x) + a.noise_sd * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let data = Dataset::new(inputs, targets, a.noise_sd, a.seed)?;
        data.write(&a.out.join("dataset.csv"), &a.out.join("dataset.toml"), Some(kernel))?;
    }
    Ok(())
}

fn cmd_fit_and_bound(a: &FitArgs) -> Result<()> {
    let kernel = a.kernel.spec()?;
    let grid = a.grid.grid()?;
    let (data, _) = Dataset::read(&a.data, None)?;
    let truth = match &a.truth {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(RkhsFunction::from_toml(&text)?)
        }
        None => None,
    };
    let post = fit(kernel, a.lambda, &data).map_err(as_config)?;
    create_dir(&a.out)?;
    let mut outputs = Vec::new();
    for (i, &delta) in a.delta.iter().enumerate() {
        let p = BoundParams::new(a.norm_bound, a.subgaussian, a.lambda, delta, a.eps_tilde).map_err(as_config)?;
        let tubes = evaluate_batch(&post, &p, a.method, grid.points()).map_err(as_config)?;
        let path = a.out.join(format!("tube_{i}.csv"));
        write_tube_csv(&path, &tubes)?;
        let beta = if a.method.uses_beta() {
            Some(crate::bounds::BoundTerms::compute(&post, &p, a.method)?.beta(&p).expect("beta method"))
        } else {
            None
        };
        let truth_contained = truth.as_ref().map(|f| {
            tubes.iter().all(|t| (f.evaluate(t.query) - t.mean).abs() <= t.halfwidth)
        });
        if let Some(c) = truth_contained {
            println!("delta = {delta}: truth {}", if c { "contained" } else { "NOT contained" });
        }
        outputs.push(FitOutput { delta, path: path.display().to_string(), beta, truth_contained });
    }
    let manifest = FitManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        data: a.data.display().to_string(),
        kernel,
        method: a.method,
        lambda: a.lambda,
        norm_bound: a.norm_bound,
        subgaussian: a.subgaussian,
        eps_tilde: a.eps_tilde,
        outputs,
    };
    write_text(&a.out.join("manifest.toml"), &to_toml(&manifest)?)
}

fn cmd_control_demo(a: &ControlArgs) -> Result<()> {
    let defaults = ControlConfig::default();
    let cfg = ControlConfig {
        lambda: a.lambda.unwrap_or(defaults.lambda),
        subgaussian: a.subgaussian.unwrap_or(defaults.subgaussian),
        ..defaults
    };
    let demo = run_control_demo_with(&cfg, a.seed).map_err(as_config)?;
    create_dir(&a.out)?;
    demo.write(&a.out)?;
    println!(
        "beta = {:.4}, truth {}, {:.1}% of the grid inside the a-priori box",
        demo.set.beta,
        if demo.set.contains_truth() { "contained" } else { "NOT contained" },
        100.0 * demo.set.fraction_inside_prior()
    );
    Ok(())
}
