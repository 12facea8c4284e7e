//! Monte-Carlo coverage harness.
//!
//! An experiment samples `n_functions` ground truths of RKHS norm `B`, and for
//! each of them runs `n_reps` learning instances: draw `n_train` inputs
//! uniformly (with replacement) from the evaluation grid, add Gaussian noise,
//! fit GPR with the model kernel and check whether the configured tube covers
//! the ground truth at every grid point. An instance that misses the truth at
//! any grid point counts as one failure.
//!
//! Every instance owns an RNG stream derived statelessly from
//! `(master_seed, function_id, rep_id)`, and results are reduced in
//! `(function_id, rep_id)` order, so reports do not depend on the number of
//! worker threads.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundParams, BoundTerms, PointTerms, TubeMethod};
use crate::error::{Error, Result};
use crate::gpr::{fit_with_gram, fmt_f64};
use crate::kernels::{sup_distance, Grid, KernelFamily, KernelSpec};
use crate::numerics::Matrix;
use crate::rkhs::{sample_onb, sample_pre_rkhs, OnbSampler, PreRkhsSampler, RkhsFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    PreRkhs,
    Onb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::equidistant(self.lower, self.upper, self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Number of equidistant scalings between `low` and each instance's beta.
    pub n_scalings: usize,
    pub low: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSettings {
    /// RKHS norm of the sampled truths and the `B` used in the tubes.
    pub norm_bound: f64,
    pub subgaussian: f64,
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub tag: String,
    pub truth_kernel: KernelSpec,
    pub model_kernel: KernelSpec,
    pub sampler: SamplerKind,
    #[serde(default)]
    pub pre_rkhs: PreRkhsSampler,
    #[serde(default)]
    pub onb: OnbSampler,
    pub grid: GridSpec,
    pub n_functions: usize,
    pub n_reps: usize,
    pub n_train: usize,
    pub noise_sd: f64,
    pub lambda: f64,
    pub bounds: BoundSettings,
    pub method: TubeMethod,
    /// Kernel sup-distance for robust tubes; computed on the grid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_tilde: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    pub master_seed: u64,
}

pub const PRESET_TAGS: &[&str] = &[
    "exp_1_1_a",
    "exp_1_1_b",
    "exp_1_2_a",
    "exp_1_2_b",
    "exp_1_2_c",
    "exp_1_3_a",
    "exp_1_4_a",
    "exp_1_4_b",
    "robust",
];

pub const DEFAULT_DELTAS: [f64; 4] = [0.1, 0.01, 0.001, 0.0001];

fn se(l: f64) -> KernelSpec {
    KernelSpec { family: KernelFamily::SquaredExponential, lengthscale: l, variance: 1.0 }
}

fn matern(l: f64) -> KernelSpec {
    // output variance is not given for the Matern experiments; 1 is assumed
    KernelSpec { family: KernelFamily::Matern32, lengthscale: l, variance: 1.0 }
}

fn base(tag: &str, truth: KernelSpec, model: KernelSpec, sampler: SamplerKind) -> ExperimentConfig {
    ExperimentConfig {
        tag: tag.to_string(),
        truth_kernel: truth,
        model_kernel: model,
        sampler,
        pre_rkhs: PreRkhsSampler::default(),
        onb: OnbSampler::default(),
        grid: GridSpec { lower: -1.0, upper: 1.0, points: 1000 },
        n_functions: 50,
        n_reps: 10_000,
        n_train: 50,
        noise_sd: 0.5,
        lambda: 0.5,
        bounds: BoundSettings { norm_bound: 2.0, subgaussian: 0.5, deltas: DEFAULT_DELTAS.to_vec() },
        method: TubeMethod::Nominal,
        eps_tilde: None,
        sweep: None,
        master_seed: 0,
    }
}

fn with_sweep(mut cfg: ExperimentConfig) -> ExperimentConfig {
    cfg.bounds.deltas = vec![0.01];
    cfg.sweep = Some(SweepSpec { n_scalings: 20, low: 2.0 });
    cfg
}

/// Full-size configuration for a known experiment tag.
pub fn preset(tag: &str) -> Option<ExperimentConfig> {
    use SamplerKind::*;
    let cfg = match tag {
        "exp_1_1_a" => base(tag, se(0.2), se(0.2), PreRkhs),
        "exp_1_1_b" => base(tag, matern(0.2), matern(0.2), PreRkhs),
        "exp_1_2_a" => with_sweep(base(tag, se(0.2), se(0.2), PreRkhs)),
        "exp_1_2_b" => with_sweep(base(tag, matern(0.2), matern(0.2), PreRkhs)),
        "exp_1_2_c" => with_sweep(base(tag, se(0.2), se(0.2), Onb)),
        "exp_1_3_a" => base(tag, se(0.5), se(0.2), Onb),
        "exp_1_4_a" => base(tag, se(0.2), se(0.5), PreRkhs),
        "exp_1_4_b" => base(tag, se(0.2), se(0.5), Onb),
        "robust" => {
            let mut cfg = base(tag, se(0.2), se(0.5), Onb);
            cfg.method = TubeMethod::RobustNominal;
            cfg
        }
        _ => return None,
    };
    Some(cfg)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(format!("{}: {m}", self.tag)));
        self.truth_kernel.validate()?;
        self.model_kernel.validate()?;
        if self.n_functions == 0 || self.n_reps == 0 || self.n_train == 0 {
            return cfg_err("n_functions, n_reps and n_train must be >= 1".into());
        }
        if self.grid.points < self.n_train {
            return cfg_err(format!("grid has {} points but n_train is {}", self.grid.points, self.n_train));
        }
        self.grid.build()?;
        if !(self.noise_sd >= 0.0) {
            return cfg_err(format!("noise_sd must be >= 0, got {}", self.noise_sd));
        }
        if self.bounds.deltas.is_empty() {
            return cfg_err("at least one delta is required".into());
        }
        for &d in &self.bounds.deltas {
            BoundParams::new(self.bounds.norm_bound, self.bounds.subgaussian, self.lambda, d, 0.0)?;
        }
        if !(self.bounds.norm_bound > 0.0) {
            return cfg_err("the truth norm B must be > 0".into());
        }
        if let Some(e) = self.eps_tilde {
            if !(e >= 0.0 && e.is_finite()) {
                return cfg_err(format!("eps_tilde must be >= 0, got {e}"));
            }
            if e != 0.0 && !self.method.is_robust() {
                return cfg_err(format!("eps_tilde = {e} needs a robust bound method"));
            }
        }
        if self.sampler == SamplerKind::Onb
            && (self.truth_kernel.family != KernelFamily::SquaredExponential || self.truth_kernel.variance != 1.0)
        {
            return cfg_err("ONB sampling needs a variance-1 SE truth kernel".into());
        }
        if self.sampler == SamplerKind::PreRkhs && self.pre_rkhs.n_max > self.grid.points {
            return cfg_err("pre-RKHS n_max exceeds the grid size".into());
        }
        if let Some(s) = &self.sweep {
            if s.n_scalings < 2 || !(s.low >= 0.0) {
                return cfg_err("sweep needs n_scalings >= 2 and low >= 0".into());
            }
            if self.method != TubeMethod::Nominal {
                return cfg_err("the conservatism sweep rescales the nominal tube only".into());
            }
        }
        Ok(())
    }

    /// `eps_tilde` fed to the bounds: the configured value, the grid
    /// sup-distance for robust methods, or zero.
    pub fn resolved_eps_tilde(&self, grid: &Grid) -> f64 {
        match (self.eps_tilde, self.method.is_robust()) {
            (Some(e), _) => e,
            (None, true) => sup_distance(&self.truth_kernel, &self.model_kernel, grid),
            (None, false) => 0.0,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stateless seed for stream `(a, b)` under `master`.
pub fn stream_seed(master: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ a) ^ b)
}

fn truth_seed(master: u64, function_id: usize) -> u64 {
    stream_seed(master, 0, function_id as u64)
}

fn instance_seed(master: u64, function_id: usize, rep_id: usize) -> u64 {
    stream_seed(master, 1 + function_id as u64, rep_id as u64)
}

/// Draws ground truth `function_id` of an experiment.
pub fn sample_truth(cfg: &ExperimentConfig, grid: &Grid, function_id: usize) -> Result<RkhsFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(truth_seed(cfg.master_seed, function_id));
    match cfg.sampler {
        SamplerKind::PreRkhs => sample_pre_rkhs(cfg.truth_kernel, grid, cfg.bounds.norm_bound, &cfg.pre_rkhs, &mut rng),
        SamplerKind::Onb => sample_onb(cfg.truth_kernel.lengthscale, cfg.bounds.norm_bound, &cfg.onb, &mut rng),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaOutcome {
    pub delta: f64,
    /// Log-det scaling of the tube, for beta-scaled methods.
    pub beta: Option<f64>,
    pub violated: bool,
    /// Largest `|f - mu| - halfwidth` over the grid.
    pub max_excess: f64,
    /// Mean of the half-width over the grid.
    pub width_mean: f64,
    /// Population SD of the half-width over the grid.
    pub width_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub function_id: usize,
    pub rep_id: usize,
    pub outcomes: Vec<DeltaOutcome>,
    /// Realized sweep scalings and whether each one failed.
    pub sweep: Option<Vec<(f64, bool)>>,
}

/// Training indices (into the grid) and noisy targets of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDraw {
    pub indices: Vec<usize>,
    pub targets: Vec<f64>,
}

/// Prepared experiment: grid, model Gram over the grid, ground truths.
pub struct Harness {
    cfg: ExperimentConfig,
    grid: Grid,
    grid_gram: Matrix,
    prior_variance: Vec<f64>,
    eps_tilde: f64,
    truths: Vec<RkhsFunction>,
    truth_values: Vec<Vec<f64>>,
}

impl Harness {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid.build()?;
        let truths = (0..cfg.n_functions)
            .into_par_iter()
            .map(|f| sample_truth(cfg, &grid, f))
            .collect::<Result<Vec<_>>>()?;
        Self::with_truths(cfg, truths)
    }

    /// Uses the given ground truths instead of sampling them.
    pub fn with_truths(cfg: &ExperimentConfig, truths: Vec<RkhsFunction>) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid.build()?;
        let pts = grid.points();
        let grid_gram = cfg.model_kernel.gram(pts);
        let prior_variance = pts.iter().map(|&x| cfg.model_kernel.eval(x, x)).collect();
        let eps_tilde = cfg.resolved_eps_tilde(&grid);
        let truth_values = truths.par_iter().map(|f| f.evaluate_all(pts)).collect();
        Ok(Harness { cfg: cfg.clone(), grid, grid_gram, prior_variance, eps_tilde, truths, truth_values })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn eps_tilde(&self) -> f64 {
        self.eps_tilde
    }

    pub fn truths(&self) -> &[RkhsFunction] {
        &self.truths
    }

    pub fn truth_values(&self, function_id: usize) -> &[f64] {
        &self.truth_values[function_id]
    }

    pub fn bound_params(&self, delta: f64) -> Result<BoundParams> {
        let b = &self.cfg.bounds;
        BoundParams::new(b.norm_bound, b.subgaussian, self.cfg.lambda, delta, self.eps_tilde)
    }

    pub fn draw_training(&self, function_id: usize, rep_id: usize) -> TrainingDraw {
        let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(self.cfg.master_seed, function_id, rep_id));
        let m = self.grid.len();
        let indices: Vec<usize> = (0..self.cfg.n_train).map(|_| rng.gen_range(0..m)).collect();
        let truth = &self.truth_values[function_id];
        let targets = indices
            .iter()
            .map(|&i| truth[i] + self.cfg.noise_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        TrainingDraw { indices, targets }
    }

    pub fn run_instance(&self, function_id: usize, rep_id: usize) -> Result<InstanceRecord> {
        let cfg = &self.cfg;
        let draw = self.draw_training(function_id, rep_id);
        let n = draw.indices.len();
        let m = self.grid.len();
        let train_gram = Matrix::from_fn(n, n, |i, j| self.grid_gram[(draw.indices[i], draw.indices[j])]);
        let mut cross_data = Vec::with_capacity(n * m);
        for &i in &draw.indices {
            cross_data.extend_from_slice(self.grid_gram.row(i));
        }
        let cross = Matrix::from_row_major(n, m, cross_data);
        let inputs = draw.indices.iter().map(|&i| self.grid.points()[i]).collect();
        let post = fit_with_gram(cfg.model_kernel, cfg.lambda, inputs, &train_gram, &draw.targets)?;
        let batch = post.query_cross(cross, &self.prior_variance, cfg.method != TubeMethod::Nominal)?;
        let truth = &self.truth_values[function_id];

        let p0 = self.bound_params(cfg.bounds.deltas[0])?;
        let terms = BoundTerms::compute(&post, &p0, cfg.method)?;
        let point = |j: usize| PointTerms {
            mean: batch.mean[j],
            variance: batch.variance[j],
            cross_norm: batch.cross_norm[j],
            weight_norm: batch.weight_norm.as_ref().map_or(0.0, |w| w[j]),
        };

        let mut outcomes = Vec::with_capacity(cfg.bounds.deltas.len());
        let mut halfwidth = vec![0.0; m];
        for &delta in &cfg.bounds.deltas {
            let p = p0.with_delta(delta);
            let beta = terms.beta(&p);
            let mut max_excess = f64::NEG_INFINITY;
            for (j, h) in halfwidth.iter_mut().enumerate() {
                *h = terms.halfwidth(cfg.method, &p, beta.unwrap_or(f64::NAN), &point(j));
                max_excess = max_excess.max((truth[j] - batch.mean[j]).abs() - *h);
            }
            let violated = truth.iter().zip(&batch.mean).zip(&halfwidth).any(|((f, mu), h)| (f - mu).abs() > *h);
            let (width_mean, width_sd) = mean_sd(&halfwidth);
            outcomes.push(DeltaOutcome { delta, beta, violated, max_excess, width_mean, width_sd });
        }

        let sweep = match (&cfg.sweep, outcomes[0].beta) {
            (Some(s), Some(beta)) => {
                let sd: Vec<f64> = batch.variance.iter().map(|v| v.sqrt()).collect();
                Some(
                    sweep_scalings(s, beta)
                        .into_iter()
                        .map(|scale| {
                            let failed = (0..m).any(|j| (truth[j] - batch.mean[j]).abs() > scale * sd[j]);
                            (scale, failed)
                        })
                        .collect(),
                )
            }
            _ => None,
        };
        Ok(InstanceRecord { function_id, rep_id, outcomes, sweep })
    }
}

/// `n` equidistant scalings from `low` to `beta`; the last one is `beta` exactly.
pub fn sweep_scalings(s: &SweepSpec, beta: f64) -> Vec<f64> {
    let k = s.n_scalings - 1;
    (0..s.n_scalings)
        .map(|j| if j == k { beta } else { s.low + (beta - s.low) * j as f64 / k as f64 })
        .collect()
}

/// Mean and population SD.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub sd: f64,
}

impl Stats {
    fn of(xs: &[f64]) -> Self {
        let (mean, sd) = mean_sd(xs);
        Stats { mean, sd }
    }
}

/// Per `(function, delta)` summary.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCell {
    pub function_id: usize,
    pub delta: f64,
    pub failures: usize,
    pub reps: usize,
    pub beta: Option<Stats>,
    /// Over reps: grid-mean of the half-width.
    pub width_mean: Stats,
    /// Over reps: grid-SD of the half-width.
    pub width_sd: Stats,
}

impl CoverageCell {
    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.reps as f64
    }
}

/// Per `delta` summary over all functions and reps.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaAggregate {
    pub delta: f64,
    pub instances: usize,
    pub failures: usize,
    /// Functions whose failure rate exceeds `delta`.
    pub functions_exceeding: usize,
    pub max_failure_rate: f64,
    /// Pooled over all instances.
    pub beta: Option<Stats>,
    pub width_mean: Stats,
    pub width_sd: Stats,
    /// Spread of the per-function beta means.
    pub beta_between_functions: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub delta: f64,
    /// Mean realized scaling per scaling index.
    pub scalings: Vec<f64>,
    /// `failure_rate[s][f]` for scaling index `s` and function `f`.
    pub failure_rate: Vec<Vec<f64>>,
}

impl SweepReport {
    pub fn worst_function_rate(&self) -> Vec<f64> {
        self.failure_rate.iter().map(|row| row.iter().copied().fold(0.0, f64::max)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub tag: String,
    pub method: TubeMethod,
    pub eps_tilde: f64,
    pub n_functions: usize,
    pub n_reps: usize,
    pub deltas: Vec<f64>,
    /// Indexed `[function_id][delta index]`.
    pub cells: Vec<Vec<CoverageCell>>,
    pub aggregates: Vec<DeltaAggregate>,
    pub factorization_failures: usize,
    pub sweep: Option<SweepReport>,
    /// All successful instances in `(function_id, rep_id)` order.
    pub instances: Vec<InstanceRecord>,
}

impl CoverageReport {
    pub fn aggregate_for(&self, delta: f64) -> Option<&DeltaAggregate> {
        self.aggregates.iter().find(|a| a.delta == delta)
    }

    pub fn total_failures(&self) -> usize {
        self.aggregates.iter().map(|a| a.failures).sum()
    }
}

/// Runs every instance of `cfg` on the current rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<CoverageReport> {
    let harness = Harness::new(cfg)?;
    run_with_harness(&harness)
}

/// Runs on a dedicated pool of `jobs` threads.
pub fn run_experiment_with_jobs(cfg: &ExperimentConfig, jobs: usize) -> Result<CoverageReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment(cfg))
}

/// Sweep-only entry point; the config must carry a sweep spec.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    if cfg.sweep.is_none() {
        return Err(Error::Config(format!("{}: no sweep section", cfg.tag)));
    }
    Ok(run_experiment(cfg)?.sweep.expect("sweep configured"))
}

pub fn run_with_harness(harness: &Harness) -> Result<CoverageReport> {
    let cfg = harness.config();
    let jobs: Vec<(usize, usize)> =
        (0..cfg.n_functions).flat_map(|f| (0..cfg.n_reps).map(move |r| (f, r))).collect();
    let results: Vec<Result<InstanceRecord>> =
        jobs.par_iter().map(|&(f, r)| harness.run_instance(f, r)).collect();

    let mut instances = Vec::with_capacity(results.len());
    let mut factorization_failures = 0;
    for r in results {
        match r {
            Ok(rec) => instances.push(rec),
            Err(Error::FactorizationFailure { .. }) => factorization_failures += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(summarize(cfg, harness.eps_tilde(), instances, factorization_failures))
}

fn summarize(cfg: &ExperimentConfig, eps_tilde: f64, instances: Vec<InstanceRecord>, factorization_failures: usize) -> CoverageReport {
    let nd = cfg.bounds.deltas.len();
    let mut by_function: Vec<Vec<&InstanceRecord>> = vec![Vec::new(); cfg.n_functions];
    for rec in &instances {
        by_function[rec.function_id].push(rec);
    }

    let cells: Vec<Vec<CoverageCell>> = by_function
        .iter()
        .enumerate()
        .map(|(f, recs)| {
            (0..nd)
                .map(|d| {
                    let outs: Vec<&DeltaOutcome> = recs.iter().map(|r| &r.outcomes[d]).collect();
                    let betas: Vec<f64> = outs.iter().filter_map(|o| o.beta).collect();
                    CoverageCell {
                        function_id: f,
                        delta: cfg.bounds.deltas[d],
                        failures: outs.iter().filter(|o| o.violated).count(),
                        reps: outs.len(),
                        beta: (!betas.is_empty()).then(|| Stats::of(&betas)),
                        width_mean: Stats::of(&outs.iter().map(|o| o.width_mean).collect::<Vec<_>>()),
                        width_sd: Stats::of(&outs.iter().map(|o| o.width_sd).collect::<Vec<_>>()),
                    }
                })
                .collect()
        })
        .collect();

    let aggregates = (0..nd)
        .map(|d| {
            let delta = cfg.bounds.deltas[d];
            let outs: Vec<&DeltaOutcome> = instances.iter().map(|r| &r.outcomes[d]).collect();
            let betas: Vec<f64> = outs.iter().filter_map(|o| o.beta).collect();
            let fn_cells: Vec<&CoverageCell> = cells.iter().map(|c| &c[d]).filter(|c| c.reps > 0).collect();
            let fn_beta_means: Vec<f64> = fn_cells.iter().filter_map(|c| c.beta.map(|b| b.mean)).collect();
            DeltaAggregate {
                delta,
                instances: outs.len(),
                failures: outs.iter().filter(|o| o.violated).count(),
                functions_exceeding: fn_cells.iter().filter(|c| c.failure_rate() > delta).count(),
                max_failure_rate: fn_cells.iter().map(|c| c.failure_rate()).fold(0.0, f64::max),
                beta: (!betas.is_empty()).then(|| Stats::of(&betas)),
                width_mean: Stats::of(&outs.iter().map(|o| o.width_mean).collect::<Vec<_>>()),
                width_sd: Stats::of(&outs.iter().map(|o| o.width_sd).collect::<Vec<_>>()),
                beta_between_functions: (!fn_beta_means.is_empty()).then(|| Stats::of(&fn_beta_means)),
            }
        })
        .collect();

    let sweep = cfg.sweep.map(|s| {
        let mut scalings = vec![0.0; s.n_scalings];
        let mut counted = 0usize;
        let mut failure_rate = vec![vec![0.0; cfg.n_functions]; s.n_scalings];
        for (f, recs) in by_function.iter().enumerate() {
            let mut fails = vec![0usize; s.n_scalings];
            let mut reps = 0usize;
            for rec in recs {
                if let Some(sw) = &rec.sweep {
                    reps += 1;
                    for (j, &(scale, failed)) in sw.iter().enumerate() {
                        scalings[j] += scale;
                        fails[j] += failed as usize;
                    }
                }
            }
            counted += reps;
            for j in 0..s.n_scalings {
                failure_rate[j][f] = if reps > 0 { fails[j] as f64 / reps as f64 } else { 0.0 };
            }
        }
        for v in &mut scalings {
            *v /= counted.max(1) as f64;
        }
        SweepReport { delta: cfg.bounds.deltas[0], scalings, failure_rate }
    });

    CoverageReport {
        tag: cfg.tag.clone(),
        method: cfg.method,
        eps_tilde,
        n_functions: cfg.n_functions,
        n_reps: cfg.n_reps,
        deltas: cfg.bounds.deltas.clone(),
        cells,
        aggregates,
        factorization_failures,
        sweep,
        instances,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

macro_rules! row {
    ($w:expr, $path:expr, $($field:expr),+ $(,)?) => {
        $w.write_record([$($field.to_string()),+]).map_err(|e| Error::csv($path, e))?
    };
}

impl CoverageReport {
    /// Writes `betas.csv`, `coverage.csv`, `widths.csv` and, for sweeps,
    /// `sweep.csv` into `dir`. Returns the written paths.
    pub fn write_csvs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();

        let path = dir.join("betas.csv");
        let mut w = csv_writer(&path)?;
        row!(w, &path, "function_id", "rep_id", "delta", "beta");
        for rec in &self.instances {
            for o in &rec.outcomes {
                if let Some(b) = o.beta {
                    row!(w, &path, rec.function_id, rec.rep_id, fmt_f64(o.delta), fmt_f64(b));
                }
            }
        }
        finish(w, &path)?;
        written.push(path);

        let path = dir.join("coverage.csv");
        let mut w = csv_writer(&path)?;
        row!(w, &path, "function_id", "delta", "failures", "reps");
        for fcells in &self.cells {
            for c in fcells {
                row!(w, &path, c.function_id, fmt_f64(c.delta), c.failures, c.reps);
            }
        }
        finish(w, &path)?;
        written.push(path);

        let path = dir.join("widths.csv");
        let mut w = csv_writer(&path)?;
        row!(w, &path, "function_id", "rep_id", "delta", "width_mean", "width_sd");
        for rec in &self.instances {
            for o in &rec.outcomes {
                row!(w, &path, rec.function_id, rec.rep_id, fmt_f64(o.delta), fmt_f64(o.width_mean), fmt_f64(o.width_sd));
            }
        }
        finish(w, &path)?;
        written.push(path);

        if let Some(s) = &self.sweep {
            let path = dir.join("sweep.csv");
            let mut w = csv_writer(&path)?;
            row!(w, &path, "scaling", "function_id", "failure_rate");
            for (j, rates) in s.failure_rate.iter().enumerate() {
                for (f, r) in rates.iter().enumerate() {
                    row!(w, &path, fmt_f64(s.scalings[j]), f, fmt_f64(*r));
                }
            }
            finish(w, &path)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Which statistic a summary table reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableQuantity {
    Beta,
    WidthMean,
    WidthSd,
}

impl TableQuantity {
    fn label(self) -> &'static str {
        match self {
            TableQuantity::Beta => "beta",
            TableQuantity::WidthMean => "width_mean",
            TableQuantity::WidthSd => "width_sd",
        }
    }
}

/// One table row: a label and `mean ± sd` per delta.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub cells: Vec<(f64, Option<Stats>)>,
}

pub fn table_row(label: &str, report: &CoverageReport, quantity: TableQuantity) -> TableRow {
    let cells = report
        .aggregates
        .iter()
        .map(|a| {
            let s = match quantity {
                TableQuantity::Beta => a.beta,
                TableQuantity::WidthMean => Some(a.width_mean),
                TableQuantity::WidthSd => Some(a.width_sd),
            };
            (a.delta, s)
        })
        .collect();
    TableRow { label: format!("{label} ({})", quantity.label()), cells }
}

/// Writes rows as a `row,<delta>...` table with `mean ± sd` cells (two decimals).
/// All rows must share the same deltas.
pub fn aggregate(rows: &[TableRow], path: &Path) -> Result<()> {
    let first = rows.first().ok_or_else(|| Error::InvalidParameter("no reports to aggregate".into()))?;
    let deltas: Vec<f64> = first.cells.iter().map(|c| c.0).collect();
    if rows.iter().any(|r| r.cells.iter().map(|c| c.0).ne(deltas.iter().copied())) {
        return Err(Error::InvalidParameter("table rows have different deltas".into()));
    }
    let mut w = csv_writer(path)?;
    let mut header = vec!["row".to_string()];
    header.extend(deltas.iter().map(|d| d.to_string()));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        let mut rec = vec![r.label.clone()];
        rec.extend(r.cells.iter().map(|(_, s)| match s {
            Some(s) => format!("{:.2} ± {:.2}", s.mean, s.sd),
            None => "-".to_string(),
        }));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    finish(w, path)
}
