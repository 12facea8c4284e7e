//! Learned disturbance sets for a robust controller.
//!
//! A nonlinearity `r` is sampled from the RKHS of a known kernel, learned from
//! noisy samples, and bounded pointwise by `W(x) = [mu - beta sigma, mu + beta sigma]`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::{beta_nominal, BoundParams};
use crate::error::{Error, Result};
use crate::experiments::stream_seed;
use crate::gpr::{fit, fmt_f64, Dataset};
use crate::kernels::{Grid, KernelSpec};
use crate::rkhs::{sample_pre_rkhs, PreRkhsSampler, Representation, RkhsFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    pub kernel: KernelSpec,
    pub norm_bound: f64,
    pub subgaussian: f64,
    pub lambda: f64,
    pub delta: f64,
    pub noise_sd: f64,
    pub n_samples: usize,
    pub domain: (f64, f64),
    pub grid_points: usize,
    /// A-priori bound on the disturbance.
    pub prior_box: (f64, f64),
    #[serde(default)]
    pub sampler: PreRkhsSampler,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            kernel: KernelSpec::se(0.8, 4.0).expect("valid kernel"),
            norm_bound: 2.0,
            subgaussian: 0.01,
            lambda: 1e-4,
            delta: 0.001,
            noise_sd: 0.01,
            n_samples: 100,
            domain: (-10.0, 10.0),
            grid_points: 1000,
            prior_box: (-7.0, 7.0),
            sampler: PreRkhsSampler::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSet {
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub truth: Vec<f64>,
    pub prior_box: (f64, f64),
    pub beta: f64,
}

impl DisturbanceSet {
    pub fn contains_truth(&self) -> bool {
        contained(&self.lower, &self.upper, &self.truth)
    }

    /// Fraction of grid points whose set lies strictly inside the a-priori box.
    pub fn fraction_inside_prior(&self) -> f64 {
        let (lo, hi) = self.prior_box;
        let inside = self.lower.iter().zip(&self.upper).filter(|(&l, &u)| l > lo && u < hi).count();
        inside as f64 / self.x.len() as f64
    }

    /// Writes `x2,lower,upper,truth` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["x2", "lower", "upper", "truth"]).map_err(|e| Error::csv(path, e))?;
        for i in 0..self.x.len() {
            w.write_record([fmt_f64(self.x[i]), fmt_f64(self.lower[i]), fmt_f64(self.upper[i]), fmt_f64(self.truth[i])])
                .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn contained(lower: &[f64], upper: &[f64], truth: &[f64]) -> bool {
    lower.iter().zip(upper).zip(truth).all(|((l, u), t)| l <= t && t <= u)
}

/// Recomputes the containment verdict from an exported `disturbance_sets.csv`.
pub fn verify_csv(path: &Path) -> Result<bool> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let (mut lower, mut upper, mut truth) = (Vec::new(), Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config(format!("{}: malformed row {:?}", path.display(), rec)))
        };
        lower.push(field(1)?);
        upper.push(field(2)?);
        truth.push(field(3)?);
    }
    if lower.is_empty() {
        return Err(Error::Config(format!("{}: no rows", path.display())));
    }
    Ok(contained(&lower, &upper, &truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlManifest {
    pub seed: u64,
    pub kernel: KernelSpec,
    pub norm_bound: f64,
    pub subgaussian: f64,
    pub lambda: f64,
    pub delta: f64,
    pub noise_sd: f64,
    pub n_samples: usize,
    pub beta: f64,
    pub contained: bool,
    pub fraction_inside_prior: f64,
    pub prior_box: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct ControlDemo {
    pub config: ControlConfig,
    pub seed: u64,
    pub truth: RkhsFunction,
    pub data: Dataset,
    pub set: DisturbanceSet,
}

impl ControlDemo {
    pub fn manifest(&self) -> ControlManifest {
        let c = &self.config;
        ControlManifest {
            seed: self.seed,
            kernel: c.kernel,
            norm_bound: c.norm_bound,
            subgaussian: c.subgaussian,
            lambda: c.lambda,
            delta: c.delta,
            noise_sd: c.noise_sd,
            n_samples: c.n_samples,
            beta: self.set.beta,
            contained: self.set.contains_truth(),
            fraction_inside_prior: self.set.fraction_inside_prior(),
            prior_box: c.prior_box,
        }
    }

    /// Writes `disturbance_sets.csv` and `manifest.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let csv_path = dir.join("disturbance_sets.csv");
        self.set.write_csv(&csv_path)?;
        let manifest_path = dir.join("manifest.toml");
        let text = toml::to_string(&self.manifest()).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(vec![csv_path, manifest_path])
    }
}

pub fn run_control_demo(seed: u64) -> Result<ControlDemo> {
    run_control_demo_with(&ControlConfig::default(), seed)
}

pub fn run_control_demo_with(cfg: &ControlConfig, seed: u64) -> Result<ControlDemo> {
    cfg.kernel.validate()?;
    BoundParams::new(cfg.norm_bound, cfg.subgaussian, cfg.lambda, cfg.delta, 0.0)?;
    if cfg.n_samples == 0 || !(cfg.noise_sd >= 0.0) || !(cfg.domain.0 < cfg.domain.1) {
        return Err(Error::Config("control demo needs samples, noise_sd >= 0 and a non-empty domain".into()));
    }
    let grid = Grid::equidistant(cfg.domain.0, cfg.domain.1, cfg.grid_points)?;
    let mut truth_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0, 0));
    let truth = if cfg.norm_bound == 0.0 {
        RkhsFunction {
            declared_norm: 0.0,
            representation: Representation::PreRkhs { kernel: cfg.kernel, centers: vec![0.0], coefficients: vec![0.0] },
        }
    } else {
        sample_pre_rkhs(cfg.kernel, &grid, cfg.norm_bound, &cfg.sampler, &mut truth_rng)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 1, 0));
    let inputs: Vec<f64> = (0..cfg.n_samples).map(|_| rng.gen_range(cfg.domain.0..=cfg.domain.1)).collect();
    let targets = inputs
        .iter()
        .map(|&x| truth.evaluate(x) + cfg.noise_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let data = Dataset::new(inputs, targets, cfg.noise_sd, seed)?;

    let post = fit(cfg.kernel, cfg.lambda, &data)?;
    let params = BoundParams::new(cfg.norm_bound, cfg.subgaussian, cfg.lambda, cfg.delta, 0.0)?;
    let beta = beta_nominal(&post, &params)?;
    let q = post.query(grid.points(), false)?;
    let half: Vec<f64> = q.variance.iter().map(|v| beta * v.sqrt()).collect();
    let set = DisturbanceSet {
        x: grid.points().to_vec(),
        lower: q.mean.iter().zip(&half).map(|(m, h)| m - h).collect(),
        upper: q.mean.iter().zip(&half).map(|(m, h)| m + h).collect(),
        truth: truth.evaluate_all(grid.points()),
        prior_box: cfg.prior_box,
        beta,
    };
    Ok(ControlDemo { config: cfg.clone(), seed, truth, data, set })
}
