//! Ground-truth functions with a prescribed RKHS norm.
//!
//! Two generators are provided because they produce visibly different
//! function shapes for the same kernel and norm:
//!
//! * pre-RKHS: `f = sum_n alpha_n k(x_n, .)` over distinct grid centers, with
//!   `||f||_k = sqrt(alpha^T K alpha)`;
//! * ONB: a finite combination of the orthonormal basis of the squared
//!   exponential RKHS on the real line,
//!   `e_n(x) = sqrt((2 s)^n / n!) x^n exp(-s x^2)` with `s = 1 / (2 l^2)`,
//!   so that `||f||_k` is the Euclidean norm of the coefficients.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::kernels::{Grid, KernelFamily, KernelSpec};
use crate::numerics::{dot, norm2};

const DEGENERATE_THRESHOLD: f64 = 1e-14;
const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Representation {
    PreRkhs { kernel: KernelSpec, centers: Vec<f64>, coefficients: Vec<f64> },
    Onb { kernel: KernelSpec, basis_indices: Vec<u32>, coefficients: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RkhsFunction {
    pub declared_norm: f64,
    pub representation: Representation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreRkhsSampler {
    pub n_min: usize,
    pub n_max: usize,
    /// Standard deviation of the raw coefficients before rescaling.
    pub sigma_f: f64,
}

impl Default for PreRkhsSampler {
    fn default() -> Self {
        PreRkhsSampler { n_min: 5, n_max: 200, sigma_f: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnbSampler {
    /// Only basis functions `e_0 .. e_{max_basis - 1}` are used.
    pub max_basis: usize,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for OnbSampler {
    fn default() -> Self {
        OnbSampler { max_basis: 50, n_min: 5, n_max: 50 }
    }
}

fn check_norm(norm: f64) -> Result<()> {
    if norm > 0.0 && norm.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("target RKHS norm must be > 0, got {norm}")))
    }
}

/// Draws `f = sum alpha_n k(x_n, .)` with `||f||_k = norm`; centers are distinct grid points.
pub fn sample_pre_rkhs<R: Rng + ?Sized>(
    kernel: KernelSpec,
    grid: &Grid,
    norm: f64,
    cfg: &PreRkhsSampler,
    rng: &mut R,
) -> Result<RkhsFunction> {
    check_norm(norm)?;
    kernel.validate()?;
    if !(1 <= cfg.n_min && cfg.n_min <= cfg.n_max && cfg.n_max <= grid.len()) {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= n_min <= n_max <= grid size, got {} / {} / {}",
            cfg.n_min,
            cfg.n_max,
            grid.len()
        )));
    }
    let coef_dist = Normal::new(0.0, cfg.sigma_f)
        .map_err(|e| Error::InvalidParameter(format!("sigma_f: {e}")))?;
    for _ in 0..MAX_ATTEMPTS {
        let n = rng.gen_range(cfg.n_min..=cfg.n_max);
        let centers: Vec<f64> = index::sample(rng, grid.len(), n).iter().map(|i| grid.points()[i]).collect();
        let raw: Vec<f64> = (0..n).map(|_| coef_dist.sample(rng)).collect();
        let gram = kernel.gram(&centers);
        let quad = dot(&raw, &gram.matvec(&raw)?);
        if quad <= DEGENERATE_THRESHOLD {
            continue;
        }
        let scale = norm / quad.sqrt();
        let coefficients = raw.into_iter().map(|a| a * scale).collect();
        return Ok(RkhsFunction {
            declared_norm: norm,
            representation: Representation::PreRkhs { kernel, centers, coefficients },
        });
    }
    Err(Error::DegenerateDraw(format!("alpha^T K alpha <= {DEGENERATE_THRESHOLD:e} in {MAX_ATTEMPTS} attempts")))
}

/// Draws a random combination of SE-ONB functions with coefficient norm `norm`.
pub fn sample_onb<R: Rng + ?Sized>(lengthscale: f64, norm: f64, cfg: &OnbSampler, rng: &mut R) -> Result<RkhsFunction> {
    check_norm(norm)?;
    let kernel = KernelSpec::se(lengthscale, 1.0)?;
    if !(1 <= cfg.n_min && cfg.n_min <= cfg.n_max && cfg.n_max <= cfg.max_basis) {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= n_min <= n_max <= max_basis, got {} / {} / {}",
            cfg.n_min, cfg.n_max, cfg.max_basis
        )));
    }
    for _ in 0..MAX_ATTEMPTS {
        let n = rng.gen_range(cfg.n_min..=cfg.n_max);
        let basis_indices: Vec<u32> = index::sample(rng, cfg.max_basis, n).iter().map(|i| i as u32).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let len = norm2(&raw);
        if len * len <= DEGENERATE_THRESHOLD {
            continue;
        }
        let coefficients = raw.into_iter().map(|a| a * norm / len).collect();
        return Ok(RkhsFunction {
            declared_norm: norm,
            representation: Representation::Onb { kernel, basis_indices, coefficients },
        });
    }
    Err(Error::DegenerateDraw(format!("coefficient norm vanished in {MAX_ATTEMPTS} attempts")))
}

/// `e_n(x)` of the SE kernel with exponent `s = 1 / (2 l^2)`, evaluated in log space.
pub fn onb_basis(n: u32, lengthscale: f64, x: f64) -> f64 {
    let s = 1.0 / (2.0 * lengthscale * lengthscale);
    let gauss = -s * x * x;
    if n == 0 {
        return gauss.exp();
    }
    if x == 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    let log_weight = 0.5 * (nf * (2.0 * s).ln() - ln_gamma(nf + 1.0));
    let magnitude = (log_weight + nf * x.abs().ln() + gauss).exp();
    if x < 0.0 && n % 2 == 1 {
        -magnitude
    } else {
        magnitude
    }
}

impl RkhsFunction {
    pub fn kernel(&self) -> &KernelSpec {
        match &self.representation {
            Representation::PreRkhs { kernel, .. } | Representation::Onb { kernel, .. } => kernel,
        }
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        match &self.representation {
            Representation::PreRkhs { kernel, centers, coefficients } => {
                centers.iter().zip(coefficients).map(|(&c, &a)| a * kernel.eval(c, x)).sum()
            }
            Representation::Onb { kernel, basis_indices, coefficients } => basis_indices
                .iter()
                .zip(coefficients)
                .map(|(&n, &a)| a * onb_basis(n, kernel.lengthscale, x))
                .sum(),
        }
    }

    pub fn evaluate_all(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.evaluate(x)).collect()
    }

    /// RKHS norm recomputed from the representation.
    pub fn computed_norm(&self) -> f64 {
        match &self.representation {
            Representation::PreRkhs { kernel, centers, coefficients } => {
                let gram = kernel.gram(centers);
                let ka = gram.matvec(coefficients).expect("gram matches coefficients");
                dot(coefficients, &ka).max(0.0).sqrt()
            }
            Representation::Onb { coefficients, .. } => norm2(coefficients),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: RkhsFunction = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        f.kernel().validate()?;
        if let Representation::Onb { kernel, .. } = &f.representation {
            if kernel.family != KernelFamily::SquaredExponential || kernel.variance != 1.0 {
                return Err(Error::Config("ONB functions need a variance-1 SE kernel".into()));
            }
        }
        Ok(f)
    }
}
