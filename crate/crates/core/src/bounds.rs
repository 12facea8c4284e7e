//! Frequentist tube half-widths around the GPR posterior mean.
//!
//! Four tubes are available, each holding with probability at least
//! `1 - delta` over the noise:
//!
//! * [`TubeMethod::Nominal`]: `beta_N * sigma_N(x)` with
//!   `beta_N = B + R * sqrt(log det(K_N + max(1, lambda) I) - 2 log delta)`.
//!   Valid for conditionally R-subgaussian noise and adaptively chosen inputs.
//! * [`TubeMethod::Independent`]: `B * sigma_N(x) + eta_N(x)` for fixed inputs
//!   and independent R-subgaussian noise; no log-determinant needed.
//! * [`TubeMethod::RobustNominal`]: the nominal tube widened to cover ground
//!   truths from the RKHS of a different kernel `k~` with
//!   `sup |k - k~| <= eps_tilde`.
//! * [`TubeMethod::RobustIndependent`]: the same widening applied to the
//!   independent-noise tube.
//!
//! The robust tubes use `C_N(x)` and `S_N^2(x)`:
//!
//! ```text
//! C_N(x)   = (1/lambda + ||A^{-1}||) (||k_N(x)|| + sqrt(N) eps)
//!            + ||A^{-1}|| sqrt(N) eps
//! S_N^2(x) = eps + sqrt(N) eps ||A^{-1} k_N(x)|| + (sqrt(N) eps + ||k_N(x)||) C_N(x)
//! ```
//!
//! where `A = K_N + lambda I`, vector norms are Euclidean and matrix norms are
//! spectral. Note that the robust tubes do not collapse to the nominal ones
//! at `eps = 0`: the `C_N` terms stay positive wherever `k_N(x) != 0`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpr::{fmt_f64, GprPosterior};
use crate::numerics::{cholesky, norm2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// `B` with `||f||_k <= B`.
    pub norm_bound: f64,
    /// Subgaussian constant `R` of the noise.
    pub subgaussian: f64,
    /// Nominal noise variance used by the regression.
    pub lambda: f64,
    /// Confidence level; the tube fails with probability at most `delta`.
    pub delta: f64,
    /// Kernel sup-distance; zero when the kernel is correctly specified.
    #[serde(default)]
    pub eps_tilde: f64,
}

impl BoundParams {
    pub fn new(norm_bound: f64, subgaussian: f64, lambda: f64, delta: f64, eps_tilde: f64) -> Result<Self> {
        let p = BoundParams { norm_bound, subgaussian, lambda, delta, eps_tilde };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidParameter(format!("{what} out of range: {v}")));
        if !(self.norm_bound >= 0.0 && self.norm_bound.is_finite()) {
            return bad("norm bound B", self.norm_bound);
        }
        if !(self.subgaussian >= 0.0 && self.subgaussian.is_finite()) {
            return bad("subgaussian constant R", self.subgaussian);
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda", self.lambda);
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta", self.delta);
        }
        if !(self.eps_tilde >= 0.0 && self.eps_tilde.is_finite()) {
            return bad("eps_tilde", self.eps_tilde);
        }
        Ok(())
    }

    pub fn with_delta(self, delta: f64) -> Self {
        BoundParams { delta, ..self }
    }

    pub fn with_eps_tilde(self, eps_tilde: f64) -> Self {
        BoundParams { eps_tilde, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TubeMethod {
    Nominal,
    Independent,
    RobustNominal,
    RobustIndependent,
}

impl TubeMethod {
    pub fn name(self) -> &'static str {
        match self {
            TubeMethod::Nominal => "nominal",
            TubeMethod::Independent => "independent",
            TubeMethod::RobustNominal => "robust_nominal",
            TubeMethod::RobustIndependent => "robust_independent",
        }
    }

    pub fn is_robust(self) -> bool {
        matches!(self, TubeMethod::RobustNominal | TubeMethod::RobustIndependent)
    }

    /// Whether the tube is scaled by the log-det based `beta`.
    pub fn uses_beta(self) -> bool {
        matches!(self, TubeMethod::Nominal | TubeMethod::RobustNominal)
    }

    fn needs_weights(self) -> bool {
        !matches!(self, TubeMethod::Nominal)
    }
}

impl std::str::FromStr for TubeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal" => Ok(TubeMethod::Nominal),
            "independent" => Ok(TubeMethod::Independent),
            "robust_nominal" | "robust" => Ok(TubeMethod::RobustNominal),
            "robust_independent" => Ok(TubeMethod::RobustIndependent),
            other => Err(Error::Config(format!("unknown bound method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeEvaluation {
    pub query: f64,
    pub mean: f64,
    pub halfwidth: f64,
    pub method: TubeMethod,
}

/// Shift of the log-determinant inside `beta`: `max(1, lambda + N * eps)`.
pub fn beta_shift(lambda: f64, n: usize, eps_tilde: f64) -> f64 {
    (lambda + n as f64 * eps_tilde).max(1.0)
}

/// `B + R * sqrt(logdet - 2 log delta)`.
pub fn beta_from_logdet(p: &BoundParams, logdet: f64) -> f64 {
    p.norm_bound + p.subgaussian * (logdet - 2.0 * p.delta.ln()).max(0.0).sqrt()
}

/// `sqrt(N + 2 sqrt(N) sqrt(log(1/delta)) + 2 log(1/delta))`, the high-probability
/// bound on `||eps_N|| / R`.
pub fn noise_norm_factor(n: usize, delta: f64) -> f64 {
    let n = n as f64;
    let l = (1.0 / delta).ln();
    (n + 2.0 * n.sqrt() * l.sqrt() + 2.0 * l).sqrt()
}

/// `C_N(x)` from its scalar ingredients.
pub fn robust_c_value(lambda: f64, inv_norm: f64, cross_norm: f64, n: usize, eps_tilde: f64) -> f64 {
    let se = (n as f64).sqrt() * eps_tilde;
    (1.0 / lambda + inv_norm) * (cross_norm + se) + inv_norm * se
}

/// `S_N^2(x)` from its scalar ingredients.
pub fn robust_s2_value(eps_tilde: f64, n: usize, weight_norm: f64, cross_norm: f64, c: f64) -> f64 {
    let se = (n as f64).sqrt() * eps_tilde;
    eps_tilde + se * weight_norm + (se + cross_norm) * c
}

/// Per-posterior quantities shared by every query point and every `delta`.
#[derive(Debug, Clone, Copy)]
pub struct BoundTerms {
    pub n: usize,
    pub lambda: f64,
    pub targets_norm: f64,
    /// `log det(K_N + max(1, lambda + N eps) I)`; present for beta-scaled methods.
    pub logdet: Option<f64>,
    /// `||(K_N + lambda I)^{-1}||`; present for robust methods.
    pub inv_norm: Option<f64>,
}

/// Per-query quantities.
#[derive(Debug, Clone, Copy)]
pub struct PointTerms {
    pub mean: f64,
    pub variance: f64,
    pub cross_norm: f64,
    pub weight_norm: f64,
}

fn check_params(post: &GprPosterior, p: &BoundParams, method: TubeMethod) -> Result<()> {
    p.validate()?;
    if p.lambda != post.lambda() {
        return Err(Error::InvalidParameter(format!(
            "bound lambda {} differs from the posterior's {}",
            p.lambda,
            post.lambda()
        )));
    }
    if !method.is_robust() && p.eps_tilde != 0.0 {
        return Err(Error::InvalidParameter(format!(
            "{} tube requires eps_tilde = 0 (got {}); use a robust method",
            method.name(),
            p.eps_tilde
        )));
    }
    Ok(())
}

/// `log det(K_N + max(1, lambda + N eps) I)` for the posterior's training set.
pub fn beta_logdet(post: &GprPosterior, p: &BoundParams) -> Result<f64> {
    let shift = beta_shift(p.lambda, post.n_train(), p.eps_tilde);
    if shift == post.lambda() {
        return Ok(post.factor().logdet());
    }
    let gram = post.kernel().gram(post.train_inputs());
    Ok(cholesky(&gram, shift)?.logdet())
}

impl BoundTerms {
    pub fn compute(post: &GprPosterior, p: &BoundParams, method: TubeMethod) -> Result<Self> {
        check_params(post, p, method)?;
        let logdet = if method.uses_beta() { Some(beta_logdet(post, p)?) } else { None };
        let inv_norm = if method.is_robust() { Some(post.factor().inv_spectral_norm()) } else { None };
        Ok(BoundTerms { n: post.n_train(), lambda: post.lambda(), targets_norm: post.targets_norm(), logdet, inv_norm })
    }

    pub fn beta(&self, p: &BoundParams) -> Option<f64> {
        self.logdet.map(|ld| beta_from_logdet(p, ld))
    }

    /// Half-width of `method`'s tube at one query. `beta` must come from
    /// [`BoundTerms::beta`] for beta-scaled methods and is ignored otherwise.
    pub fn halfwidth(&self, method: TubeMethod, p: &BoundParams, beta: f64, q: &PointTerms) -> f64 {
        match method {
            TubeMethod::Nominal => beta * q.variance.sqrt(),
            TubeMethod::Independent => {
                p.norm_bound * q.variance.sqrt()
                    + p.subgaussian * q.weight_norm * noise_norm_factor(self.n, p.delta)
            }
            TubeMethod::RobustNominal | TubeMethod::RobustIndependent => {
                let inv = self.inv_norm.expect("robust terms carry the inverse norm");
                let c = robust_c_value(self.lambda, inv, q.cross_norm, self.n, p.eps_tilde);
                let s2 = robust_s2_value(p.eps_tilde, self.n, q.weight_norm, q.cross_norm, c);
                let spread = (q.variance + s2).sqrt();
                let offset = c * self.targets_norm;
                if method == TubeMethod::RobustNominal {
                    beta * spread + offset
                } else {
                    let eta = p.subgaussian * (q.weight_norm + c) * noise_norm_factor(self.n, p.delta);
                    p.norm_bound * spread + offset + eta
                }
            }
        }
    }
}

fn point_terms(post: &GprPosterior, x: f64) -> PointTerms {
    let kx = post.cross_vector(x);
    let w = post.factor().solve(&kx).expect("cross vector has training length");
    let variance = (post.kernel().eval(x, x) - crate::numerics::dot(&kx, &w)).max(0.0);
    PointTerms { mean: post.mean(x), variance, cross_norm: norm2(&kx), weight_norm: norm2(&w) }
}

/// Tube at `x` for any method.
pub fn evaluate(post: &GprPosterior, p: &BoundParams, method: TubeMethod, x: f64) -> Result<TubeEvaluation> {
    let terms = BoundTerms::compute(post, p, method)?;
    let q = point_terms(post, x);
    let beta = terms.beta(p).unwrap_or(f64::NAN);
    Ok(TubeEvaluation { query: x, mean: q.mean, halfwidth: terms.halfwidth(method, p, beta, &q), method })
}

/// Tube at every point of `xs`, sharing the per-posterior work.
pub fn evaluate_batch(post: &GprPosterior, p: &BoundParams, method: TubeMethod, xs: &[f64]) -> Result<Vec<TubeEvaluation>> {
    let terms = BoundTerms::compute(post, p, method)?;
    let batch = post.query(xs, method.needs_weights())?;
    let beta = terms.beta(p).unwrap_or(f64::NAN);
    Ok(xs
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let q = PointTerms {
                mean: batch.mean[j],
                variance: batch.variance[j],
                cross_norm: batch.cross_norm[j],
                weight_norm: batch.weight_norm.as_ref().map_or(0.0, |w| w[j]),
            };
            TubeEvaluation { query: x, mean: q.mean, halfwidth: terms.halfwidth(method, p, beta, &q), method }
        })
        .collect())
}

/// `beta_N(delta, B, R, lambda + N eps)`; with `eps = 0` this is the nominal scaling.
pub fn beta_nominal(post: &GprPosterior, p: &BoundParams) -> Result<f64> {
    p.validate()?;
    Ok(beta_from_logdet(p, beta_logdet(post, p)?))
}

pub fn nominal_halfwidth(post: &GprPosterior, p: &BoundParams, x: f64) -> Result<TubeEvaluation> {
    evaluate(post, p, TubeMethod::Nominal, x)
}

/// `eta_N(x) = R ||A^{-1} k_N(x)|| * noise_norm_factor(N, delta)`.
pub fn eta_independent(post: &GprPosterior, p: &BoundParams, x: f64) -> Result<f64> {
    check_params(post, p, TubeMethod::Independent)?;
    let w = post.cross_weights(x);
    Ok(p.subgaussian * norm2(&w) * noise_norm_factor(post.n_train(), p.delta))
}

/// `B sigma_N(x) + eta_N(x)`.
pub fn independent_halfwidth(post: &GprPosterior, p: &BoundParams, x: f64) -> Result<TubeEvaluation> {
    evaluate(post, p, TubeMethod::Independent, x)
}

pub fn robust_c(post: &GprPosterior, p: &BoundParams, x: f64) -> Result<f64> {
    check_params(post, p, TubeMethod::RobustNominal)?;
    let inv = post.factor().inv_spectral_norm();
    Ok(robust_c_value(post.lambda(), inv, norm2(&post.cross_vector(x)), post.n_train(), p.eps_tilde))
}

pub fn robust_s2(post: &GprPosterior, p: &BoundParams, x: f64) -> Result<f64> {
    let c = robust_c(post, p, x)?;
    let q = point_terms(post, x);
    Ok(robust_s2_value(p.eps_tilde, post.n_train(), q.weight_norm, q.cross_norm, c))
}

pub fn robust_halfwidth(post: &GprPosterior, p: &BoundParams, x: f64) -> Result<TubeEvaluation> {
    evaluate(post, p, TubeMethod::RobustNominal, x)
}

pub fn robust_independent_halfwidth(post: &GprPosterior, p: &BoundParams, x: f64) -> Result<TubeEvaluation> {
    evaluate(post, p, TubeMethod::RobustIndependent, x)
}

/// Writes `x,mean,halfwidth,method` rows.
pub fn write_tube_csv(path: &Path, tubes: &[TubeEvaluation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["x", "mean", "halfwidth", "method"]).map_err(|e| Error::csv(path, e))?;
    for t in tubes {
        w.write_record([fmt_f64(t.query), fmt_f64(t.mean), fmt_f64(t.halfwidth), t.method.name().to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
