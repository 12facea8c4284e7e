//! Exact GP regression with zero prior mean.
//!
//! With `A = K_N + lambda * I`:
//!
//! ```text
//! mu_N(x)      = k_N(x)^T A^{-1} y_N
//! sigma_N^2(x) = k(x, x) - k_N(x)^T A^{-1} k_N(x)
//! ```
//!
//! Negative variances from round-off are clamped to zero.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::numerics::{cholesky, dot, norm2, CholeskyFactor, Matrix};

/// Training inputs and noisy targets, plus how they were generated.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub noise_sd: f64,
    pub seed: u64,
}

/// Sidecar record written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub noise_sd: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_kernel: Option<KernelSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    x: f64,
    y: f64,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>, noise_sd: f64, seed: u64) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidParameter("dataset must contain at least one point".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch { expected: inputs.len(), got: targets.len() });
        }
        if !(noise_sd >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise_sd must be >= 0, got {noise_sd}")));
        }
        Ok(Dataset { inputs, targets, noise_sd, seed })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Writes `x,y` rows to `csv_path` and the metadata record to `meta_path`.
    pub fn write(&self, csv_path: &Path, meta_path: &Path, truth_kernel: Option<KernelSpec>) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path).map_err(|e| Error::csv(csv_path, e))?;
        w.write_record(["x", "y"]).map_err(|e| Error::csv(csv_path, e))?;
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            w.write_record([fmt_f64(*x), fmt_f64(*y)]).map_err(|e| Error::csv(csv_path, e))?;
        }
        w.flush().map_err(|e| Error::io(csv_path, e))?;
        let meta = DatasetMetadata { noise_sd: self.noise_sd, seed: self.seed, truth_kernel };
        let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(meta_path, text).map_err(|e| Error::io(meta_path, e))
    }

    /// Reads a dataset CSV; the metadata sidecar is optional.
    pub fn read(csv_path: &Path, meta_path: Option<&Path>) -> Result<(Self, Option<DatasetMetadata>)> {
        let mut r = csv::Reader::from_path(csv_path).map_err(|e| Error::csv(csv_path, e))?;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for row in r.deserialize::<Row>() {
            let row = row.map_err(|e| Error::csv(csv_path, e))?;
            inputs.push(row.x);
            targets.push(row.y);
        }
        let meta = match meta_path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Some(toml::from_str::<DatasetMetadata>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?)
            }
            None => None,
        };
        let (noise_sd, seed) = meta.as_ref().map_or((0.0, 0), |m| (m.noise_sd, m.seed));
        Ok((Dataset::new(inputs, targets, noise_sd, seed)?, meta))
    }
}

/// Full round-trip formatting (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone)]
pub struct GprPosterior {
    kernel: KernelSpec,
    lambda: f64,
    train_inputs: Vec<f64>,
    factor: CholeskyFactor,
    alpha: Vec<f64>,
    targets_norm: f64,
}

/// Posterior quantities for a batch of query points.
#[derive(Debug, Clone)]
pub struct QueryBatch {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `||k_N(x)||`
    pub cross_norm: Vec<f64>,
    /// `||(K_N + lambda I)^{-1} k_N(x)||`, when requested.
    pub weight_norm: Option<Vec<f64>>,
}

/// Fits the posterior for `data` under `kernel` with nominal noise variance `lambda`.
pub fn fit(kernel: KernelSpec, lambda: f64, data: &Dataset) -> Result<GprPosterior> {
    let gram = kernel.gram(&data.inputs);
    fit_with_gram(kernel, lambda, data.inputs.clone(), &gram, &data.targets)
}

/// As [`fit`], for callers that already hold the training Gram matrix.
pub fn fit_with_gram(
    kernel: KernelSpec,
    lambda: f64,
    train_inputs: Vec<f64>,
    gram: &Matrix,
    targets: &[f64],
) -> Result<GprPosterior> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
    }
    if train_inputs.is_empty() {
        return Err(Error::InvalidParameter("cannot fit on an empty dataset".into()));
    }
    if gram.rows() != train_inputs.len() || targets.len() != train_inputs.len() {
        return Err(Error::DimensionMismatch { expected: train_inputs.len(), got: targets.len().min(gram.rows()) });
    }
    let factor = cholesky(gram, lambda)?;
    let alpha = factor.solve(targets)?;
    Ok(GprPosterior { kernel, lambda, train_inputs, factor, alpha, targets_norm: norm2(targets) })
}

impl GprPosterior {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn train_inputs(&self) -> &[f64] {
        &self.train_inputs
    }

    pub fn n_train(&self) -> usize {
        self.train_inputs.len()
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// `(K_N + lambda I)^{-1} y_N`
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// `||y_N||`
    pub fn targets_norm(&self) -> f64 {
        self.targets_norm
    }

    pub fn cross_vector(&self, x: f64) -> Vec<f64> {
        self.kernel.cross_vector(&self.train_inputs, x)
    }

    pub fn mean(&self, x: f64) -> f64 {
        dot(&self.cross_vector(x), &self.alpha)
    }

    pub fn variance(&self, x: f64) -> f64 {
        let kx = self.cross_vector(x);
        let w = self.factor.solve(&kx).expect("cross vector has training length");
        (self.kernel.eval(x, x) - dot(&kx, &w)).max(0.0)
    }

    /// `(K_N + lambda I)^{-1} k_N(x)`
    pub fn cross_weights(&self, x: f64) -> Vec<f64> {
        self.factor.solve(&self.cross_vector(x)).expect("cross vector has training length")
    }

    /// Posterior quantities at `xs`.
    pub fn query(&self, xs: &[f64], with_weights: bool) -> Result<QueryBatch> {
        let cross = self.kernel.cross_matrix(&self.train_inputs, xs);
        let prior: Vec<f64> = xs.iter().map(|&x| self.kernel.eval(x, x)).collect();
        self.query_cross(cross, &prior, with_weights)
    }

    /// Posterior quantities from a precomputed `N x M` cross-kernel block
    /// (`cross[(i, j)] = k(x_i, q_j)`) and prior variances `k(q_j, q_j)`.
    pub fn query_cross(&self, mut cross: Matrix, prior_variance: &[f64], with_weights: bool) -> Result<QueryBatch> {
        let n = self.n_train();
        let m = cross.cols();
        if cross.rows() != n {
            return Err(Error::DimensionMismatch { expected: n, got: cross.rows() });
        }
        if prior_variance.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: prior_variance.len() });
        }
        let mut mean = vec![0.0; m];
        for (i, &a) in self.alpha.iter().enumerate() {
            for (mu, &k) in mean.iter_mut().zip(cross.row(i)) {
                *mu += a * k;
            }
        }
        let cross_norm = cross.column_norms();
        self.factor.forward_substitute(&mut cross)?;
        let reduction = cross.column_norms();
        let variance = prior_variance
            .iter()
            .zip(&reduction)
            .map(|(&p, &r)| (p - r * r).max(0.0))
            .collect();
        let weight_norm = if with_weights {
            self.factor.backward_substitute(&mut cross)?;
            Some(cross.column_norms())
        } else {
            None
        };
        Ok(QueryBatch { mean, variance, cross_norm, weight_norm })
    }
}
