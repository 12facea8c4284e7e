//! Stationary kernels on the real line and the sup-distance between two of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    /// `variance * exp(-r^2 / (2 l^2))`
    #[serde(rename = "se")]
    SquaredExponential,
    /// `variance * (1 + sqrt(3) r / l) * exp(-sqrt(3) r / l)`
    #[serde(rename = "matern32")]
    Matern32,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "se",
            KernelFamily::Matern32 => "matern32",
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "se" => Ok(KernelFamily::SquaredExponential),
            "matern32" => Ok(KernelFamily::Matern32),
            other => Err(Error::Config(format!("unknown kernel family {other:?} (expected se | matern32)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscale: f64,
    pub variance: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscale: f64, variance: f64) -> Result<Self> {
        let k = KernelSpec { family, lengthscale, variance };
        k.validate()?;
        Ok(k)
    }

    pub fn se(lengthscale: f64, variance: f64) -> Result<Self> {
        Self::new(KernelFamily::SquaredExponential, lengthscale, variance)
    }

    pub fn matern32(lengthscale: f64, variance: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern32, lengthscale, variance)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::InvalidParameter(format!("lengthscale must be > 0, got {}", self.lengthscale)));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::InvalidParameter(format!("variance must be > 0, got {}", self.variance)));
        }
        Ok(())
    }

    /// `k(x, x')`. Depends on `|x - x'|` only, so it is exactly symmetric.
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let r = (x - y).abs();
        match self.family {
            KernelFamily::SquaredExponential => {
                let z = r / self.lengthscale;
                self.variance * (-0.5 * z * z).exp()
            }
            KernelFamily::Matern32 => {
                let z = 3f64.sqrt() * r / self.lengthscale;
                self.variance * (1.0 + z) * (-z).exp()
            }
        }
    }

    /// Gram matrix `(k(x_i, x_j))_{ij}`.
    pub fn gram(&self, xs: &[f64]) -> Matrix {
        let n = xs.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval(xs[i], xs[j]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// `(k(x_i, x))_i`.
    pub fn cross_vector(&self, xs: &[f64], x: f64) -> Vec<f64> {
        xs.iter().map(|&xi| self.eval(xi, x)).collect()
    }

    /// `(k(a_i, b_j))_{ij}`.
    pub fn cross_matrix(&self, a: &[f64], b: &[f64]) -> Matrix {
        Matrix::from_fn(a.len(), b.len(), |i, j| self.eval(a[i], b[j]))
    }
}

/// Ordered evaluation points on a closed interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    lower: f64,
    upper: f64,
}

impl Grid {
    pub fn new(points: Vec<f64>, lower: f64, upper: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("grid must contain at least one point".into()));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter("grid points must be strictly increasing".into()));
        }
        if points.iter().any(|&p| p < lower || p > upper) {
            return Err(Error::InvalidParameter("grid points must lie within the bounds".into()));
        }
        Ok(Grid { points, lower, upper })
    }

    /// `n` equidistant points including both endpoints.
    pub fn equidistant(lower: f64, upper: f64, n: usize) -> Result<Self> {
        if !(lower < upper) && n > 1 {
            return Err(Error::InvalidParameter(format!("empty interval [{lower}, {upper}]")));
        }
        let points = match n {
            0 => Vec::new(),
            1 => vec![lower],
            _ => {
                let step = (upper - lower) / (n - 1) as f64;
                let mut p: Vec<f64> = (0..n).map(|i| lower + step * i as f64).collect();
                p[n - 1] = upper;
                p
            }
        };
        Grid::new(points, lower, upper)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }
}

/// `max_{i,j} |k(g_i, g_j) - k2(g_i, g_j)|` over all grid pairs.
pub fn sup_distance(k: &KernelSpec, k2: &KernelSpec, grid: &Grid) -> f64 {
    let g = grid.points();
    let mut best = 0.0f64;
    for (i, &a) in g.iter().enumerate() {
        for &b in &g[..=i] {
            best = best.max((k.eval(a, b) - k2.eval(a, b)).abs());
        }
    }
    best
}
