//! Reference implementations used as test oracles. They share no code with
//! the library: dense matrices are `Vec<Vec<f64>>`, inverses come from
//! Gauss-Jordan elimination and eigenvalues from nalgebra.

#![allow(dead_code)]

pub mod props;

use gp_bounds::gpr::{fit, Dataset};
use gp_bounds::kernels::{KernelFamily, KernelSpec};
use gp_bounds::numerics::{cholesky, Matrix};
use gp_bounds::rkhs::onb_basis;
use nalgebra::{DMatrix, SymmetricEigen};

pub type Dense = Vec<Vec<f64>>;

pub fn se(l: f64, var: f64) -> impl Fn(f64, f64) -> f64 {
    move |a, b| var * (-(a - b) * (a - b) / (2.0 * l * l)).exp()
}

pub fn matern32(l: f64, var: f64) -> impl Fn(f64, f64) -> f64 {
    move |a, b| {
        let r = 3f64.sqrt() * (a - b).abs() / l;
        var * (1.0 + r) * (-r).exp()
    }
}

pub fn gram(k: &dyn Fn(f64, f64) -> f64, xs: &[f64]) -> Dense {
    xs.iter().map(|&a| xs.iter().map(|&b| k(a, b)).collect()).collect()
}

pub fn add_diag(mut a: Dense, s: f64) -> Dense {
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += s;
    }
    a
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &Dense) -> Dense {
    let n = a.len();
    let mut m: Dense = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        let piv = m[c][c];
        for v in m[c].iter_mut() {
            *v /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for j in 0..2 * n {
                        m[r][j] -= f * m[c][j];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det_lu(a: &Dense) -> f64 {
    let n = a.len();
    let mut m = a.clone();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        if p != c {
            m.swap(c, p);
            det = -det;
        }
        let piv = m[c][c];
        if piv == 0.0 {
            return 0.0;
        }
        det *= piv;
        for r in c + 1..n {
            let f = m[r][c] / piv;
            for j in c..n {
                m[r][j] -= f * m[c][j];
            }
        }
    }
    det
}

/// Laplace expansion along the first row; for tiny matrices only.
pub fn det_cofactor(a: &Dense) -> f64 {
    let n = a.len();
    if n == 1 {
        return a[0][0];
    }
    (0..n)
        .map(|j| {
            let minor: Dense = a[1..].iter().map(|r| r.iter().enumerate().filter(|(c, _)| *c != j).map(|(_, v)| *v).collect()).collect();
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * a[0][j] * det_cofactor(&minor)
        })
        .sum()
}

pub fn matvec(a: &Dense, v: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn eigenvalues(a: &Dense) -> Vec<f64> {
    let n = a.len();
    let m = DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Posterior mean and variance through an explicit inverse.
pub struct NaivePosterior<'a> {
    pub k: &'a dyn Fn(f64, f64) -> f64,
    pub xs: Vec<f64>,
    pub inv: Dense,
    pub alpha: Vec<f64>,
    pub y_norm: f64,
    pub lambda: f64,
}

impl<'a> NaivePosterior<'a> {
    pub fn new(k: &'a dyn Fn(f64, f64) -> f64, xs: &[f64], ys: &[f64], lambda: f64) -> Self {
        let inv = inverse(&add_diag(gram(k, xs), lambda));
        let alpha = matvec(&inv, ys);
        NaivePosterior { k, xs: xs.to_vec(), inv, alpha, y_norm: norm(ys), lambda }
    }

    pub fn kvec(&self, x: f64) -> Vec<f64> {
        self.xs.iter().map(|&a| (self.k)(a, x)).collect()
    }

    pub fn mean(&self, x: f64) -> f64 {
        dot(&self.kvec(x), &self.alpha)
    }

    pub fn variance(&self, x: f64) -> f64 {
        let kx = self.kvec(x);
        ((self.k)(x, x) - dot(&kx, &matvec(&self.inv, &kx))).max(0.0)
    }

    pub fn weights(&self, x: f64) -> Vec<f64> {
        matvec(&self.inv, &self.kvec(x))
    }

    /// Largest eigenvalue of the explicit inverse.
    pub fn inv_norm(&self) -> f64 {
        *eigenvalues(&self.inv).last().unwrap()
    }

    pub fn n(&self) -> f64 {
        self.xs.len() as f64
    }

    pub fn beta(&self, b: f64, r: f64, delta: f64, eps: f64) -> f64 {
        let shift = (self.lambda + self.n() * eps).max(1.0);
        let det = det_lu(&add_diag(gram(self.k, &self.xs), shift));
        b + r * (det.ln() - 2.0 * delta.ln()).sqrt()
    }

    pub fn noise_factor(&self, delta: f64) -> f64 {
        let n = self.n();
        let l = -delta.ln();
        (n + 2.0 * (n * l).sqrt() + 2.0 * l).sqrt()
    }

    pub fn c(&self, x: f64, eps: f64) -> f64 {
        let inv = self.inv_norm();
        let root = self.n().sqrt() * eps;
        (1.0 / self.lambda + inv) * (norm(&self.kvec(x)) + root) + inv * root
    }

    pub fn s2(&self, x: f64, eps: f64) -> f64 {
        let root = self.n().sqrt() * eps;
        eps + root * norm(&self.weights(x)) + (root + norm(&self.kvec(x))) * self.c(x, eps)
    }

    pub fn robust_halfwidth(&self, x: f64, b: f64, r: f64, delta: f64, eps: f64) -> f64 {
        self.beta(b, r, delta, eps) * (self.variance(x) + self.s2(x, eps)).sqrt() + self.c(x, eps) * self.y_norm
    }
}

/// SE orthonormal basis by the ratio recursion `e_n = e_{n-1} sqrt(2s/n) x`.
pub fn onb_recursive(n_max: usize, l: f64, x: f64) -> Vec<f64> {
    let s = 1.0 / (2.0 * l * l);
    let mut e = vec![(-s * x * x).exp()];
    for n in 1..n_max {
        let prev = e[n - 1];
        e.push(prev * (2.0 * s / n as f64).sqrt() * x);
    }
    e
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Deterministic pseudo-random numbers for oracle inputs (xorshift).
pub struct XorShift(pub u64);

impl XorShift {
    pub fn uniform(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}

fn reference_kernel(spec: &KernelSpec) -> Box<dyn Fn(f64, f64) -> f64> {
    match spec.family {
        KernelFamily::SquaredExponential => Box::new(se(spec.lengthscale, spec.variance)),
        KernelFamily::Matern32 => Box::new(matern32(spec.lengthscale, spec.variance)),
    }
}

/// Largest relative deviation of the library posterior from the naive one,
/// over several random datasets, kernels and noise levels.
pub fn gpr_oracle_error() -> f64 {
    let mut rng = XorShift(0x5eed_1234_abcd);
    let mut worst = 0.0f64;
    let specs = [KernelSpec::se(0.2, 1.0).unwrap(), KernelSpec::matern32(0.3, 1.5).unwrap(), KernelSpec::se(0.8, 4.0).unwrap()];
    for spec in specs {
        let k = reference_kernel(&spec);
        for &(n, lambda) in &[(5usize, 0.5), (20, 0.01), (50, 0.5)] {
            let xs: Vec<f64> = (0..n).map(|_| rng.range(-1.0, 1.0)).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.range(-2.0, 2.0)).collect();
            let naive = NaivePosterior::new(&*k, &xs, &ys, lambda);
            let post = fit(spec, lambda, &Dataset::new(xs, ys, 0.0, 0).unwrap()).unwrap();
            for _ in 0..25 {
                let x = rng.range(-1.2, 1.2);
                let m = naive.mean(x);
                let v = naive.variance(x);
                worst = worst.max((post.mean(x) - m).abs() / m.abs().max(1.0));
                worst = worst.max((post.variance(x) - v).abs() / spec.variance);
            }
        }
    }
    worst
}

/// Largest relative deviation of the determinant implied by the Cholesky
/// log-determinant from the elimination determinant for N <= 10. Also cross-checks the
/// elimination against cofactor expansion for N <= 5.
pub fn logdet_oracle_error() -> f64 {
    let mut rng = XorShift(0xdead_beef_0042);
    let mut worst = 0.0f64;
    for n in 1..=10usize {
        for &(l, shift) in &[(0.2, 0.5), (0.5, 1.0), (1.0, 0.01)] {
            let xs: Vec<f64> = (0..n).map(|_| rng.range(-1.0, 1.0)).collect();
            let a = add_diag(gram(&se(l, 1.0), &xs), shift);
            let det = det_lu(&a);
            if n <= 5 {
                assert!(rel_err(det, det_cofactor(&a)) < 1e-10, "elimination vs cofactor at n = {n}");
            }
            let spec = KernelSpec::se(l, 1.0).unwrap();
            let ld = cholesky(&spec.gram(&xs), shift).unwrap().logdet();
            worst = worst.max(rel_err(ld.exp(), det));
        }
    }
    worst
}

/// Largest relative deviation of `inv_spectral_norm` from nalgebra's eigendecomposition.
pub fn inv_norm_oracle_error() -> f64 {
    let mut rng = XorShift(0x0123_4567_89ab);
    let mut worst = 0.0f64;
    for &(n, l, lambda) in &[(5usize, 0.2, 0.5), (20, 0.5, 0.5), (50, 0.5, 0.5), (50, 0.2, 0.01), (30, 0.8, 1e-3)] {
        let xs: Vec<f64> = (0..n).map(|_| rng.range(-1.0, 1.0)).collect();
        let a = add_diag(gram(&se(l, 1.0), &xs), lambda);
        let expected = 1.0 / eigenvalues(&a)[0];
        let f = cholesky(&Matrix::from_fn(n, n, |i, j| a[i][j]), 0.0).unwrap();
        worst = worst.max(rel_err(f.inv_spectral_norm(), expected));
    }
    worst
}

/// Largest `|sum_{n<50} e_n(x) e_n(x') - k(x, x')|` over a 100-point subgrid
/// of [-1, 1], with the library basis. Also returns the deviation of the
/// library basis from the recursive one.
pub fn onb_expansion_error(l: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..100).map(|i| -1.0 + 2.0 * i as f64 / 99.0).collect();
    let k = se(l, 1.0);
    let lib: Vec<Vec<f64>> = xs.iter().map(|&x| (0..50).map(|n| onb_basis(n, l, x)).collect()).collect();
    let mut basis_dev = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        for (a, b) in lib[i].iter().zip(onb_recursive(50, l, x)) {
            basis_dev = basis_dev.max((a - b).abs() / b.abs().max(1e-300).max(1e-12));
        }
    }
    let mut worst = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in xs.iter().enumerate() {
            worst = worst.max((dot(&lib[i], &lib[j]) - k(x, y)).abs());
        }
    }
    (worst, basis_dev)
}
