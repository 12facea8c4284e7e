//! Property checks shared by the property suite and the acceptance harness.

use gp_bounds::bounds::{beta_nominal, eta_independent, evaluate, BoundParams, TubeMethod};
use gp_bounds::gpr::{fit, Dataset, GprPosterior};
use gp_bounds::kernels::{sup_distance, Grid, KernelFamily, KernelSpec};
use gp_bounds::numerics::cholesky;
use gp_bounds::rkhs::{sample_onb, sample_pre_rkhs, OnbSampler, PreRkhsSampler, Representation};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eigenvalues;

pub type Property = fn(u32) -> Result<(), String>;

pub const ALL: &[(&str, Property)] = &[
    ("gram matrices are PSD", gram_psd),
    ("sup-distance is a metric on kernels", sup_distance_metric),
    ("beta is non-decreasing in N", beta_monotone_in_n),
    ("beta is non-increasing in delta", beta_monotone_in_delta),
    ("posterior variance is non-increasing in N", variance_monotone_in_n),
    ("posterior is invariant to data order", permutation_invariance),
    ("tubes are nested in delta", tube_nesting),
    ("robust tubes dominate their nominal counterparts", robust_dominance),
    ("robust tubes are non-decreasing in eps_tilde", eps_monotonicity),
    ("eta scales linearly with R", eta_linear_in_r),
    ("R = 0 collapses the nominal tube to B sigma", zero_noise_tube),
    ("log-determinant grows with N", logdet_monotone),
    ("pre-RKHS samples have the requested norm", pre_rkhs_norm),
    ("ONB samples have the requested norm", onb_norm),
];

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(Config { cases, failure_persistence: None, ..Config::default() }, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn check<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn kernel() -> impl Strategy<Value = KernelSpec> {
    (prop_oneof![Just(KernelFamily::SquaredExponential), Just(KernelFamily::Matern32)], 0.1f64..1.0, 0.2f64..4.0)
        .prop_map(|(f, l, v)| KernelSpec::new(f, l, v).unwrap())
}

/// Kernel, lambda, inputs, targets and query points.
fn problem(max_n: usize) -> impl Strategy<Value = (KernelSpec, f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (kernel(), 0.01f64..2.0, 1..max_n).prop_flat_map(|(k, lambda, n)| {
        (
            Just(k),
            Just(lambda),
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(-1.5f64..1.5, 1..6),
        )
    })
}

fn posterior(k: KernelSpec, lambda: f64, xs: &[f64], ys: &[f64]) -> GprPosterior {
    fit(k, lambda, &Dataset::new(xs.to_vec(), ys.to_vec(), 0.0, 0).unwrap()).unwrap()
}

const ALL_METHODS: [TubeMethod; 4] =
    [TubeMethod::Nominal, TubeMethod::Independent, TubeMethod::RobustNominal, TubeMethod::RobustIndependent];

fn halfwidth(post: &GprPosterior, p: &BoundParams, m: TubeMethod, x: f64) -> f64 {
    evaluate(post, p, m, x).unwrap().halfwidth
}

pub fn gram_psd(cases: u32) -> Result<(), String> {
    check(cases, (kernel(), prop::collection::vec(-2.0f64..2.0, 1..15)), |(k, xs)| {
        let g = k.gram(&xs);
        let dense: Vec<Vec<f64>> = (0..xs.len()).map(|i| g.row(i).to_vec()).collect();
        let min = eigenvalues(&dense)[0];
        prop_assert!(min >= -1e-10 * xs.len() as f64 * k.variance, "min eigenvalue {min}");
        Ok(())
    })
}

pub fn sup_distance_metric(cases: u32) -> Result<(), String> {
    let grid = Grid::equidistant(-1.0, 1.0, 40).unwrap();
    check(cases, (kernel(), kernel(), kernel()), move |(a, b, c)| {
        let ab = sup_distance(&a, &b, &grid);
        prop_assert_eq!(ab, sup_distance(&b, &a, &grid));
        prop_assert_eq!(sup_distance(&a, &a, &grid), 0.0);
        prop_assert!(sup_distance(&a, &c, &grid) <= ab + sup_distance(&b, &c, &grid) + 1e-15);
        Ok(())
    })
}

pub fn beta_monotone_in_n(cases: u32) -> Result<(), String> {
    check(cases, (problem(20), -1.0f64..1.0, 0.0f64..0.5, 1e-4f64..0.5), |((k, lambda, xs, ys, _), extra, eps, delta)| {
        let p = BoundParams::new(2.0, 0.5, lambda, delta, eps).unwrap();
        let small = beta_nominal(&posterior(k, lambda, &xs, &ys), &p).unwrap();
        let mut xs2 = xs.clone();
        xs2.push(extra);
        let mut ys2 = ys.clone();
        ys2.push(0.0);
        let large = beta_nominal(&posterior(k, lambda, &xs2, &ys2), &p).unwrap();
        prop_assert!(large >= small - 1e-12, "{large} < {small}");
        Ok(())
    })
}

pub fn beta_monotone_in_delta(cases: u32) -> Result<(), String> {
    check(cases, (problem(20), 1e-6f64..0.99, 1e-6f64..0.99), |((k, lambda, xs, ys, _), d1, d2)| {
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let post = posterior(k, lambda, &xs, &ys);
        let p = BoundParams::new(2.0, 0.5, lambda, lo, 0.0).unwrap();
        let b_lo = beta_nominal(&post, &p).unwrap();
        let b_hi = beta_nominal(&post, &p.with_delta(hi)).unwrap();
        prop_assert!(b_lo >= b_hi);
        Ok(())
    })
}

pub fn variance_monotone_in_n(cases: u32) -> Result<(), String> {
    check(cases, (problem(20), -1.0f64..1.0, -3.0f64..3.0), |((k, lambda, xs, ys, qs), x_new, y_new)| {
        let before = posterior(k, lambda, &xs, &ys);
        let mut xs2 = xs.clone();
        xs2.push(x_new);
        let mut ys2 = ys.clone();
        ys2.push(y_new);
        let after = posterior(k, lambda, &xs2, &ys2);
        for q in qs {
            let (v0, v1) = (before.variance(q), after.variance(q));
            prop_assert!(v1 <= v0 + 1e-9, "variance grew from {v0} to {v1} at {q}");
            prop_assert!((0.0..=k.variance + 1e-12).contains(&v1));
        }
        Ok(())
    })
}

pub fn permutation_invariance(cases: u32) -> Result<(), String> {
    check(cases, (problem(20), any::<usize>()), |((k, lambda, xs, ys, qs), rot)| {
        let a = posterior(k, lambda, &xs, &ys);
        let mut idx: Vec<usize> = (0..xs.len()).rev().collect();
        idx.rotate_left(rot % xs.len());
        let xs2: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
        let ys2: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
        let b = posterior(k, lambda, &xs2, &ys2);
        let scale = 1.0 + ys.iter().fold(0.0f64, |m, y| m.max(y.abs())) / lambda;
        for q in qs {
            prop_assert!((a.mean(q) - b.mean(q)).abs() <= 1e-9 * scale);
            prop_assert!((a.variance(q) - b.variance(q)).abs() <= 1e-9 * k.variance);
        }
        Ok(())
    })
}

pub fn tube_nesting(cases: u32) -> Result<(), String> {
    check(cases, (problem(15), 1e-6f64..0.99, 1e-6f64..0.99, 0.0f64..0.3), |((k, lambda, xs, ys, qs), d1, d2, eps)| {
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let post = posterior(k, lambda, &xs, &ys);
        for m in ALL_METHODS {
            let e = if m.is_robust() { eps } else { 0.0 };
            let p = BoundParams::new(2.0, 0.5, lambda, lo, e).unwrap();
            for &q in &qs {
                let wide = halfwidth(&post, &p, m, q);
                let narrow = halfwidth(&post, &p.with_delta(hi), m, q);
                prop_assert!(wide >= narrow * (1.0 - 1e-12), "{}: {wide} < {narrow}", m.name());
            }
        }
        Ok(())
    })
}

pub fn robust_dominance(cases: u32) -> Result<(), String> {
    check(cases, (problem(15), 1e-4f64..0.5, 0.0f64..0.3), |((k, lambda, xs, ys, qs), delta, eps)| {
        let post = posterior(k, lambda, &xs, &ys);
        let nominal = BoundParams::new(2.0, 0.5, lambda, delta, 0.0).unwrap();
        let robust = nominal.with_eps_tilde(eps);
        for &q in &qs {
            let nom = halfwidth(&post, &nominal, TubeMethod::Nominal, q);
            prop_assert!(halfwidth(&post, &robust, TubeMethod::RobustNominal, q) >= nom * (1.0 - 1e-12));
            let ind = halfwidth(&post, &nominal, TubeMethod::Independent, q);
            prop_assert!(halfwidth(&post, &robust, TubeMethod::RobustIndependent, q) >= ind * (1.0 - 1e-12));
        }
        Ok(())
    })
}

pub fn eps_monotonicity(cases: u32) -> Result<(), String> {
    check(cases, (problem(15), 0.0f64..0.5, 0.0f64..0.5), |((k, lambda, xs, ys, qs), e1, e2)| {
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        let post = posterior(k, lambda, &xs, &ys);
        let p = BoundParams::new(2.0, 0.5, lambda, 0.01, lo).unwrap();
        for m in [TubeMethod::RobustNominal, TubeMethod::RobustIndependent] {
            for &q in &qs {
                let a = halfwidth(&post, &p, m, q);
                let b = halfwidth(&post, &p.with_eps_tilde(hi), m, q);
                prop_assert!(b >= a * (1.0 - 1e-12), "{}: {b} < {a}", m.name());
            }
        }
        Ok(())
    })
}

pub fn eta_linear_in_r(cases: u32) -> Result<(), String> {
    check(cases, (problem(15), 0.01f64..3.0, 0.1f64..10.0), |((k, lambda, xs, ys, qs), r, c)| {
        let post = posterior(k, lambda, &xs, &ys);
        let p = BoundParams::new(2.0, r, lambda, 0.05, 0.0).unwrap();
        let scaled = BoundParams { subgaussian: c * r, ..p };
        for &q in &qs {
            let a = eta_independent(&post, &p, q).unwrap();
            let b = eta_independent(&post, &scaled, q).unwrap();
            prop_assert!((b - c * a).abs() <= 1e-12 * b.abs().max(1e-300));
        }
        Ok(())
    })
}

pub fn zero_noise_tube(cases: u32) -> Result<(), String> {
    check(cases, (problem(15), 0.0f64..5.0), |((k, lambda, xs, ys, qs), b)| {
        let post = posterior(k, lambda, &xs, &ys);
        let p = BoundParams::new(b, 0.0, lambda, 0.01, 0.0).unwrap();
        for &q in &qs {
            let hw = halfwidth(&post, &p, TubeMethod::Nominal, q);
            prop_assert!((hw - b * post.variance(q).sqrt()).abs() <= 1e-12 * (1.0 + hw));
        }
        Ok(())
    })
}

pub fn pre_rkhs_norm(cases: u32) -> Result<(), String> {
    let grid = Grid::equidistant(-1.0, 1.0, 300).unwrap();
    check(cases, (kernel(), 0.1f64..5.0, any::<u64>()), move |(k, b, seed)| {
        let f = sample_pre_rkhs(k, &grid, b, &PreRkhsSampler::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!((f.computed_norm() - b).abs() <= 1e-8 * b);
        let Representation::PreRkhs { centers, .. } = &f.representation else { unreachable!() };
        prop_assert!((5..=200).contains(&centers.len()));
        let mut sorted = centers.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        prop_assert_eq!(sorted.len(), centers.len());
        let bound = b * k.variance.sqrt() * (1.0 + 1e-9);
        prop_assert!(f.evaluate_all(grid.points()).iter().all(|v| v.abs() <= bound));
        Ok(())
    })
}

pub fn onb_norm(cases: u32) -> Result<(), String> {
    let grid = Grid::equidistant(-1.0, 1.0, 300).unwrap();
    check(cases, (0.1f64..1.0, 0.1f64..5.0, any::<u64>()), move |(l, b, seed)| {
        let f = sample_onb(l, b, &OnbSampler::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!((f.computed_norm() - b).abs() <= 1e-8 * b);
        let Representation::Onb { basis_indices, .. } = &f.representation else { unreachable!() };
        prop_assert!((5..=50).contains(&basis_indices.len()));
        prop_assert!(basis_indices.iter().all(|&i| i < 50));
        let mut sorted = basis_indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), basis_indices.len());
        prop_assert!(f.evaluate_all(grid.points()).iter().all(|v| v.abs() <= b * (1.0 + 1e-9)));
        Ok(())
    })
}

/// Log-determinant of `K + shift I` grows when a point is added, for `shift >= 1`.
pub fn logdet_monotone(cases: u32) -> Result<(), String> {
    check(cases, (kernel(), prop::collection::vec(-1.0f64..1.0, 2..20), 1.0f64..5.0), |(k, xs, shift)| {
        let n = xs.len();
        let big = cholesky(&k.gram(&xs), shift).unwrap().logdet();
        let small = cholesky(&k.gram(&xs[..n - 1]), shift).unwrap().logdet();
        prop_assert!(big >= small);
        Ok(())
    })
}
