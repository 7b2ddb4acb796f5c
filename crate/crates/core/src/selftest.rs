//! Randomised identity checks run by `udtw selftest`: DP against path
//! enumeration, the zero-temperature limit, gradients against finite
//! differences, and the noisy-path expectation against Monte Carlo.

use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::noise::{expected_noisy_path_cost, monte_carlo_path_cost};
use crate::align::{
    enumerate_paths, hard_dtw, pairwise_cost, softmin_value, udtw_bruteforce, udtw_evaluate, udtw_grad, CostMatrix,
    GibbsParams, GradMode, VarianceField, VarianceMode, DEFAULT_ORACLE_LIMIT,
};
use crate::error::Result;
use crate::matrix::{relative_gap, Matrix};
use crate::sequence::Sequence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelftestConfig {
    pub seed: u64,
    /// Overrides the per-suite instance counts when set.
    pub trials: Option<usize>,
    /// Upper bound on instance side lengths; enumeration grows like the
    /// Delannoy numbers.
    pub oracle_limit: usize,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: None,
            oracle_limit: DEFAULT_ORACLE_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed error, in the units of `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

struct Tally {
    cases: usize,
    failures: usize,
    worst: f64,
}

impl Tally {
    fn new() -> Self {
        Self {
            cases: 0,
            failures: 0,
            worst: 0.0,
        }
    }

    fn record(&mut self, err: f64, tol: f64) {
        self.cases += 1;
        if !(err <= tol) {
            self.failures += 1;
        }
        if err.is_nan() || err > self.worst {
            self.worst = err;
        }
    }

    fn finish(self, name: &'static str, tolerance: f64, start: Instant) -> SuiteReport {
        SuiteReport {
            name,
            cases: self.cases,
            failures: self.failures,
            worst: self.worst,
            tolerance,
            elapsed: start.elapsed(),
        }
    }
}

fn rel(a: f64, reference: f64) -> f64 {
    (a - reference).abs() / reference.abs().max(1.0)
}

fn random_sequence<R: Rng>(rng: &mut R, dim: usize, len: usize) -> Sequence {
    let data = (0..dim * len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Sequence::new(dim, len, data).expect("finite")
}

fn random_variance<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> VarianceField {
    let m = Matrix::from_fn(rows, cols, |_, _| rng.random_range(0.1..10.0));
    VarianceField::new(m, VarianceMode::JointPairwise).expect("positive")
}

/// DP `dist` and `omega` against enumeration over random instances with
/// sides up to 5, `d <= 3`, `gamma in {0.1, 1, 10}` and variances in `[0.1, 10]`.
pub fn oracle_suite(cfg: &SelftestConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let tol = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let side = cfg.oracle_limit.clamp(1, 5);
    let mut tally = Tally::new();
    for _ in 0..cfg.trials.unwrap_or(200) {
        let (n, m, d) = (
            rng.random_range(1..=side),
            rng.random_range(1..=side),
            rng.random_range(1..=3),
        );
        let gamma = *[0.1, 1.0, 10.0].choose(&mut rng).expect("nonempty");
        let (a, b) = (random_sequence(&mut rng, d, n), random_sequence(&mut rng, d, m));
        let cost = pairwise_cost(&a, &b)?;
        let var = random_variance(&mut rng, n, m);
        let p = GibbsParams::new(gamma, 0.0)?;
        let dp = udtw_evaluate(&cost, &var, &p)?;
        let (bf, _) = udtw_bruteforce(&cost, &var, &p, cfg.oracle_limit)?;
        tally.record(rel(dp.dist, bf.dist).max(rel(dp.omega, bf.omega)), tol);
    }
    Ok(tally.finish("oracle_equivalence", tol, start))
}

/// At `gamma = 1e-3`, `dist` and `omega` against the hard alignment on
/// instances whose best path beats the runner-up by at least 0.1.
pub fn limit_suite(cfg: &SelftestConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let tol = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x11);
    let side = cfg.oracle_limit.clamp(2, 5);
    let p = GibbsParams::new(1e-3, 0.0)?;
    let mut tally = Tally::new();
    let wanted = cfg.trials.unwrap_or(100);
    while tally.cases < wanted {
        let (n, m) = (rng.random_range(2..=side), rng.random_range(2..=side));
        let cost = CostMatrix::new(Matrix::from_fn(n, m, |_, _| rng.random_range(0.0..3.0)))?;
        let var = random_variance(&mut rng, n, m);
        let (_, dist) = udtw_bruteforce(&cost, &var, &p, cfg.oracle_limit.max(side))?;
        let mut sorted = dist.costs.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.len() > 1 && sorted[1] - sorted[0] < 0.1 {
            continue;
        }
        let out = udtw_evaluate(&cost, &var, &p)?;
        let (best, path) = hard_dtw(&cost, &var)?;
        let err = (out.dist - best)
            .abs()
            .max((out.omega - path.sum_over(&var.log())).abs());
        tally.record(err, tol);
    }
    Ok(tally.finish("deterministic_limit", tol, start))
}

fn fd_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// With unit variances the coupling is the gradient of the soft-min value.
pub fn unit_variance_suite(cfg: &SelftestConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let tol = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x22);
    let mut tally = Tally::new();
    let var = VarianceField::unit(4, 4);
    for _ in 0..cfg.trials.unwrap_or(50) {
        let c = Matrix::from_fn(4, 4, |_, _| rng.random_range(0.0..2.0));
        let p = GibbsParams::new(*[0.1, 1.0, 10.0].choose(&mut rng).expect("nonempty"), 0.0)?;
        let coupling = udtw_evaluate(&CostMatrix::new(c.clone())?, &var, &p)?.coupling;
        let mut fd = Vec::with_capacity(16);
        for idx in 0..16 {
            let h = fd_step(c.as_slice()[idx]);
            let mut up = c.clone();
            up.as_mut_slice()[idx] += h;
            let mut down = c.clone();
            down.as_mut_slice()[idx] -= h;
            let f_up = softmin_value(&CostMatrix::new(up)?, &var, &p)?;
            let f_down = softmin_value(&CostMatrix::new(down)?, &var, &p)?;
            fd.push((f_up - f_down) / (2.0 * h));
        }
        tally.record(relative_gap(coupling.as_slice(), &fd, 1e-12), tol);
    }
    Ok(tally.finish("unit_variance_reduction", tol, start))
}

/// Enumeration-based exact gradients against central differences on 3x3
/// instances, for `dist` w.r.t. cost and variance and `omega` w.r.t. variance.
pub fn gradient_suite(cfg: &SelftestConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let tol = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x33);
    let mut tally = Tally::new();
    let exact = GradMode::ExactOracle {
        limit: cfg.oracle_limit.max(3),
    };
    for _ in 0..cfg.trials.unwrap_or(50) {
        let cost = CostMatrix::new(Matrix::from_fn(3, 3, |_, _| rng.random_range(0.0..2.0)))?;
        let var = VarianceField::new(
            Matrix::from_fn(3, 3, |_, _| rng.random_range(0.5..2.0)),
            VarianceMode::JointPairwise,
        )?;
        let p = GibbsParams::new(*[0.5, 1.0, 2.0].choose(&mut rng).expect("nonempty"), 0.0)?;
        let ex = udtw_grad(&cost, &var, &p, exact)?;
        let fd = udtw_grad(&cost, &var, &p, GradMode::FiniteDifference)?;
        let err = [
            (&ex.dist_wrt_cost, &fd.dist_wrt_cost),
            (&ex.dist_wrt_var, &fd.dist_wrt_var),
            (&ex.omega_wrt_var, &fd.omega_wrt_var),
        ]
        .iter()
        .map(|(a, b)| relative_gap(a.as_slice(), b.as_slice(), 1e-8))
        .fold(0.0, f64::max);
        tally.record(err, tol);
    }
    Ok(tally.finish("gradients", tol, start))
}

/// Monte-Carlo mean of a fixed path's cost under additive Gaussian noise
/// against the closed form; errors are in standard errors.
pub fn noise_suite(cfg: &SelftestConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let tol = 3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x44);
    let side = cfg.oracle_limit.clamp(1, 4);
    let mut tally = Tally::new();
    for _ in 0..cfg.trials.unwrap_or(20) {
        let (n, m, d) = (
            rng.random_range(1..=side),
            rng.random_range(1..=side),
            rng.random_range(1..=3),
        );
        let (a, b) = (random_sequence(&mut rng, d, n), random_sequence(&mut rng, d, m));
        let var = random_variance(&mut rng, n, m);
        let paths = enumerate_paths(n, m, cfg.oracle_limit.max(side))?;
        let path = paths.choose(&mut rng).expect("at least one path");
        let na: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
        let nb: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..0.5)).collect();
        let expected = expected_noisy_path_cost(&a, &b, &var, path, &na, &nb)?;
        let mc = monte_carlo_path_cost(&a, &b, &var, path, &na, &nb, 10_000, &mut rng)?;
        let err = if mc.std_error > 0.0 {
            (mc.mean - expected).abs() / mc.std_error
        } else {
            (mc.mean - expected).abs() / 1e-12
        };
        tally.record(err, tol);
    }
    Ok(tally.finish("noisy_path_expectation", tol, start))
}

pub fn run_all(cfg: &SelftestConfig) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        oracle_suite(cfg)?,
        limit_suite(cfg)?,
        unit_variance_suite(cfg)?,
        gradient_suite(cfg)?,
        noise_suite(cfg)?,
    ])
}
