//! Expected path cost when both sequences carry additive Gaussian noise.
//!
//! With `x_m + e_m`, `e_m ~ N(0, s_m I)` and `y_n + f_n`, `f_n ~ N(0, t_n I)`,
//! each cell's squared distance gains `d * (s_m + t_n)` in expectation, so a
//! fixed path's precision-weighted cost has a closed-form mean.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{AlignmentPath, VarianceField, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::sequence::{squared_distance, Sequence};

fn check(a: &Sequence, b: &Sequence, var: &VarianceField, path: &AlignmentPath, na: &[f64], nb: &[f64]) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch("feature dimensions differ".into()));
    }
    if var.shape() != (a.len(), b.len()) || na.len() != a.len() || nb.len() != b.len() {
        return Err(Error::DimensionMismatch(
            "noise or variance shape does not match the sequences".into(),
        ));
    }
    if !path.is_admissible(a.len(), b.len()) {
        return Err(Error::InvalidParameter(
            "path is not admissible for these sequences".into(),
        ));
    }
    if na.iter().chain(nb).any(|&v| !(v.is_finite() && v >= 0.0)) {
        return Err(Error::InvalidParameter("noise variances must be nonnegative".into()));
    }
    Ok(())
}

/// Closed-form expectation of the precision-weighted cost of `path` under
/// per-index noise variances `noise_a` and `noise_b`.
pub fn expected_noisy_path_cost(
    a: &Sequence,
    b: &Sequence,
    var: &VarianceField,
    path: &AlignmentPath,
    noise_a: &[f64],
    noise_b: &[f64],
) -> Result<f64> {
    check(a, b, var, path, noise_a, noise_b)?;
    let d = a.dim() as f64;
    let s = var.entries();
    Ok(path
        .steps
        .iter()
        .map(|&(m, n)| {
            let sv = s[(m, n)].max(VARIANCE_FLOOR);
            squared_distance(a.column(m), b.column(n)) / sv + d * (noise_a[m] + noise_b[n]) / sv
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub draws: usize,
}

/// Sample mean and standard error of the noisy path cost.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_path_cost<R: Rng + ?Sized>(
    a: &Sequence,
    b: &Sequence,
    var: &VarianceField,
    path: &AlignmentPath,
    noise_a: &[f64],
    noise_b: &[f64],
    draws: usize,
    rng: &mut R,
) -> Result<MonteCarloEstimate> {
    check(a, b, var, path, noise_a, noise_b)?;
    if draws < 2 {
        return Err(Error::InvalidParameter("at least two draws are needed".into()));
    }
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let d = a.dim();
    let s = var.entries();
    let mut noisy_a = a.as_slice().to_vec();
    let mut noisy_b = b.as_slice().to_vec();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        for (m, chunk) in noisy_a.chunks_exact_mut(d).enumerate() {
            let sd = noise_a[m].sqrt();
            for (k, v) in chunk.iter_mut().enumerate() {
                *v = a.column(m)[k] + sd * std.sample(rng);
            }
        }
        for (n, chunk) in noisy_b.chunks_exact_mut(d).enumerate() {
            let sd = noise_b[n].sqrt();
            for (k, v) in chunk.iter_mut().enumerate() {
                *v = b.column(n)[k] + sd * std.sample(rng);
            }
        }
        let cost: f64 = path
            .steps
            .iter()
            .map(|&(m, n)| {
                squared_distance(&noisy_a[m * d..(m + 1) * d], &noisy_b[n * d..(n + 1) * d])
                    / s[(m, n)].max(VARIANCE_FLOOR)
            })
            .sum();
        sum += cost;
        sum_sq += cost * cost;
    }
    let n = draws as f64;
    let mean = sum / n;
    let sample_var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(MonteCarloEstimate {
        mean,
        std_error: (sample_var / n).sqrt(),
        draws,
    })
}
