//! Explicit path enumeration, used as ground truth on small instances.

use super::{check_shapes, selectors, AlignmentOutcome, AlignmentPath, CostMatrix, GibbsParams, VarianceField};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Largest side length accepted by the enumeration routines unless overridden.
/// D(7, 7) = 48,639 paths.
pub const DEFAULT_ORACLE_LIMIT: usize = 8;

/// Delannoy number `D(a, b) = sum_i C(a, i) C(b, i) 2^i`, the number of
/// monotone paths on an `(a+1) x (b+1)` grid.
pub fn delannoy(a: usize, b: usize) -> u128 {
    (0..=a.min(b))
        .map(|i| binomial(a, i) * binomial(b, i) * (1u128 << i))
        .sum()
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Every admissible path through a `rows x cols` grid.
pub fn enumerate_paths(rows: usize, cols: usize, limit: usize) -> Result<Vec<AlignmentPath>> {
    if rows == 0 || cols == 0 {
        return Err(Error::Empty("path grid".into()));
    }
    if rows > limit || cols > limit {
        return Err(Error::OracleLimit { rows, cols, limit });
    }
    let mut out = Vec::with_capacity(delannoy(rows - 1, cols - 1) as usize);
    let mut stack = vec![(0, 0)];
    extend(&mut stack, rows, cols, &mut out);
    Ok(out)
}

fn extend(stack: &mut Vec<(usize, usize)>, rows: usize, cols: usize, out: &mut Vec<AlignmentPath>) {
    let (m, n) = *stack.last().expect("path stack is never empty");
    if (m, n) == (rows - 1, cols - 1) {
        out.push(AlignmentPath { steps: stack.clone() });
        return;
    }
    for (dm, dn) in [(1, 1), (1, 0), (0, 1)] {
        let next = (m + dm, n + dn);
        if next.0 < rows && next.1 < cols {
            stack.push(next);
            extend(stack, rows, cols, out);
            stack.pop();
        }
    }
}

/// The full Gibbs distribution over paths of one instance.
#[derive(Debug, Clone)]
pub struct PathDistribution {
    pub paths: Vec<AlignmentPath>,
    /// Precision-weighted path costs `w_i`.
    pub costs: Vec<f64>,
    /// Path log-variance sums `u_i`.
    pub penalties: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl PathDistribution {
    /// `E[W * X] - E[W] E[X]` for per-path statistics `x` and the path costs.
    pub fn covariance_with_costs(&self, x: &[f64]) -> f64 {
        covariance(&self.probabilities, &self.costs, x)
    }

    pub fn covariance_with_penalties(&self, x: &[f64]) -> f64 {
        covariance(&self.probabilities, &self.penalties, x)
    }

    /// Indicator of `cell` for each path.
    pub fn indicator(&self, cell: (usize, usize)) -> Vec<f64> {
        self.paths
            .iter()
            .map(|p| if p.contains(cell) { 1.0 } else { 0.0 })
            .collect()
    }
}

fn covariance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ea: f64 = p.iter().zip(a).map(|(p, a)| p * a).sum();
    let eb: f64 = p.iter().zip(b).map(|(p, b)| p * b).sum();
    let eab: f64 = p.iter().zip(a).zip(b).map(|((p, a), b)| p * a * b).sum();
    eab - ea * eb
}

/// Soft alignment by explicit enumeration of all admissible paths.
pub fn udtw_bruteforce(
    cost: &CostMatrix,
    var: &VarianceField,
    p: &GibbsParams,
    limit: usize,
) -> Result<(AlignmentOutcome, PathDistribution)> {
    p.validate()?;
    check_shapes(cost, var)?;
    let (rows, cols) = cost.shape();
    let paths = enumerate_paths(rows, cols, limit)?;

    let precision = var.precision();
    let weighted = Matrix::from_fn(rows, cols, |i, j| cost.matrix()[(i, j)] * precision[(i, j)]);
    let log_var = var.log();

    let costs: Vec<f64> = paths.iter().map(|path| path.sum_over(&weighted)).collect();
    let penalties: Vec<f64> = paths.iter().map(|path| path.sum_over(&log_var)).collect();
    let probabilities = selectors::gibbs_weights(&costs, p)?;

    let mut coupling = Matrix::zeros(rows, cols);
    for (path, &prob) in paths.iter().zip(&probabilities) {
        for &cell in &path.steps {
            coupling[cell] += prob;
        }
    }

    let dist = probabilities.iter().zip(&costs).map(|(a, b)| a * b).sum();
    let omega = probabilities.iter().zip(&penalties).map(|(a, b)| a * b).sum();
    let lowest = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let partial: f64 = costs.iter().map(|&w| (-(w - lowest) / p.gamma).exp()).sum();
    let softmin_value = lowest - p.gamma * partial.ln();

    Ok((
        AlignmentOutcome {
            dist,
            omega,
            coupling,
            softmin_value,
        },
        PathDistribution {
            paths,
            costs,
            penalties,
            probabilities,
        },
    ))
}
