//! Exact and soft alignment kernels.
//!
//! Every cost entry is weighted by the precision (inverse variance) of its
//! correspondence. The soft alignment places a Gibbs distribution over all
//! monotone lattice paths from `(0, 0)` to `(rows - 1, cols - 1)`:
//!
//! ```text
//! w_i = <P_i, C / S>          precision-weighted path cost
//! u_i = <P_i, log S>          path log-variance
//! pi_i ∝ exp(-w_i / gamma)
//! dist  = sum_i pi_i w_i
//! omega = sum_i pi_i u_i
//! ```
//!
//! [`udtw_evaluate`] computes both expectations in polynomial time through the
//! per-cell coupling (the probability that a random path visits a cell), and
//! [`udtw_bruteforce`] enumerates paths explicitly for small instances.

mod dp;
mod grad;
pub mod noise;
mod paths;
mod selectors;

pub use dp::{hard_dtw, softmin_value, udtw_evaluate};
pub(crate) use grad::{chain_through_cost, detached_from_coupling};
pub use grad::{udtw_grad, udtw_grad_sequence, GradMode, SequenceGradient, UdtwGradient};
pub use paths::{delannoy, enumerate_paths, udtw_bruteforce, PathDistribution, DEFAULT_ORACLE_LIMIT};
pub use selectors::{gibbs_weights, softming, softminsel};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sequence::{squared_distance, Sequence};

/// Variances are clamped to this floor before inversion or logarithm.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Pairwise squared Euclidean distances between the columns of two sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Matrix);

impl CostMatrix {
    pub fn new(entries: Matrix) -> Result<Self> {
        if entries.rows() == 0 || entries.cols() == 0 {
            return Err(Error::Empty("cost matrix".into()));
        }
        if !entries.is_finite() {
            return Err(Error::NonFinite("cost matrix".into()));
        }
        if entries.as_slice().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParameter("cost entries must be nonnegative".into()));
        }
        Ok(Self(entries))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn transpose(&self) -> CostMatrix {
        CostMatrix(self.0.transpose())
    }
}

/// How a variance field was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceMode {
    AdditivePerToken,
    JointPairwise,
    Unit,
}

/// Strictly positive per-correspondence variances.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceField {
    entries: Matrix,
    mode: VarianceMode,
}

impl VarianceField {
    pub fn new(entries: Matrix, mode: VarianceMode) -> Result<Self> {
        if !entries.is_finite() {
            return Err(Error::NonFinite("variance field".into()));
        }
        if entries.as_slice().iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidParameter("variances must be strictly positive".into()));
        }
        if mode == VarianceMode::Unit && entries.as_slice().iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidParameter(
                "unit mode requires all variances equal to 1".into(),
            ));
        }
        Ok(Self { entries, mode })
    }

    pub fn unit(rows: usize, cols: usize) -> Self {
        Self {
            entries: Matrix::filled(rows, cols, 1.0),
            mode: VarianceMode::Unit,
        }
    }

    /// Per-column variances of the second sequence broadcast across rows.
    pub fn from_column_variances(rows: usize, variances: &[f64]) -> Result<Self> {
        Self::new(
            Matrix::from_fn(rows, variances.len(), |_, j| variances[j]),
            VarianceMode::AdditivePerToken,
        )
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn mode(&self) -> VarianceMode {
        self.mode
    }

    pub fn shape(&self) -> (usize, usize) {
        self.entries.shape()
    }

    pub fn transpose(&self) -> VarianceField {
        Self {
            entries: self.entries.transpose(),
            mode: self.mode,
        }
    }

    /// Element-wise inverse after flooring.
    pub fn precision(&self) -> Matrix {
        self.entries.map(|v| 1.0 / v.max(VARIANCE_FLOOR))
    }

    pub fn log(&self) -> Matrix {
        self.entries.map(|v| v.max(VARIANCE_FLOOR).ln())
    }
}

/// Policy for the stabilising shift subtracted from path costs before
/// exponentiation. Selector values do not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShiftPolicy {
    #[default]
    Mean,
    None,
}

/// Temperature and regularizer weight of the Gibbs path distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsParams {
    pub gamma: f64,
    pub beta: f64,
    pub shift: ShiftPolicy,
}

impl GibbsParams {
    pub fn new(gamma: f64, beta: f64) -> Result<Self> {
        let p = Self {
            gamma,
            beta,
            shift: ShiftPolicy::Mean,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be positive and finite, got {}",
                self.gamma
            )));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must be nonnegative and finite, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

impl Default for GibbsParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            beta: 0.0,
            shift: ShiftPolicy::Mean,
        }
    }
}

/// A monotone lattice path. Steps are 0-based `(row, col)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AlignmentPath {
    pub steps: Vec<(usize, usize)>,
}

impl AlignmentPath {
    /// Steps as 1-based index pairs.
    pub fn one_based(&self) -> Vec<(usize, usize)> {
        self.steps.iter().map(|&(m, n)| (m + 1, n + 1)).collect()
    }

    /// True when the path starts at the origin, ends at `(rows-1, cols-1)`
    /// and only takes unit steps right, down, or diagonally.
    pub fn is_admissible(&self, rows: usize, cols: usize) -> bool {
        let (Some(&first), Some(&last)) = (self.steps.first(), self.steps.last()) else {
            return false;
        };
        if first != (0, 0) || last != (rows - 1, cols - 1) {
            return false;
        }
        self.steps.windows(2).all(|w| {
            let dm = w[1].0 as isize - w[0].0 as isize;
            let dn = w[1].1 as isize - w[0].1 as isize;
            matches!((dm, dn), (1, 0) | (0, 1) | (1, 1))
        })
    }

    /// Sum of `values` over the visited cells.
    pub fn sum_over(&self, values: &Matrix) -> f64 {
        self.steps.iter().map(|&(m, n)| values[(m, n)]).sum()
    }

    pub fn contains(&self, cell: (usize, usize)) -> bool {
        self.steps.contains(&cell)
    }
}

/// Result of a soft alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentOutcome {
    /// Expected precision-weighted path cost.
    pub dist: f64,
    /// Expected path log-variance.
    pub omega: f64,
    /// Probability that a Gibbs-random path visits each cell.
    pub coupling: Matrix,
    /// `-gamma * log(sum_i exp(-w_i / gamma))`, the classic soft-DTW value.
    pub softmin_value: f64,
}

impl AlignmentOutcome {
    /// `dist + beta * omega`.
    pub fn score(&self, beta: f64) -> f64 {
        self.dist + beta * self.omega
    }
}

/// Squared Euclidean distance between every column of `a` and every column of `b`.
pub fn pairwise_cost(a: &Sequence, b: &Sequence) -> Result<CostMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let m = Matrix::from_fn(a.len(), b.len(), |i, j| squared_distance(a.column(i), b.column(j)));
    CostMatrix::new(m)
}

/// Additive composition `0.5 * (sa[m] + sb[n])` of per-token variances.
pub fn compose_variance(sa: &[f64], sb: &[f64]) -> Result<VarianceField> {
    if sa.is_empty() || sb.is_empty() {
        return Err(Error::Empty("per-token variances".into()));
    }
    if sa.iter().chain(sb).any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(Error::InvalidParameter(
            "per-token variances must be positive and finite".into(),
        ));
    }
    let m = Matrix::from_fn(sa.len(), sb.len(), |i, j| 0.5 * (sa[i] + sb[j]));
    VarianceField::new(m, VarianceMode::AdditivePerToken)
}

pub(crate) fn check_shapes(cost: &CostMatrix, var: &VarianceField) -> Result<()> {
    if cost.shape() != var.shape() {
        return Err(Error::DimensionMismatch(format!(
            "cost is {:?} but variance field is {:?}",
            cost.shape(),
            var.shape()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(cols: &[Vec<f64>]) -> Sequence {
        Sequence::from_columns(cols).unwrap()
    }

    #[test]
    fn pairwise_cost_identity_and_scalar_cases() {
        let a = seq(&[vec![1.0, 2.0]]);
        assert_eq!(pairwise_cost(&a, &a).unwrap().matrix().as_slice(), &[0.0]);

        let a = seq(&[vec![0.0], vec![1.0]]);
        let b = seq(&[vec![2.0]]);
        let c = pairwise_cost(&a, &b).unwrap();
        assert_eq!(c.shape(), (2, 1));
        assert_eq!(c.matrix().as_slice(), &[4.0, 1.0]);
    }

    #[test]
    fn pairwise_cost_rejects_dimension_mismatch() {
        let a = seq(&[vec![1.0, 2.0]]);
        let b = seq(&[vec![1.0]]);
        assert!(matches!(pairwise_cost(&a, &b), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn pairwise_cost_matches_double_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let b: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let c = pairwise_cost(&seq(&a), &seq(&b)).unwrap();
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                let mut s = 0.0;
                for k in 0..3 {
                    s += (x[k] - y[k]).powi(2);
                }
                assert_eq!(c.matrix()[(i, j)], s);
            }
        }
    }

    #[test]
    fn compose_variance_examples() {
        let v = compose_variance(&[1.0], &[1.0]).unwrap();
        assert_eq!(v.entries().as_slice(), &[1.0]);
        let v = compose_variance(&[2.0], &[4.0]).unwrap();
        assert_eq!(v.entries().as_slice(), &[3.0]);
        let v = compose_variance(&[1.0, 3.0], &[5.0]).unwrap();
        assert_eq!(v.entries().as_slice(), &[3.0, 4.0]);
        assert_eq!(v.mode(), VarianceMode::AdditivePerToken);
        assert!(compose_variance(&[0.0], &[1.0]).is_err());
        assert!(compose_variance(&[1.0], &[-2.0]).is_err());
    }

    #[test]
    fn variance_field_invariants() {
        assert!(VarianceField::new(Matrix::filled(1, 1, 2.0), VarianceMode::Unit).is_err());
        assert!(VarianceField::new(Matrix::filled(1, 1, 0.0), VarianceMode::JointPairwise).is_err());
        let tiny = VarianceField::new(Matrix::filled(1, 1, 1e-9), VarianceMode::JointPairwise).unwrap();
        assert_eq!(tiny.precision()[(0, 0)], 1e6);
    }

    #[test]
    fn gibbs_params_validation() {
        assert!(GibbsParams::new(0.0, 0.0).is_err());
        assert!(GibbsParams::new(1.0, -1.0).is_err());
        assert!(GibbsParams::new(f64::NAN, 0.0).is_err());
    }
}
