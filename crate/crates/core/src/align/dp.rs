//! Dynamic-programming realisation of the soft and hard alignments.

use super::{check_shapes, AlignmentOutcome, AlignmentPath, CostMatrix, GibbsParams, VarianceField, VARIANCE_FLOOR};
use crate::error::Result;
use crate::matrix::Matrix;

/// Forward table and, for every cell, the Gibbs probabilities of arriving
/// from the cell above, to the left, and diagonally.
struct Forward {
    r: Matrix,
    // [up, left, diag] per cell, row-major
    arrive: Vec<[f64; 3]>,
}

/// `r[i, j] = w[i, j] + softmin(r[i-1, j], r[i, j-1], r[i-1, j-1])`, with
/// out-of-range cells at `+inf` and `r[0, 0] = w[0, 0]`.
fn forward(weighted: &Matrix, gamma: f64, keep_arrivals: bool) -> Forward {
    let (rows, cols) = weighted.shape();
    let mut r = Matrix::filled(rows, cols, f64::INFINITY);
    let mut arrive = if keep_arrivals {
        vec![[0.0; 3]; rows * cols]
    } else {
        Vec::new()
    };
    let inv_gamma = 1.0 / gamma;
    r[(0, 0)] = weighted[(0, 0)];
    // cells on one anti-diagonal are independent, which keeps the
    // exp/ln latency chains overlapping
    for k in 1..rows + cols - 1 {
        let first = k.saturating_sub(cols - 1);
        for i in first..=k.min(rows - 1) {
            let j = k - i;
            let up = if i > 0 { r[(i - 1, j)] } else { f64::INFINITY };
            let left = if j > 0 { r[(i, j - 1)] } else { f64::INFINITY };
            let diag = if i > 0 && j > 0 {
                r[(i - 1, j - 1)]
            } else {
                f64::INFINITY
            };
            let lo = up.min(left).min(diag);
            // off-grid cells contribute exp(-inf) = 0
            let e = [up, left, diag].map(|v| ((lo - v) * inv_gamma).exp());
            let s = e[0] + e[1] + e[2];
            r[(i, j)] = weighted[(i, j)] + lo - gamma * s.ln();
            if keep_arrivals {
                arrive[i * cols + j] = e.map(|x| x / s);
            }
        }
    }
    Forward { r, arrive }
}

/// Visit probability of every cell under the Gibbs path distribution,
/// propagated back from the last cell through the arrival probabilities.
fn backward(fw: &Forward, rows: usize, cols: usize) -> Matrix {
    let mut e = Matrix::zeros(rows, cols);
    e[(rows - 1, cols - 1)] = 1.0;
    for i in (0..rows).rev() {
        for j in (0..cols).rev() {
            let here = e[(i, j)];
            if here == 0.0 || (i == 0 && j == 0) {
                continue;
            }
            let [up, left, diag] = fw.arrive[i * cols + j];
            if i > 0 {
                e[(i - 1, j)] += here * up;
            }
            if j > 0 {
                e[(i, j - 1)] += here * left;
            }
            if i > 0 && j > 0 {
                e[(i - 1, j - 1)] += here * diag;
            }
        }
    }
    e
}

pub(crate) fn weighted_cost(cost: &Matrix, var: &Matrix) -> Matrix {
    Matrix::from_fn(cost.rows(), cost.cols(), |i, j| {
        cost[(i, j)] / var[(i, j)].max(VARIANCE_FLOOR)
    })
}

/// Unvalidated evaluation on raw matrices. Used by finite differences, which
/// may step entries outside the validated domain.
pub(crate) fn evaluate_raw(cost: &Matrix, var: &Matrix, gamma: f64) -> AlignmentOutcome {
    let weighted = weighted_cost(cost, var);
    let fw = forward(&weighted, gamma, true);
    let coupling = backward(&fw, cost.rows(), cost.cols());
    let omega = if var.as_slice().iter().all(|&v| v == 1.0) {
        0.0
    } else {
        coupling.dot(&var.map(|v| v.max(VARIANCE_FLOOR).ln()))
    };
    AlignmentOutcome {
        dist: coupling.dot(&weighted),
        omega,
        softmin_value: fw.r[(cost.rows() - 1, cost.cols() - 1)],
        coupling,
    }
}

/// Soft alignment through the forward and backward passes.
pub fn udtw_evaluate(cost: &CostMatrix, var: &VarianceField, p: &GibbsParams) -> Result<AlignmentOutcome> {
    p.validate()?;
    check_shapes(cost, var)?;
    Ok(evaluate_raw(cost.matrix(), var.entries(), p.gamma))
}

/// Only the log-partition value `-gamma * log sum_i exp(-w_i / gamma)`.
pub fn softmin_value(cost: &CostMatrix, var: &VarianceField, p: &GibbsParams) -> Result<f64> {
    p.validate()?;
    check_shapes(cost, var)?;
    let r = forward(&weighted_cost(cost.matrix(), var.entries()), p.gamma, false).r;
    Ok(r[(r.rows() - 1, r.cols() - 1)])
}

/// Minimum precision-weighted path cost and one optimal path.
///
/// Backtracking prefers the diagonal predecessor, then the vertical one
/// (previous row), then the horizontal one.
pub fn hard_dtw(cost: &CostMatrix, var: &VarianceField) -> Result<(f64, AlignmentPath)> {
    check_shapes(cost, var)?;
    let weighted = weighted_cost(cost.matrix(), var.entries());
    let (rows, cols) = weighted.shape();
    let mut acc = Matrix::filled(rows, cols, f64::INFINITY);
    for i in 0..rows {
        for j in 0..cols {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut b = f64::INFINITY;
                if i > 0 && j > 0 {
                    b = b.min(acc[(i - 1, j - 1)]);
                }
                if i > 0 {
                    b = b.min(acc[(i - 1, j)]);
                }
                if j > 0 {
                    b = b.min(acc[(i, j - 1)]);
                }
                b
            };
            acc[(i, j)] = weighted[(i, j)] + best;
        }
    }

    let mut steps = vec![(rows - 1, cols - 1)];
    let (mut i, mut j) = (rows - 1, cols - 1);
    while (i, j) != (0, 0) {
        let mut candidates = Vec::with_capacity(3);
        if i > 0 && j > 0 {
            candidates.push((i - 1, j - 1));
        }
        if i > 0 {
            candidates.push((i - 1, j));
        }
        if j > 0 {
            candidates.push((i, j - 1));
        }
        // first strict minimum in preference order
        let mut pick = candidates[0];
        for &c in &candidates[1..] {
            if acc[c] < acc[pick] {
                pick = c;
            }
        }
        (i, j) = pick;
        steps.push(pick);
    }
    steps.reverse();
    Ok((acc[(rows - 1, cols - 1)], AlignmentPath { steps }))
}

#[cfg(test)]
mod tests {
    use super::super::{pairwise_cost, udtw_bruteforce, VarianceMode};
    use super::*;
    use crate::sequence::Sequence;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn worked() -> CostMatrix {
        CostMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> (CostMatrix, VarianceField) {
        let c = Matrix::from_fn(rows, cols, |_, _| rng.random_range(0.0..3.0));
        let s = Matrix::from_fn(rows, cols, |_, _| rng.random_range(0.1..10.0));
        (
            CostMatrix::new(c).unwrap(),
            VarianceField::new(s, VarianceMode::JointPairwise).unwrap(),
        )
    }

    #[test]
    fn worked_instance_matches_enumeration() {
        let p = GibbsParams::new(1.0, 0.0).unwrap();
        let out = udtw_evaluate(&worked(), &VarianceField::unit(2, 2), &p).unwrap();
        assert!((out.dist - 2.354_420_597).abs() < 1e-8);
        assert_eq!(out.omega, 0.0);
        assert!((out.coupling[(0, 1)] - 0.114_195_199).abs() < 1e-8);
        assert!((out.coupling[(1, 0)] - 0.042_010_066).abs() < 1e-8);
    }

    #[test]
    fn strip_has_unique_path() {
        let c = CostMatrix::from_rows(&[vec![1.0, 0.5, 2.0, 4.0]]).unwrap();
        let s = VarianceField::new(
            Matrix::from_rows(&[vec![1.0, 0.5, 2.0, 1.0]]).unwrap(),
            VarianceMode::JointPairwise,
        )
        .unwrap();
        let p = GibbsParams::new(0.7, 0.0).unwrap();
        let out = udtw_evaluate(&c, &s, &p).unwrap();
        assert!((out.dist - (1.0 + 1.0 + 1.0 + 4.0)).abs() < 1e-12);
        assert!(out.coupling.as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let (hard, path) = hard_dtw(&c, &VarianceField::unit(1, 4)).unwrap();
        assert_eq!(hard, 7.5);
        assert_eq!(path.steps.len(), 4);
    }

    #[test]
    fn hard_dtw_worked_and_self() {
        let (cost, path) = hard_dtw(&worked(), &VarianceField::unit(2, 2)).unwrap();
        assert_eq!(cost, 2.0);
        assert_eq!(path.one_based(), vec![(1, 1), (2, 2)]);

        let s = Sequence::from_scalars(&[0.0, 1.0, 3.0, 2.0]).unwrap();
        let c = pairwise_cost(&s, &s).unwrap();
        let (cost, path) = hard_dtw(&c, &VarianceField::unit(4, 4)).unwrap();
        assert_eq!(cost, 0.0);
        assert_eq!(path.steps, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn hard_dtw_tie_break_prefers_diagonal_then_vertical() {
        let zeros = CostMatrix::new(Matrix::zeros(3, 3)).unwrap();
        let (_, path) = hard_dtw(&zeros, &VarianceField::unit(3, 3)).unwrap();
        assert_eq!(path.steps, vec![(0, 0), (1, 1), (2, 2)]);
        let tall = CostMatrix::new(Matrix::zeros(3, 2)).unwrap();
        let (_, path) = hard_dtw(&tall, &VarianceField::unit(3, 2)).unwrap();
        assert_eq!(path.steps, vec![(0, 0), (1, 0), (2, 1)]);
    }

    #[test]
    fn rejects_bad_gamma_and_shapes() {
        let p = GibbsParams {
            gamma: 0.0,
            ..Default::default()
        };
        assert!(udtw_evaluate(&worked(), &VarianceField::unit(2, 2), &p).is_err());
        assert!(udtw_evaluate(&worked(), &VarianceField::unit(2, 3), &GibbsParams::default()).is_err());
    }

    #[test]
    fn agrees_with_enumeration_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..60 {
            let rows = rng.random_range(1..=5);
            let cols = rng.random_range(1..=5);
            let (c, s) = random_instance(&mut rng, rows, cols);
            for gamma in [0.1, 1.0, 10.0] {
                let p = GibbsParams::new(gamma, 0.0).unwrap();
                let dp = udtw_evaluate(&c, &s, &p).unwrap();
                let (bf, _) = udtw_bruteforce(&c, &s, &p, 8).unwrap();
                let tol = |x: f64| 1e-10 * x.abs().max(1.0);
                assert!((dp.dist - bf.dist).abs() <= tol(bf.dist));
                assert!((dp.omega - bf.omega).abs() <= tol(bf.omega));
                assert!((dp.softmin_value - bf.softmin_value).abs() <= tol(bf.softmin_value));
                for (a, b) in dp.coupling.as_slice().iter().zip(bf.coupling.as_slice()) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn coupling_endpoints_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let rows = rng.random_range(1..=12);
            let cols = rng.random_range(1..=12);
            let (c, s) = random_instance(&mut rng, rows, cols);
            let out = udtw_evaluate(&c, &s, &GibbsParams::new(0.5, 0.0).unwrap()).unwrap();
            assert!((out.coupling[(0, 0)] - 1.0).abs() < 1e-10);
            assert!((out.coupling[(rows - 1, cols - 1)] - 1.0).abs() < 1e-10);
            assert!(out
                .coupling
                .as_slice()
                .iter()
                .all(|&v| (-1e-10..=1.0 + 1e-10).contains(&v)));
            // theorem-1 identities hold by construction of dist/omega
            assert!((out.dist - out.coupling.dot(&weighted_cost(c.matrix(), s.entries()))).abs() < 1e-12);
        }
    }

    #[test]
    fn transposition_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (c, s) = random_instance(&mut rng, 4, 6);
        let p = GibbsParams::new(0.3, 0.0).unwrap();
        let a = udtw_evaluate(&c, &s, &p).unwrap();
        let b = udtw_evaluate(&c.transpose(), &s.transpose(), &p).unwrap();
        assert!((a.dist - b.dist).abs() < 1e-10 * a.dist.max(1.0));
        assert!((a.omega - b.omega).abs() < 1e-10 * a.omega.abs().max(1.0));
        for i in 0..4 {
            for j in 0..6 {
                assert!((a.coupling[(i, j)] - b.coupling[(j, i)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn small_gamma_approaches_hard_dtw() {
        // unique minimum path along the diagonal, alternatives cost at least 0.5 more
        let c = CostMatrix::from_rows(&[vec![0.1, 1.0, 2.0], vec![1.0, 0.2, 1.0], vec![2.0, 1.0, 0.1]]).unwrap();
        let s = VarianceField::unit(3, 3);
        let out = udtw_evaluate(&c, &s, &GibbsParams::new(1e-3, 0.0).unwrap()).unwrap();
        let (hard, _) = hard_dtw(&c, &s).unwrap();
        assert!((out.dist - hard).abs() < 1e-3);
    }

    #[test]
    fn softmin_value_matches_terminal_cell() {
        let p = GibbsParams::new(1.0, 0.0).unwrap();
        let v = softmin_value(&worked(), &VarianceField::unit(2, 2), &p).unwrap();
        let out = udtw_evaluate(&worked(), &VarianceField::unit(2, 2), &p).unwrap();
        assert_eq!(v, out.softmin_value);
    }
}
