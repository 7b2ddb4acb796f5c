use rayon::prelude::*;

use super::Scorer;
use crate::align::{chain_through_cost, pairwise_cost, udtw_evaluate, GibbsParams, VarianceField};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sequence::Sequence;

/// One query against an `N x Z` grid of supports. Row 0 holds the query's
/// own class, so the targets are `delta = [0, 1, ..., 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    query: Sequence,
    supports: Vec<Vec<Sequence>>,
    delta: Vec<f64>,
}

impl Episode {
    pub fn new(query: Sequence, supports: Vec<Vec<Sequence>>) -> Result<Self> {
        let n = supports.len();
        let delta = (0..n).map(|i| if i == 0 { 0.0 } else { 1.0 }).collect();
        Self::with_delta(query, supports, delta)
    }

    pub fn with_delta(query: Sequence, supports: Vec<Vec<Sequence>>, delta: Vec<f64>) -> Result<Self> {
        let Some(first) = supports.first() else {
            return Err(Error::Empty("episode supports".into()));
        };
        let z = first.len();
        if z == 0 || supports.iter().any(|row| row.len() != z) {
            return Err(Error::InvalidParameter(
                "every class needs the same nonzero number of supports".into(),
            ));
        }
        if supports.iter().flatten().any(|s| s.dim() != query.dim()) {
            return Err(Error::DimensionMismatch(
                "supports and query feature dimensions differ".into(),
            ));
        }
        let well_formed = delta.len() == supports.len()
            && delta
                .iter()
                .enumerate()
                .all(|(i, &d)| d == if i == 0 { 0.0 } else { 1.0 });
        if !well_formed {
            return Err(Error::InvalidParameter(
                "delta must be [0, 1, ..., 1] with one entry per class".into(),
            ));
        }
        Ok(Self { query, supports, delta })
    }

    pub fn query(&self) -> &Sequence {
        &self.query
    }

    pub fn supports(&self) -> &[Vec<Sequence>] {
        &self.supports
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn n_way(&self) -> usize {
        self.supports.len()
    }

    pub fn z_shot(&self) -> usize {
        self.supports[0].len()
    }

    fn pairs(&self) -> impl Iterator<Item = (&Sequence, f64)> {
        self.supports
            .iter()
            .zip(&self.delta)
            .flat_map(|(row, &d)| row.iter().map(move |s| (s, d)))
    }
}

/// `sum (dist - delta)^2 + beta * omega` over `(dist, omega, delta)` triples.
pub fn episodic_loss_from_terms(terms: &[(f64, f64, f64)], beta: f64) -> f64 {
    terms.iter().map(|&(d, o, delta)| (d - delta).powi(2) + beta * o).sum()
}

/// Supervised episodic loss over every (query, support) pair.
pub fn episodic_supervised_loss(episodes: &[Episode], scorer: &Scorer) -> Result<f64> {
    let jobs: Vec<(&Sequence, &Sequence, f64)> = episodes
        .iter()
        .flat_map(|e| e.pairs().map(move |(s, d)| (&e.query, s, d)))
        .collect();
    let terms: Vec<(f64, f64, f64)> = jobs
        .par_iter()
        .map(|&(q, s, d)| {
            let (dist, omega) = scorer.terms(q, s)?;
            Ok((dist, omega, d))
        })
        .collect::<Result<_>>()?;
    Ok(episodic_loss_from_terms(&terms, scorer.gibbs.beta))
}

fn project(s: &Sequence, proj: &Matrix) -> Result<Sequence> {
    let cols: Vec<Vec<f64>> = s
        .columns()
        .map(|x| {
            (0..proj.rows())
                .map(|i| proj.row(i).iter().zip(x).map(|(w, v)| w * v).sum())
                .collect()
        })
        .collect();
    Sequence::from_columns(&cols)
}

/// Episodic loss and its detached-coupling gradient with respect to a
/// linear feature map `x -> P x` applied to queries and supports alike.
/// Variances are fixed to one, so the regularizer vanishes.
pub fn episodic_projection_grad(episodes: &[Episode], proj: &Matrix, gibbs: &GibbsParams) -> Result<(f64, Matrix)> {
    gibbs.validate()?;
    let (out_dim, in_dim) = proj.shape();
    let jobs: Vec<(&Sequence, &Sequence, f64)> = episodes
        .iter()
        .flat_map(|e| e.pairs().map(move |(s, d)| (&e.query, s, d)))
        .collect();
    if jobs.iter().any(|(q, _, _)| q.dim() != in_dim) {
        return Err(Error::DimensionMismatch(
            "projection input width differs from feature dimension".into(),
        ));
    }
    let parts: Vec<(f64, Matrix)> = jobs
        .par_iter()
        .map(|&(q, s, delta)| {
            let (pq, ps) = (project(q, proj)?, project(s, proj)?);
            let cost = pairwise_cost(&pq, &ps)?;
            let var = VarianceField::unit(pq.len(), ps.len());
            let out = udtw_evaluate(&cost, &var, gibbs)?;
            let r = out.dist - delta;
            let g = chain_through_cost(&pq, &ps, &out.coupling);
            let mut grad = Matrix::zeros(out_dim, in_dim);
            for (seq, wrt) in [(q, &g.wrt_a), (s, &g.wrt_b)] {
                for (t, x) in seq.columns().enumerate() {
                    for i in 0..out_dim {
                        let gi = 2.0 * r * wrt[t * out_dim + i];
                        for (k, v) in x.iter().enumerate() {
                            grad[(i, k)] += gi * v;
                        }
                    }
                }
            }
            Ok((r * r, grad))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(out_dim, in_dim);
    for (l, g) in parts {
        loss += l;
        for (acc, v) in grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *acc += v;
        }
    }
    Ok((loss, grad))
}

/// Temperature and positive-pair regularizer weight of the contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub beta: f64,
}

impl ContrastiveConfig {
    pub fn new(temperature: f64, beta: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidParameter("temperature must be positive".into()));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidParameter("beta must be nonnegative".into()));
        }
        Ok(Self { temperature, beta })
    }
}

/// `(1/B) sum_b [-log softmax_b(-dist(x_b, y_.) / T) + beta * omega(x_b, y_b)]`.
/// The softmax runs over every second view in the batch. The regularizer
/// weight comes from `cfg`, not from the scorer.
pub fn infonce_loss(pairs: &[(Sequence, Sequence)], cfg: &ContrastiveConfig, scorer: &Scorer) -> Result<f64> {
    let cfg = ContrastiveConfig::new(cfg.temperature, cfg.beta)?;
    let b = pairs.len();
    if b == 0 {
        return Err(Error::Empty("contrastive batch".into()));
    }
    let terms: Vec<(f64, f64)> = (0..b * b)
        .into_par_iter()
        .map(|idx| scorer.terms(&pairs[idx / b].0, &pairs[idx % b].1))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    for i in 0..b {
        let logits: Vec<f64> = (0..b).map(|j| -terms[i * b + j].0 / cfg.temperature).collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + logits.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
        total += lse - logits[i] + cfg.beta * terms[i * b + i].1;
    }
    Ok(total / b as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq(rng: &mut ChaCha8Rng, dim: usize, len: usize) -> Sequence {
        let data = (0..dim * len).map(|_| rng.random_range(-1.0..1.0)).collect();
        Sequence::new(dim, len, data).unwrap()
    }

    #[test]
    fn arithmetic_example() {
        let loss = episodic_loss_from_terms(&[(0.2, 0.0, 0.0), (0.9, 0.0, 1.0)], 0.0);
        assert!((loss - 0.05).abs() < 1e-15);
    }

    #[test]
    fn matched_identical_pair_contributes_zero() {
        let q = Sequence::from_scalars(&[2.0, 2.0, 2.0]).unwrap();
        let far = Sequence::from_scalars(&[2.0, 3.0, 2.0]).unwrap();
        let e = Episode::new(q.clone(), vec![vec![q.clone()], vec![far.clone()]]).unwrap();
        let scorer = Scorer::new(GibbsParams::default());
        let total = episodic_supervised_loss(&[e], &scorer).unwrap();
        let (d, _) = scorer.terms(&q, &far).unwrap();
        assert!((total - (d - 1.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn malformed_delta_rejected() {
        let q = Sequence::from_scalars(&[0.0]).unwrap();
        let sup = vec![vec![q.clone()], vec![q.clone()]];
        assert!(Episode::with_delta(q.clone(), sup.clone(), vec![1.0, 0.0]).is_err());
        assert!(Episode::with_delta(q.clone(), sup.clone(), vec![0.0]).is_err());
        assert!(Episode::new(q.clone(), vec![vec![q.clone()], vec![]]).is_err());
        assert!(Episode::new(q, sup).is_ok());
    }

    #[test]
    fn projection_gradient_step_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gibbs = GibbsParams::default();
        let episodes: Vec<Episode> = (0..2)
            .map(|_| {
                let q = random_seq(&mut rng, 3, 5);
                let sup = (0..3)
                    .map(|_| (0..2).map(|_| random_seq(&mut rng, 3, 5)).collect())
                    .collect();
                Episode::new(q, sup).unwrap()
            })
            .collect();
        let proj = Matrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
        let (before, grad) = episodic_projection_grad(&episodes, &proj, &gibbs).unwrap();
        let stepped = Matrix::from_fn(2, 3, |i, k| proj[(i, k)] - 1e-3 * grad[(i, k)]);
        let (after, _) = episodic_projection_grad(&episodes, &stepped, &gibbs).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn infonce_limits() {
        let scorer = Scorer::new(GibbsParams::default());
        let cfg = ContrastiveConfig::new(1.0, 0.5).unwrap();
        let x = Sequence::from_scalars(&[1.0, 2.0]).unwrap();
        assert_eq!(infonce_loss(&[(x.clone(), x.clone())], &cfg, &scorer).unwrap(), 0.0);

        let a = Sequence::from_scalars(&[0.0, 0.0, 0.0]).unwrap();
        let b = Sequence::from_scalars(&[50.0, 50.0, 50.0]).unwrap();
        let loss = infonce_loss(&[(a.clone(), a), (b.clone(), b)], &cfg, &scorer).unwrap();
        assert!(loss.abs() < 1e-12);

        let c = Sequence::from_scalars(&[3.0]).unwrap();
        let eq = infonce_loss(
            &[(c.clone(), c.clone()), (c.clone(), c.clone()), (c.clone(), c)],
            &cfg,
            &scorer,
        )
        .unwrap();
        assert!((eq - 3f64.ln()).abs() < 1e-12);
        assert!(ContrastiveConfig::new(0.0, 0.0).is_err());
    }

    #[test]
    fn infonce_matches_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scorer = Scorer::new(GibbsParams::new(0.5, 0.0).unwrap());
        let cfg = ContrastiveConfig::new(0.7, 0.3).unwrap();
        let pairs: Vec<(Sequence, Sequence)> = (0..3)
            .map(|_| (random_seq(&mut rng, 2, 4), random_seq(&mut rng, 2, 3)))
            .collect();
        let mut expected = 0.0;
        for i in 0..3 {
            let denom: f64 = (0..3)
                .map(|j| (-scorer.terms(&pairs[i].0, &pairs[j].1).unwrap().0 / 0.7).exp())
                .sum();
            let (d, o) = scorer.terms(&pairs[i].0, &pairs[i].1).unwrap();
            expected += -((-d / 0.7).exp() / denom).ln() + 0.3 * o;
        }
        expected /= 3.0;
        let got = infonce_loss(&pairs, &cfg, &scorer).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }
}
