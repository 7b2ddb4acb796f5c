use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{LabeledSet, Scorer};
use crate::align::{pairwise_cost, udtw_evaluate, VarianceField};
use crate::barycenter::{frechet_mean, FrechetConfig};
use crate::error::{Error, Result};
use crate::sequence::{squared_distance, Sequence};

/// Majority vote among the `k` smallest scores. Count ties go to the
/// smaller mean score, then to the lower label.
fn vote(scored: &[(f64, i64)], k: usize) -> i64 {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&i, &j| scored[i].0.total_cmp(&scored[j].0).then(i.cmp(&j)));
    let mut tally: BTreeMap<i64, (usize, f64)> = BTreeMap::new();
    for &i in &order[..k] {
        let e = tally.entry(scored[i].1).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += scored[i].0;
    }
    let mut best: Option<(i64, usize, f64)> = None;
    for (&label, &(count, total)) in &tally {
        let mean = total / count as f64;
        let better = match best {
            None => true,
            Some((_, c, m)) => count > c || (count == c && mean < m),
        };
        if better {
            best = Some((label, count, mean));
        }
    }
    best.map(|b| b.0).expect("k >= 1")
}

fn check_k(train: &LabeledSet, k: usize) -> Result<()> {
    if k == 0 || k > train.len() {
        return Err(Error::InvalidParameter(format!(
            "k must be in 1..={}, got {k}",
            train.len()
        )));
    }
    Ok(())
}

/// k-nearest-neighbour label of `query` under `dist + beta * omega`.
pub fn knn_classify(train: &LabeledSet, query: &Sequence, k: usize, scorer: &Scorer) -> Result<i64> {
    check_k(train, k)?;
    let scored: Vec<(f64, i64)> = train
        .items()
        .par_iter()
        .map(|(s, label)| Ok((scorer.score(query, s)?, *label)))
        .collect::<Result<_>>()?;
    Ok(vote(&scored, k))
}

/// 1-NN under the plain Euclidean distance between equal-length sequences.
pub fn euclidean_nn_classify(train: &LabeledSet, query: &Sequence) -> Result<i64> {
    let scored: Vec<(f64, i64)> = train
        .items()
        .iter()
        .map(|(s, label)| {
            if s.len() != query.len() || s.dim() != query.dim() {
                return Err(Error::DimensionMismatch("Euclidean distance needs equal shapes".into()));
            }
            Ok((squared_distance(s.as_slice(), query.as_slice()), *label))
        })
        .collect::<Result<_>>()?;
    Ok(vote(&scored, 1))
}

/// A class mean, optionally with one variance per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroid {
    pub mean: Sequence,
    pub label: i64,
    pub variances: Option<Vec<f64>>,
}

/// Fréchet mean of every class, in ascending label order.
pub fn class_centroids(train: &LabeledSet, cfg: &FrechetConfig) -> Result<Vec<Centroid>> {
    train
        .labels()
        .into_iter()
        .map(|label| {
            let members: Vec<Sequence> = train
                .items()
                .iter()
                .filter(|(_, l)| *l == label)
                .map(|(s, _)| s.clone())
                .collect();
            let res = frechet_mean(&members, cfg)?;
            Ok(Centroid {
                mean: res.mean,
                label,
                variances: res.variances,
            })
        })
        .collect()
}

/// Label of the centroid with the smallest `dist + beta * omega`; exact ties
/// go to the lower label. Centroids carrying their own variances use them;
/// the others use the scorer's variance source.
pub fn centroid_classify(centroids: &[Centroid], query: &Sequence, scorer: &Scorer) -> Result<i64> {
    if centroids.is_empty() {
        return Err(Error::Empty("centroids".into()));
    }
    let scores: Vec<f64> = centroids
        .par_iter()
        .map(|c| match &c.variances {
            None => scorer.score(query, &c.mean),
            Some(v) => {
                let cost = pairwise_cost(query, &c.mean)?;
                let var = VarianceField::from_column_variances(query.len(), v)?;
                let out = udtw_evaluate(&cost, &var, &scorer.gibbs)?;
                Ok(out.score(scorer.gibbs.beta) * scorer.scale(query, &c.mean))
            }
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for i in 1..centroids.len() {
        match scores[i].total_cmp(&scores[best]) {
            Ordering::Less => best = i,
            Ordering::Equal if centroids[i].label < centroids[best].label => best = i,
            _ => {}
        }
    }
    Ok(centroids[best].label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::GibbsParams;

    fn constant(level: f64, len: usize) -> Sequence {
        Sequence::from_scalars(&vec![level; len]).unwrap()
    }

    fn two_levels() -> LabeledSet {
        LabeledSet::new(vec![
            (constant(0.0, 6), 0),
            (constant(10.0, 6), 1),
            (constant(0.2, 6), 0),
            (constant(9.5, 6), 1),
        ])
        .unwrap()
    }

    #[test]
    fn separated_levels() {
        let scorer = Scorer::new(GibbsParams::default());
        let train = two_levels();
        assert_eq!(knn_classify(&train, &constant(0.1, 6), 1, &scorer).unwrap(), 0);
        assert_eq!(knn_classify(&train, &constant(8.0, 6), 3, &scorer).unwrap(), 1);
        assert_eq!(euclidean_nn_classify(&train, &constant(0.1, 6)).unwrap(), 0);
    }

    #[test]
    fn member_query_gets_own_label() {
        let scorer = Scorer::new(GibbsParams::default());
        let train = two_levels();
        for (s, label) in train.items() {
            assert_eq!(knn_classify(&train, s, 1, &scorer).unwrap(), *label);
        }
    }

    #[test]
    fn vote_tie_rules() {
        // one vote each: smaller mean score wins
        assert_eq!(vote(&[(1.0, 5), (0.5, 7)], 2), 7);
        // count beats mean score
        assert_eq!(vote(&[(0.1, 1), (0.2, 2), (0.3, 2)], 3), 2);
        // full tie: lower label
        assert_eq!(vote(&[(1.0, 9), (1.0, 4)], 2), 4);
    }

    #[test]
    fn rejects_bad_k() {
        let scorer = Scorer::new(GibbsParams::default());
        let train = two_levels();
        assert!(knn_classify(&train, &constant(0.0, 6), 0, &scorer).is_err());
        assert!(knn_classify(&train, &constant(0.0, 6), 5, &scorer).is_err());
        assert!(LabeledSet::new(vec![]).is_err());
    }

    #[test]
    fn centroid_ties_and_matches() {
        let scorer = Scorer::new(GibbsParams::default());
        let cents = vec![
            Centroid {
                mean: constant(1.0, 4),
                label: 3,
                variances: None,
            },
            Centroid {
                mean: constant(-1.0, 4),
                label: 2,
                variances: None,
            },
            Centroid {
                mean: constant(7.0, 4),
                label: 1,
                variances: None,
            },
        ];
        assert_eq!(centroid_classify(&cents, &constant(0.0, 4), &scorer).unwrap(), 2);
        assert_eq!(centroid_classify(&cents, &constant(7.0, 4), &scorer).unwrap(), 1);
        assert!(centroid_classify(&[], &constant(0.0, 4), &scorer).is_err());
    }

    #[test]
    fn rescaled_scores_keep_decision() {
        let scored = [(0.3, 1), (0.1, 2), (0.2, 1), (0.4, 3)];
        let scaled: Vec<(f64, i64)> = scored.iter().map(|(s, l)| (s * 17.0, *l)).collect();
        for k in 1..=4 {
            assert_eq!(vote(&scored, k), vote(&scaled, k));
        }
    }
}
