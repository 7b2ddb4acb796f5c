use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use super::Scorer;
use crate::align::{chain_through_cost, detached_from_coupling, pairwise_cost, udtw_evaluate};
use crate::error::{Error, Result};
use crate::sequence::Sequence;

pub const DEFAULT_GAMMA_PRIME: f64 = 0.7;
pub const DEFAULT_LAMBDA_DL: f64 = 0.001;
pub const DEFAULT_DICT_ITERS: usize = 10;

/// Atoms of a common shape plus the coding and update hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: Vec<Sequence>,
    pub k_nearest: usize,
    pub gamma_prime: f64,
    pub lambda_dl: f64,
    pub dict_iters: usize,
}

impl Dictionary {
    pub fn new(atoms: Vec<Sequence>, k_nearest: usize) -> Result<Self> {
        let dict = Self {
            atoms,
            k_nearest,
            gamma_prime: DEFAULT_GAMMA_PRIME,
            lambda_dl: DEFAULT_LAMBDA_DL,
            dict_iters: DEFAULT_DICT_ITERS,
        };
        dict.validate()?;
        Ok(dict)
    }

    /// Picks `k` distinct samples and resamples them to the mean sample length.
    pub fn from_samples<R: Rng + ?Sized>(data: &[Sequence], k: usize, k_nearest: usize, rng: &mut R) -> Result<Self> {
        if k == 0 || k > data.len() {
            return Err(Error::InvalidParameter(format!(
                "need 1..={} atoms, got {k}",
                data.len()
            )));
        }
        let total: usize = data.iter().map(Sequence::len).sum();
        let len = ((total as f64 / data.len() as f64).round() as usize).max(1);
        let mut idx = sample(rng, data.len(), k).into_vec();
        idx.sort_unstable();
        let atoms = idx.into_iter().map(|i| data[i].resample(len)).collect::<Result<_>>()?;
        Self::new(atoms, k_nearest)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.atoms.first() else {
            return Err(Error::Empty("dictionary atoms".into()));
        };
        if self
            .atoms
            .iter()
            .any(|a| a.dim() != first.dim() || a.len() != first.len())
        {
            return Err(Error::DimensionMismatch(
                "atoms must share length and feature dimension".into(),
            ));
        }
        if self.k_nearest == 0 || self.k_nearest > self.atoms.len() {
            return Err(Error::InvalidParameter(format!(
                "k_nearest must be in 1..={}, got {}",
                self.atoms.len(),
                self.k_nearest
            )));
        }
        if !(self.gamma_prime.is_finite() && self.gamma_prime > 0.0) {
            return Err(Error::InvalidParameter("gamma_prime must be positive".into()));
        }
        if !(self.lambda_dl.is_finite() && self.lambda_dl >= 0.0) {
            return Err(Error::InvalidParameter("lambda_dl must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn atoms(&self) -> &[Sequence] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Convex combination `sum_k alpha_k M_k`.
    pub fn reconstruct(&self, alpha: &[f64]) -> Result<Sequence> {
        if alpha.len() != self.atoms.len() {
            return Err(Error::DimensionMismatch("one coefficient per atom is required".into()));
        }
        let first = &self.atoms[0];
        let mut data = vec![0.0; first.as_slice().len()];
        for (a, atom) in alpha.iter().zip(&self.atoms) {
            if *a != 0.0 {
                for (acc, v) in data.iter_mut().zip(atom.as_slice()) {
                    *acc += a * v;
                }
            }
        }
        Sequence::new(first.dim(), first.len(), data)
    }
}

/// Softmax of `-d / gamma_prime` over the `k_nearest` smallest distances,
/// zero elsewhere. Equal distances keep index order.
pub fn lcsa_from_distances(dists: &[f64], k_nearest: usize, gamma_prime: f64) -> Result<Vec<f64>> {
    if k_nearest == 0 {
        return Err(Error::InvalidParameter("k_nearest must be at least 1".into()));
    }
    if !(gamma_prime.is_finite() && gamma_prime > 0.0) {
        return Err(Error::InvalidParameter("gamma_prime must be positive".into()));
    }
    if dists.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("atom distances".into()));
    }
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&i, &j| dists[i].total_cmp(&dists[j]).then(i.cmp(&j)));
    let chosen = &order[..k_nearest.min(dists.len())];
    let nearest = dists[chosen[0]];
    let mut alpha = vec![0.0; dists.len()];
    for &i in chosen {
        alpha[i] = (-(dists[i] - nearest) / gamma_prime).exp();
    }
    let z: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= z);
    Ok(alpha)
}

fn atom_distances(s: &Sequence, dict: &Dictionary, scorer: &Scorer) -> Result<Vec<f64>> {
    dict.atoms.par_iter().map(|m| scorer.terms(s, m).map(|t| t.0)).collect()
}

/// Locality-constrained soft assignment of `s` onto the dictionary atoms.
pub fn lcsa_code(s: &Sequence, dict: &Dictionary, scorer: &Scorer) -> Result<Vec<f64>> {
    dict.validate()?;
    lcsa_from_distances(&atom_distances(s, dict, scorer)?, dict.k_nearest, dict.gamma_prime)
}

/// Histogram intersection `sum_k min(a_k, b_k)`.
pub fn hik_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch("codes differ in length".into()));
    }
    if a.iter().chain(b).any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidParameter("codes must be nonnegative".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x.min(*y)).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictUpdate {
    pub dictionary: Dictionary,
    /// Mean reconstruction distance before each round and after the last one.
    pub trace: Vec<f64>,
}

/// Per-sequence reconstruction distances and the summed atom gradients.
fn reconstruction_round(batch: &[Sequence], dict: &Dictionary, scorer: &Scorer) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let parts: Vec<(f64, Vec<f64>, Vec<f64>)> = batch
        .par_iter()
        .map(|s| {
            let alpha = lcsa_code(s, dict, scorer)?;
            let recon = dict.reconstruct(&alpha)?;
            let cost = pairwise_cost(s, &recon)?;
            let var = scorer.variances.field(s, &recon)?;
            let out = udtw_evaluate(&cost, &var, &scorer.gibbs)?;
            let scale = scorer.scale(s, &recon);
            let g = detached_from_coupling(cost.matrix(), var.entries(), &out.coupling);
            let wrt = chain_through_cost(s, &recon, &g.dist_wrt_cost).wrt_b;
            Ok((out.dist * scale, alpha, wrt.into_iter().map(|v| v * scale).collect()))
        })
        .collect::<Result<_>>()?;
    let width = dict.atoms[0].as_slice().len();
    let mut grads = vec![vec![0.0; width]; dict.len()];
    let mut dists = Vec::with_capacity(batch.len());
    for (d, alpha, wrt) in parts {
        dists.push(d);
        for (k, a) in alpha.iter().enumerate() {
            if *a != 0.0 {
                for (acc, v) in grads[k].iter_mut().zip(&wrt) {
                    *acc += a * v;
                }
            }
        }
    }
    Ok((dists, grads))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `dict_iters` rounds of: code the batch, reconstruct, and move every atom
/// by `-lambda_dl` times its share of the detached reconstruction gradient.
pub fn dict_update(batch: &[Sequence], dict: &Dictionary, scorer: &Scorer) -> Result<DictUpdate> {
    dict.validate()?;
    if batch.is_empty() {
        return Err(Error::Empty("dictionary batch".into()));
    }
    let mut dict = dict.clone();
    let mut trace = Vec::with_capacity(dict.dict_iters + 1);
    for round in 0..dict.dict_iters {
        let (dists, grads) = reconstruction_round(batch, &dict, scorer)?;
        trace.push(mean(&dists));
        let mut atoms = Vec::with_capacity(dict.len());
        for (atom, g) in dict.atoms.iter().zip(&grads) {
            let data: Vec<f64> = atom
                .as_slice()
                .iter()
                .zip(g)
                .map(|(x, d)| x - dict.lambda_dl * d)
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged(format!("nonfinite atom after round {}", round + 1)));
            }
            atoms.push(Sequence::new(atom.dim(), atom.len(), data)?);
        }
        dict.atoms = atoms;
    }
    let (dists, _) = reconstruction_round(batch, &dict, scorer)?;
    trace.push(mean(&dists));
    Ok(DictUpdate {
        dictionary: dict,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::GibbsParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_seq(rng: &mut ChaCha8Rng, len: usize) -> Sequence {
        let v: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        Sequence::from_scalars(&v).unwrap()
    }

    #[test]
    fn worked_coefficients() {
        let a = lcsa_from_distances(&[1.0, 2.0, 5.0], 2, 0.7).unwrap();
        let e1 = (-1.0f64 / 0.7).exp();
        let e2 = (-2.0f64 / 0.7).exp();
        assert!((a[0] - e1 / (e1 + e2)).abs() < 1e-15);
        assert!((a[0] - 0.807).abs() < 1e-3 && (a[1] - 0.193).abs() < 1e-3);
        assert_eq!(a[2], 0.0);
    }

    #[test]
    fn one_hot_and_symmetric_codes() {
        assert_eq!(
            lcsa_from_distances(&[3.0, 1.0, 2.0], 1, 0.7).unwrap(),
            vec![0.0, 1.0, 0.0]
        );
        assert_eq!(lcsa_from_distances(&[2.0, 2.0], 2, 0.7).unwrap(), vec![0.5, 0.5]);
        assert!(lcsa_from_distances(&[1.0], 0, 0.7).is_err());
    }

    #[test]
    fn hik_examples() {
        assert!((hik_score(&[0.7, 0.3, 0.0], &[0.2, 0.5, 0.3]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(hik_score(&[0.5, 0.5, 0.0], &[0.0, 0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(hik_score(&[0.25, 0.75], &[0.25, 0.75]).unwrap(), 1.0);
        assert!(hik_score(&[-0.1, 1.1], &[0.5, 0.5]).is_err());
        assert!(hik_score(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn atoms_as_batch_are_a_fixed_point() {
        let atoms: Vec<Sequence> = [0.0, 5.0, -3.0]
            .iter()
            .map(|&l| Sequence::from_scalars(&[l; 4]).unwrap())
            .collect();
        let dict = Dictionary::new(atoms.clone(), 1).unwrap();
        let scorer = Scorer::new(GibbsParams::default());
        let res = dict_update(&atoms, &dict, &scorer).unwrap();
        assert!(res.trace.iter().all(|&d| d == 0.0));
        assert_eq!(res.dictionary.atoms(), &atoms[..]);
    }

    #[test]
    fn single_atom_moves_toward_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_seq(&mut rng, 6);
        let mut dict = Dictionary::new(vec![random_seq(&mut rng, 6)], 1).unwrap();
        dict.lambda_dl = 0.05;
        let scorer = Scorer::new(GibbsParams::new(0.1, 0.0).unwrap());
        let res = dict_update(&[s], &dict, &scorer).unwrap();
        assert_eq!(res.trace.len(), 11);
        assert!(res.trace.windows(2).all(|w| w[1] < w[0]), "{:?}", res.trace);
    }

    #[test]
    fn zero_step_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch: Vec<Sequence> = (0..5).map(|_| random_seq(&mut rng, 5)).collect();
        let mut dict = Dictionary::from_samples(&batch, 3, 2, &mut rng).unwrap();
        dict.lambda_dl = 0.0;
        let scorer = Scorer::new(GibbsParams::default());
        let res = dict_update(&batch, &dict, &scorer).unwrap();
        assert_eq!(res.dictionary, dict);
    }

    #[test]
    fn codes_are_probability_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scorer = Scorer::new(GibbsParams::default());
        for case in 0..20 {
            let k = 1 + case % 5;
            let kn = 1 + case % k;
            let atoms = (0..k).map(|_| random_seq(&mut rng, 4)).collect();
            let dict = Dictionary::new(atoms, kn).unwrap();
            let a = lcsa_code(&random_seq(&mut rng, 5), &dict, &scorer).unwrap();
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(a.iter().filter(|v| **v > 0.0).count(), kn);
        }
    }
}
