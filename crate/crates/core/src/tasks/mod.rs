//! Downstream procedures built on the alignment: nearest-neighbour and
//! nearest-centroid classification, forecasting, episodic and contrastive
//! losses, and dictionary coding.

mod classify;
mod dictionary;
mod episodic;
mod forecast;

pub use classify::{centroid_classify, class_centroids, euclidean_nn_classify, knn_classify, Centroid};
pub use dictionary::{
    dict_update, hik_score, lcsa_code, lcsa_from_distances, DictUpdate, Dictionary, DEFAULT_DICT_ITERS,
    DEFAULT_GAMMA_PRIME, DEFAULT_LAMBDA_DL,
};
pub use episodic::{
    episodic_loss_from_terms, episodic_projection_grad, episodic_supervised_loss, infonce_loss, ContrastiveConfig,
    Episode,
};
pub use forecast::{
    forecast_frozen_loss, forecast_gradient, forecast_mse, forecast_predict, forecast_train, split_series,
    ForecastConfig, ForecastGradient, ForecastModel, ForecastPair, ForecastReport, DEFAULT_HIDDEN_WIDTH,
};

use std::collections::BTreeSet;

use crate::align::{pairwise_cost, udtw_evaluate, AlignmentOutcome, GibbsParams};
use crate::error::{Error, Result};
use crate::sequence::Sequence;
use crate::uncertainty::VarianceSource;

/// Labelled sequences sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    items: Vec<(Sequence, i64)>,
}

impl LabeledSet {
    pub fn new(items: Vec<(Sequence, i64)>) -> Result<Self> {
        let Some((first, _)) = items.first() else {
            return Err(Error::Empty("labelled set".into()));
        };
        let dim = first.dim();
        if items.iter().any(|(s, _)| s.dim() != dim) {
            return Err(Error::DimensionMismatch(
                "sequences in a labelled set must share a feature dimension".into(),
            ));
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[(Sequence, i64)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.items[0].0.dim()
    }

    /// Distinct labels in ascending order.
    pub fn labels(&self) -> Vec<i64> {
        self.items
            .iter()
            .map(|(_, l)| *l)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn sequences(&self) -> impl Iterator<Item = &Sequence> {
        self.items.iter().map(|(s, _)| s)
    }

    pub fn into_items(self) -> Vec<(Sequence, i64)> {
        self.items
    }
}

/// How a pair of sequences is scored: Gibbs parameters, the variance
/// source, and optional length normalisation of `dist` and `omega`.
#[derive(Debug, Clone, Copy)]
pub struct Scorer<'a> {
    pub gibbs: GibbsParams,
    pub variances: VarianceSource<'a>,
    /// Divide `dist` and `omega` by `len(a) + len(b)`.
    pub length_normalize: bool,
}

impl<'a> Scorer<'a> {
    pub fn new(gibbs: GibbsParams) -> Self {
        Self {
            gibbs,
            variances: VarianceSource::Unit,
            length_normalize: false,
        }
    }

    pub fn with_variances(mut self, variances: VarianceSource<'a>) -> Self {
        self.variances = variances;
        self
    }

    pub fn with_length_normalize(mut self, on: bool) -> Self {
        self.length_normalize = on;
        self
    }

    pub fn outcome(&self, a: &Sequence, b: &Sequence) -> Result<AlignmentOutcome> {
        let cost = pairwise_cost(a, b)?;
        let var = self.variances.field(a, b)?;
        udtw_evaluate(&cost, &var, &self.gibbs)
    }

    /// `(dist, omega)`, normalised if requested.
    pub fn terms(&self, a: &Sequence, b: &Sequence) -> Result<(f64, f64)> {
        let out = self.outcome(a, b)?;
        let scale = self.scale(a, b);
        Ok((out.dist * scale, out.omega * scale))
    }

    /// `dist + beta * omega`.
    pub fn score(&self, a: &Sequence, b: &Sequence) -> Result<f64> {
        let (d, o) = self.terms(a, b)?;
        Ok(d + self.gibbs.beta * o)
    }

    pub(crate) fn scale(&self, a: &Sequence, b: &Sequence) -> f64 {
        if self.length_normalize {
            1.0 / (a.len() + b.len()) as f64
        } else {
            1.0
        }
    }
}
