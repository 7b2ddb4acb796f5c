use rand::Rng;
use rayon::prelude::*;

use crate::align::{
    chain_through_cost, compose_variance, detached_from_coupling, pairwise_cost, udtw_evaluate, GibbsParams,
    VarianceField,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sequence::{squared_distance, Sequence};
use crate::uncertainty::{UncertaintyModel, UncertaintyVariant};

pub const DEFAULT_HIDDEN_WIDTH: usize = 128;
const DIVERGENCE_LIMIT: f64 = 1e8;

/// One-hidden-layer ReLU network mapping a flattened prefix of `input_length`
/// steps to `output_length` future steps of the same feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    dim: usize,
    input_length: usize,
    output_length: usize,
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
}

impl ForecastModel {
    pub fn zeros(dim: usize, input_length: usize, output_length: usize, hidden: usize) -> Result<Self> {
        if dim == 0 || input_length == 0 || output_length == 0 || hidden == 0 {
            return Err(Error::InvalidParameter("forecast model sizes must be positive".into()));
        }
        Ok(Self {
            dim,
            input_length,
            output_length,
            w1: Matrix::zeros(hidden, dim * input_length),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(dim * output_length, hidden),
            b2: vec![0.0; dim * output_length],
        })
    }

    /// Weights uniform in `+-1/sqrt(fan_in)`, biases zero.
    pub fn random<R: Rng + ?Sized>(
        dim: usize,
        input_length: usize,
        output_length: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut m = Self::zeros(dim, input_length, output_length, hidden)?;
        let r1 = 1.0 / ((dim * input_length) as f64).sqrt();
        m.w1.as_mut_slice()
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-r1..r1));
        let r2 = 1.0 / (hidden as f64).sqrt();
        m.w2.as_mut_slice()
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-r2..r2));
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_length(&self) -> usize {
        self.input_length
    }

    pub fn output_length(&self) -> usize {
        self.output_length
    }

    pub fn hidden_width(&self) -> usize {
        self.b1.len()
    }

    /// `w1, b1, w2, b2`, each row-major, concatenated.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(self.w1.as_slice());
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(self.w2.as_slice());
        p.extend_from_slice(&self.b2);
        p
    }

    pub fn n_params(&self) -> usize {
        self.w1.as_slice().len() + self.b1.len() + self.w2.as_slice().len() + self.b2.len()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forecast parameters".into()));
        }
        let mut rest = p;
        for dst in [
            self.w1.as_mut_slice(),
            &mut self.b1[..],
            self.w2.as_mut_slice(),
            &mut self.b2[..],
        ] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn check_prefix(&self, prefix: &Sequence) -> Result<()> {
        if prefix.len() != self.input_length || prefix.dim() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "model expects a {}x{} prefix, got {}x{}",
                self.dim,
                self.input_length,
                prefix.dim(),
                prefix.len()
            )));
        }
        Ok(())
    }

    /// Hidden pre-activations and the flat output.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let pre: Vec<f64> = (0..self.b1.len())
            .map(|i| self.b1[i] + self.w1.row(i).iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        let h: Vec<f64> = pre.iter().map(|z| z.max(0.0)).collect();
        let y = (0..self.b2.len())
            .map(|o| self.b2[o] + self.w2.row(o).iter().zip(&h).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        (pre, y)
    }

    /// Accumulates the parameter gradient for upstream `dy` into `grad`.
    fn backward(&self, x: &[f64], pre: &[f64], dy: &[f64], grad: &mut [f64]) {
        let hidden = self.b1.len();
        let n_w1 = self.w1.as_slice().len();
        let n_w2 = self.w2.as_slice().len();
        let (g_w1, rest) = grad.split_at_mut(n_w1);
        let (g_b1, rest) = rest.split_at_mut(hidden);
        let (g_w2, g_b2) = rest.split_at_mut(n_w2);
        let mut dh = vec![0.0; hidden];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            g_b2[o] += g;
            let row = self.w2.row(o);
            for i in 0..hidden {
                g_w2[o * hidden + i] += g * pre[i].max(0.0);
                dh[i] += g * row[i];
            }
        }
        let width = x.len();
        for i in 0..hidden {
            if pre[i] <= 0.0 || dh[i] == 0.0 {
                continue;
            }
            g_b1[i] += dh[i];
            for (k, v) in x.iter().enumerate() {
                g_w1[i * width + k] += dh[i] * v;
            }
        }
    }
}

/// Forecast for `prefix`; always `output_length` steps long.
pub fn forecast_predict(model: &ForecastModel, prefix: &Sequence) -> Result<Sequence> {
    model.check_prefix(prefix)?;
    let (_, y) = model.forward(prefix.as_slice());
    Sequence::new(model.dim, model.output_length, y)
}

/// A prefix and the continuation it should predict.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastPair {
    pub prefix: Sequence,
    pub target: Sequence,
}

/// Splits every series after `floor(split * len)` steps (at least one step
/// on either side). All series must yield the same prefix length.
pub fn split_series(series: &[Sequence], split: f64) -> Result<Vec<ForecastPair>> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::InvalidParameter(format!("split must be in (0, 1), got {split}")));
    }
    let mut cut = None;
    series
        .iter()
        .map(|s| {
            if s.len() < 2 {
                return Err(Error::InvalidParameter("series too short to split".into()));
            }
            let t = ((split * s.len() as f64).floor() as usize).clamp(1, s.len() - 1);
            if *cut.get_or_insert(t) != t {
                return Err(Error::DimensionMismatch(
                    "series split into different prefix lengths".into(),
                ));
            }
            let cols: Vec<Vec<f64>> = s.columns().map(<[f64]>::to_vec).collect();
            Ok(ForecastPair {
                prefix: Sequence::from_columns(&cols[..t])?,
                target: Sequence::from_columns(&cols[t..])?,
            })
        })
        .collect()
}

fn variance_field(sigma: Option<&UncertaintyModel>, psi: &Sequence, target: &Sequence) -> Result<VarianceField> {
    match sigma {
        None => Ok(VarianceField::unit(psi.len(), target.len())),
        Some(m) => compose_variance(&m.predict_token_variance(psi)?, &m.predict_token_variance(target)?),
    }
}

fn check_setup(model: &ForecastModel, sigma: Option<&UncertaintyModel>, pairs: &[ForecastPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Empty("forecast pairs".into()));
    }
    if let Some(m) = sigma {
        if m.variant() != UncertaintyVariant::PerToken || m.d_in() != model.dim {
            return Err(Error::InvalidParameter(
                "forecast variances need a per-token head over the features".into(),
            ));
        }
    }
    for p in pairs {
        model.check_prefix(&p.prefix)?;
        if p.target.dim() != model.dim {
            return Err(Error::DimensionMismatch("target feature dimension".into()));
        }
    }
    Ok(())
}

/// Loss, network gradient, head gradient and coupling of one pair.
type PairGradient = (f64, Vec<f64>, Option<Vec<f64>>, Matrix);

/// Mean loss and its detached-coupling gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastGradient {
    pub loss: f64,
    pub model: Vec<f64>,
    /// Present when a variance head is supplied.
    pub sigma: Option<Vec<f64>>,
    /// The coupling of every pair, for frozen-coupling checks.
    pub couplings: Vec<Matrix>,
}

/// `(1/N) sum_n dist(psi_n, x'_n) + beta * omega(psi_n, x'_n)` and its gradient
/// with every coupling held fixed, for the network and the optional
/// per-token variance head.
pub fn forecast_gradient(
    model: &ForecastModel,
    sigma: Option<&UncertaintyModel>,
    pairs: &[ForecastPair],
    gibbs: &GibbsParams,
) -> Result<ForecastGradient> {
    gibbs.validate()?;
    check_setup(model, sigma, pairs)?;
    let beta = gibbs.beta;
    let parts: Vec<PairGradient> = pairs
        .par_iter()
        .map(|pair| {
            let x = pair.prefix.as_slice();
            let (pre, y) = model.forward(x);
            let psi = Sequence::new(model.dim, model.output_length, y)?;
            let cost = pairwise_cost(&psi, &pair.target)?;
            let var = variance_field(sigma, &psi, &pair.target)?;
            let out = udtw_evaluate(&cost, &var, gibbs)?;
            let g = detached_from_coupling(cost.matrix(), var.entries(), &out.coupling);
            let mut dy = chain_through_cost(&psi, &pair.target, &g.dist_wrt_cost).wrt_a;
            let sigma_grad = match sigma {
                None => None,
                Some(m) => {
                    let (rows, cols) = var.shape();
                    let d_var = Matrix::from_fn(rows, cols, |i, j| {
                        g.dist_wrt_var[(i, j)] + beta * g.omega_wrt_var[(i, j)]
                    });
                    let up_a: Vec<f64> = (0..rows).map(|i| 0.5 * d_var.row(i).iter().sum::<f64>()).collect();
                    let up_b: Vec<f64> = (0..cols)
                        .map(|j| 0.5 * (0..rows).map(|i| d_var[(i, j)]).sum::<f64>())
                        .collect();
                    for (acc, v) in dy.iter_mut().zip(m.token_input_grad(&psi, &up_a)?) {
                        *acc += v;
                    }
                    let mut gw = m.token_grad(&psi, &up_a)?.into_vec();
                    for (acc, v) in gw.iter_mut().zip(m.token_grad(&pair.target, &up_b)?.as_slice()) {
                        *acc += v;
                    }
                    Some(gw)
                }
            };
            let mut grad = vec![0.0; model.n_params()];
            model.backward(x, &pre, &dy, &mut grad);
            Ok((out.score(beta), grad, sigma_grad, out.coupling))
        })
        .collect::<Result<_>>()?;

    let n = pairs.len() as f64;
    let mut loss = 0.0;
    let mut g_model = vec![0.0; model.n_params()];
    let mut g_sigma = sigma.map(|m| vec![0.0; m.params().len()]);
    let mut couplings = Vec::with_capacity(parts.len());
    for (l, g, gs, c) in parts {
        loss += l / n;
        g_model.iter_mut().zip(&g).for_each(|(acc, v)| *acc += v / n);
        if let (Some(acc), Some(gs)) = (g_sigma.as_mut(), gs) {
            acc.iter_mut().zip(&gs).for_each(|(a, v)| *a += v / n);
        }
        couplings.push(c);
    }
    Ok(ForecastGradient {
        loss,
        model: g_model,
        sigma: g_sigma,
        couplings,
    })
}

/// The forecast loss with the given couplings substituted for the Gibbs
/// couplings; [`forecast_gradient`] is its exact derivative.
pub fn forecast_frozen_loss(
    model: &ForecastModel,
    sigma: Option<&UncertaintyModel>,
    pairs: &[ForecastPair],
    couplings: &[Matrix],
    beta: f64,
) -> Result<f64> {
    check_setup(model, sigma, pairs)?;
    if couplings.len() != pairs.len() {
        return Err(Error::DimensionMismatch("one coupling per pair is required".into()));
    }
    let mut total = 0.0;
    for (pair, pi) in pairs.iter().zip(couplings) {
        let psi = forecast_predict(model, &pair.prefix)?;
        let cost = pairwise_cost(&psi, &pair.target)?;
        let var = variance_field(sigma, &psi, &pair.target)?;
        let weighted = Matrix::from_fn(psi.len(), pair.target.len(), |i, j| {
            cost.matrix()[(i, j)] * var.precision()[(i, j)]
        });
        total += pi.dot(&weighted) + beta * pi.dot(&var.log());
    }
    Ok(total / pairs.len() as f64)
}

/// Mean squared error of the forecasts over every target entry.
pub fn forecast_mse(model: &ForecastModel, pairs: &[ForecastPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("forecast pairs".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for pair in pairs {
        let psi = forecast_predict(model, &pair.prefix)?;
        if psi.len() != pair.target.len() {
            return Err(Error::DimensionMismatch(
                "target length differs from model output length".into(),
            ));
        }
        total += squared_distance(psi.as_slice(), pair.target.as_slice());
        count += pair.target.as_slice().len();
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastConfig {
    pub gibbs: GibbsParams,
    pub epochs: usize,
    /// Fixed gradient-descent step for every parameter.
    pub step: f64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            gibbs: GibbsParams::default(),
            epochs: 200,
            step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastReport {
    pub model: ForecastModel,
    pub sigma: Option<UncertaintyModel>,
    /// Training loss at the start of every epoch and after the last one.
    pub trace: Vec<f64>,
}

fn check_loss(loss: f64, epoch: usize) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
        return Err(Error::Diverged(format!(
            "forecast loss {loss:e} at epoch {epoch}; lower the step size"
        )));
    }
    Ok(())
}

/// Full-batch gradient descent on the forecast loss. With a variance head
/// the head is trained jointly; without one all variances are 1.
pub fn forecast_train(
    pairs: &[ForecastPair],
    mut model: ForecastModel,
    mut sigma: Option<UncertaintyModel>,
    cfg: &ForecastConfig,
) -> Result<ForecastReport> {
    if !(cfg.step.is_finite() && cfg.step > 0.0) {
        return Err(Error::InvalidParameter("step must be positive".into()));
    }
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let g = forecast_gradient(&model, sigma.as_ref(), pairs, &cfg.gibbs)?;
        check_loss(g.loss, epoch)?;
        trace.push(g.loss);
        let next: Vec<f64> = model
            .params()
            .iter()
            .zip(&g.model)
            .map(|(p, d)| p - cfg.step * d)
            .collect();
        model
            .set_params(&next)
            .map_err(|_| Error::Diverged(format!("nonfinite parameters at epoch {epoch}")))?;
        if let (Some(m), Some(gs)) = (sigma.as_mut(), g.sigma.as_ref()) {
            let next: Vec<f64> = m.params().iter().zip(gs).map(|(p, d)| p - cfg.step * d).collect();
            m.set_params(&next)?;
        }
    }
    let last = forecast_gradient(&model, sigma.as_ref(), pairs, &cfg.gibbs)?.loss;
    check_loss(last, cfg.epochs)?;
    trace.push(last);
    Ok(ForecastReport { model, sigma, trace })
}
