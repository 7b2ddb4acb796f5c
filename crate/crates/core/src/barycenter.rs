//! Fréchet means of sequence sets under the uncertainty-weighted alignment.

use rayon::prelude::*;

use crate::align::{
    chain_through_cost, detached_from_coupling, pairwise_cost, udtw_evaluate, GibbsParams, VarianceField,
};
use crate::error::{Error, Result};
use crate::lbfgs::{self, LbfgsOptions};
use crate::sequence::Sequence;
use crate::uncertainty::{logistic, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN};

/// How the variances of the mean are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BarycenterVariance {
    /// All variances are 1.
    #[default]
    FixedUnit,
    /// One learnable variance per timestep of the mean, kept inside
    /// `[0.1, 10]` by a scaled-logistic reparameterisation.
    FreePerTimestep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrechetConfig {
    /// Length of the mean; defaults to the rounded average input length.
    pub target_length: Option<usize>,
    pub gibbs: GibbsParams,
    pub max_iters: usize,
    pub lbfgs_memory: usize,
    /// Stop once the gradient infinity-norm falls to this value.
    pub tol: f64,
    pub variance_mode: BarycenterVariance,
    /// Weight of the optional `sum (log v)^2` pull toward unit variance. Off by default.
    pub unit_penalty: f64,
}

impl Default for FrechetConfig {
    fn default() -> Self {
        Self {
            target_length: None,
            gibbs: GibbsParams::default(),
            max_iters: 100,
            lbfgs_memory: 10,
            tol: 1e-6,
            variance_mode: BarycenterVariance::FixedUnit,
            unit_penalty: 0.0,
        }
    }
}

impl FrechetConfig {
    fn validate(&self) -> Result<()> {
        self.gibbs.validate()?;
        if self.max_iters == 0 || self.lbfgs_memory == 0 {
            return Err(Error::InvalidParameter(
                "max_iters and lbfgs_memory must be at least 1".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("tol must be positive".into()));
        }
        if !(self.unit_penalty >= 0.0) {
            return Err(Error::InvalidParameter("unit penalty must be nonnegative".into()));
        }
        if self.target_length == Some(0) {
            return Err(Error::InvalidParameter("target length must be positive".into()));
        }
        Ok(())
    }
}

fn check_inputs(mean: &Sequence, data: &[Sequence], cfg: &FrechetConfig, variances: Option<&[f64]>) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("barycenter data".into()));
    }
    if data.iter().any(|s| s.dim() != mean.dim()) {
        return Err(Error::DimensionMismatch(
            "data and mean feature dimensions differ".into(),
        ));
    }
    match (cfg.variance_mode, variances) {
        (BarycenterVariance::FixedUnit, None) => Ok(()),
        (BarycenterVariance::FreePerTimestep, Some(v)) if v.len() == mean.len() => {
            if v.iter().all(|x| x.is_finite() && *x > 0.0) {
                Ok(())
            } else {
                Err(Error::InvalidParameter("variances must be positive".into()))
            }
        }
        (BarycenterVariance::FreePerTimestep, Some(_)) => Err(Error::DimensionMismatch(
            "one variance per mean timestep is required".into(),
        )),
        _ => Err(Error::InvalidParameter(
            "variances must be given exactly in free-variance mode".into(),
        )),
    }
}

fn field_for(rows: usize, mean_len: usize, variances: Option<&[f64]>) -> Result<VarianceField> {
    match variances {
        None => Ok(VarianceField::unit(rows, mean_len)),
        Some(v) => VarianceField::from_column_variances(rows, v),
    }
}

fn penalty(cfg: &FrechetConfig, variances: Option<&[f64]>) -> f64 {
    match variances {
        Some(v) if cfg.unit_penalty > 0.0 => cfg.unit_penalty * v.iter().map(|x| x.ln().powi(2)).sum::<f64>(),
        _ => 0.0,
    }
}

/// `sum_n dist(x_n, mean) + beta * omega(x_n, mean)`, plus the optional
/// unit-variance penalty.
pub fn barycenter_objective(
    mean: &Sequence,
    data: &[Sequence],
    cfg: &FrechetConfig,
    variances: Option<&[f64]>,
) -> Result<f64> {
    check_inputs(mean, data, cfg, variances)?;
    let terms: Vec<f64> = data
        .par_iter()
        .map(|x| {
            let cost = pairwise_cost(x, mean)?;
            let var = field_for(x.len(), mean.len(), variances)?;
            Ok(udtw_evaluate(&cost, &var, &cfg.gibbs)?.score(cfg.gibbs.beta))
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum::<f64>() + penalty(cfg, variances))
}

/// Detached-coupling gradient of [`barycenter_objective`].
#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterGradient {
    /// Column-major, same layout as the mean.
    pub mean: Vec<f64>,
    /// Present in free-variance mode.
    pub variances: Option<Vec<f64>>,
}

struct Term {
    score: f64,
    mean_grad: Vec<f64>,
    var_grad: Option<Vec<f64>>,
}

fn term(x: &Sequence, mean: &Sequence, gibbs: &GibbsParams, variances: Option<&[f64]>) -> Result<Term> {
    let cost = pairwise_cost(x, mean)?;
    let var = field_for(x.len(), mean.len(), variances)?;
    let out = udtw_evaluate(&cost, &var, gibbs)?;
    let g = detached_from_coupling(cost.matrix(), var.entries(), &out.coupling);
    let seq_grad = chain_through_cost(x, mean, &g.dist_wrt_cost);
    let var_grad = variances.map(|_| {
        let s = g.score_wrt_var(gibbs.beta);
        (0..mean.len()).map(|j| (0..x.len()).map(|i| s[(i, j)]).sum()).collect()
    });
    Ok(Term {
        score: out.score(gibbs.beta),
        mean_grad: seq_grad.wrt_b,
        var_grad,
    })
}

fn value_and_grad(
    mean: &Sequence,
    data: &[Sequence],
    cfg: &FrechetConfig,
    variances: Option<&[f64]>,
) -> Result<(f64, BarycenterGradient)> {
    let terms: Vec<Term> = data
        .par_iter()
        .map(|x| term(x, mean, &cfg.gibbs, variances))
        .collect::<Result<_>>()?;
    let mut value = penalty(cfg, variances);
    let mut mean_grad = vec![0.0; mean.as_slice().len()];
    let mut var_grad = variances.map(|v| {
        v.iter()
            .map(|x| 2.0 * cfg.unit_penalty * x.ln() / x)
            .collect::<Vec<f64>>()
    });
    for t in &terms {
        value += t.score;
        for (acc, g) in mean_grad.iter_mut().zip(&t.mean_grad) {
            *acc += g;
        }
        if let (Some(acc), Some(g)) = (var_grad.as_mut(), t.var_grad.as_ref()) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
    Ok((
        value,
        BarycenterGradient {
            mean: mean_grad,
            variances: var_grad,
        },
    ))
}

pub fn barycenter_grad(
    mean: &Sequence,
    data: &[Sequence],
    cfg: &FrechetConfig,
    variances: Option<&[f64]>,
) -> Result<BarycenterGradient> {
    check_inputs(mean, data, cfg, variances)?;
    Ok(value_and_grad(mean, data, cfg, variances)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrechetResult {
    pub mean: Sequence,
    /// Per-timestep variances in free-variance mode.
    pub variances: Option<Vec<f64>>,
    /// Objective at the initializer and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// The optimizer stopped after repeated line-search failures.
    pub warning: bool,
}

impl FrechetResult {
    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("trace holds the initial objective")
    }
}

/// Average of the inputs after resampling each to `target_len`.
pub fn euclidean_initializer(data: &[Sequence], target_len: usize) -> Result<Sequence> {
    let first = data.first().ok_or_else(|| Error::Empty("barycenter data".into()))?;
    let mut acc = vec![0.0; first.dim() * target_len];
    for s in data {
        if s.dim() != first.dim() {
            return Err(Error::DimensionMismatch("data feature dimensions differ".into()));
        }
        for (a, v) in acc.iter_mut().zip(s.resample(target_len)?.as_slice()) {
            *a += v;
        }
    }
    let n = data.len() as f64;
    Sequence::new(first.dim(), target_len, acc.into_iter().map(|v| v / n).collect())
}

const SPAN: f64 = DEFAULT_SIGMA_MAX - DEFAULT_SIGMA_MIN;

fn to_variance(theta: f64) -> f64 {
    DEFAULT_SIGMA_MIN + SPAN * logistic(theta)
}

fn from_variance(v: f64) -> f64 {
    let s = (v - DEFAULT_SIGMA_MIN) / SPAN;
    (s / (1.0 - s)).ln()
}

/// L-BFGS minimisation of [`barycenter_objective`], starting from the
/// resampled Euclidean average.
pub fn frechet_mean(data: &[Sequence], cfg: &FrechetConfig) -> Result<FrechetResult> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("barycenter data".into()));
    }
    let target_len = cfg.target_length.unwrap_or_else(|| {
        let total: usize = data.iter().map(Sequence::len).sum();
        ((total as f64 / data.len() as f64).round() as usize).max(1)
    });
    let init = euclidean_initializer(data, target_len)?;
    let dim = init.dim();
    let n_mean = init.as_slice().len();
    let free = cfg.variance_mode == BarycenterVariance::FreePerTimestep;

    let mut x0 = init.as_slice().to_vec();
    if free {
        x0.extend(std::iter::repeat_n(from_variance(1.0), target_len));
    }

    let unpack = |x: &[f64]| -> Result<(Sequence, Option<Vec<f64>>)> {
        let mean = Sequence::new(dim, target_len, x[..n_mean].to_vec())?;
        let vars = free.then(|| x[n_mean..].iter().map(|&t| to_variance(t)).collect());
        Ok((mean, vars))
    };

    let opts = LbfgsOptions {
        max_iters: cfg.max_iters,
        memory: cfg.lbfgs_memory,
        grad_tol: cfg.tol,
        ..Default::default()
    };
    let report = lbfgs::minimize(x0, &opts, |x| {
        let (mean, vars) = match unpack(x) {
            Ok(v) => v,
            // a trial point that left the finite domain is simply rejected
            Err(Error::NonFinite(_)) => return Ok((f64::INFINITY, vec![0.0; x.len()])),
            Err(e) => return Err(e),
        };
        let (value, grad) = value_and_grad(&mean, data, cfg, vars.as_deref())?;
        let mut flat = grad.mean;
        if let Some(gv) = grad.variances {
            for (g, &t) in gv.iter().zip(&x[n_mean..]) {
                let s = logistic(t);
                flat.push(g * SPAN * s * (1.0 - s));
            }
        }
        Ok((value, flat))
    })?;
    let (mean, variances) = unpack(&report.x)?;
    Ok(FrechetResult {
        mean,
        variances,
        trace: report.trace,
        iterations: report.iterations,
        converged: report.converged,
        warning: report.warning,
    })
}
