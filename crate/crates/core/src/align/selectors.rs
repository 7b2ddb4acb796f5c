use super::{GibbsParams, ShiftPolicy};
use crate::error::{Error, Result};

/// Normalized Gibbs weights `exp(-(w_i - mu)/gamma) / sum_j exp(-(w_j - mu)/gamma)`.
///
/// The configured shift is applied first; exponents are then re-centred on
/// their maximum so no term can overflow.
pub fn gibbs_weights(w: &[f64], p: &GibbsParams) -> Result<Vec<f64>> {
    p.validate()?;
    if w.is_empty() {
        return Err(Error::Empty("path cost vector".into()));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("path cost vector".into()));
    }
    let mu = match p.shift {
        ShiftPolicy::Mean => w.iter().sum::<f64>() / w.len() as f64,
        ShiftPolicy::None => 0.0,
    };
    let exponents: Vec<f64> = w.iter().map(|&v| -(v - mu) / p.gamma).collect();
    let top = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = exponents.iter().map(|&a| (a - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    for v in &mut weights {
        *v /= total;
    }
    Ok(weights)
}

/// Gibbs expectation of `w` under its own weights.
pub fn softming(w: &[f64], p: &GibbsParams) -> Result<f64> {
    let weights = gibbs_weights(w, p)?;
    Ok(weights.iter().zip(w).map(|(a, b)| a * b).sum())
}

/// Gibbs expectation of `u` under the weights induced by `w`.
pub fn softminsel(w: &[f64], u: &[f64], p: &GibbsParams) -> Result<f64> {
    if w.len() != u.len() {
        return Err(Error::DimensionMismatch(format!(
            "selector lengths differ: {} vs {}",
            w.len(),
            u.len()
        )));
    }
    let weights = gibbs_weights(w, p)?;
    Ok(weights.iter().zip(u).map(|(a, b)| a * b).sum())
}
