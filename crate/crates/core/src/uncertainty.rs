//! Small learnable heads that map features to bounded positive variances.
//!
//! A bias-free linear map is averaged over its hidden units and squashed by a
//! scaled logistic into `(sigma_min, sigma_max)`. The per-token variant reads
//! one feature vector; the pairwise variant reads the concatenation of one
//! column from each sequence.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::align::{compose_variance, VarianceField, VarianceMode};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sequence::Sequence;

pub const DEFAULT_SIGMA_MIN: f64 = 0.1;
pub const DEFAULT_SIGMA_MAX: f64 = 10.0;
const FILE_HEADER: &str = "udtw-sigmanet v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UncertaintyVariant {
    PerToken,
    Pairwise,
}

impl UncertaintyVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PerToken => "per_token",
            Self::Pairwise => "pairwise",
        }
    }
}

pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyModel {
    /// `d_in x hidden`.
    weights: Matrix,
    variant: UncertaintyVariant,
    sigma_min: f64,
    sigma_max: f64,
}

impl UncertaintyModel {
    pub fn new(weights: Matrix, variant: UncertaintyVariant, sigma_min: f64, sigma_max: f64) -> Result<Self> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::Empty("uncertainty weights".into()));
        }
        if !weights.is_finite() {
            return Err(Error::NonFinite("uncertainty weights".into()));
        }
        if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "variance range must satisfy 0 < sigma_min < sigma_max, got [{sigma_min}, {sigma_max}]"
            )));
        }
        Ok(Self {
            weights,
            variant,
            sigma_min,
            sigma_max,
        })
    }

    pub fn zeros(d_in: usize, hidden: usize, variant: UncertaintyVariant) -> Result<Self> {
        Self::new(
            Matrix::zeros(d_in, hidden),
            variant,
            DEFAULT_SIGMA_MIN,
            DEFAULT_SIGMA_MAX,
        )
    }

    /// Weights uniform in `[-1/sqrt(d_in), 1/sqrt(d_in)]`.
    pub fn random<R: Rng + ?Sized>(
        d_in: usize,
        hidden: usize,
        variant: UncertaintyVariant,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (d_in.max(1) as f64).sqrt();
        let w = Matrix::from_fn(d_in, hidden, |_, _| rng.random_range(-bound..=bound));
        Self::new(w, variant, DEFAULT_SIGMA_MIN, DEFAULT_SIGMA_MAX)
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn variant(&self) -> UncertaintyVariant {
        self.variant
    }

    pub fn d_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn hidden(&self) -> usize {
        self.weights.cols()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.sigma_min, self.sigma_max)
    }

    /// Flat row-major weights.
    pub fn params(&self) -> &[f64] {
        self.weights.as_slice()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.weights.as_slice().len() {
            return Err(Error::DimensionMismatch("parameter vector length".into()));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("uncertainty weights".into()));
        }
        self.weights.as_mut_slice().copy_from_slice(params);
        Ok(())
    }

    /// Row means of the weights: `z = pooled . x`.
    fn pooled(&self) -> Vec<f64> {
        let h = self.hidden() as f64;
        (0..self.d_in())
            .map(|i| self.weights.row(i).iter().sum::<f64>() / h)
            .collect()
    }

    /// Mean over hidden units of `W^T x`.
    pub fn pre_activation(&self, x: &[f64]) -> f64 {
        self.pooled().iter().zip(x).map(|(w, v)| w * v).sum()
    }

    pub fn variance_from_pre_activation(&self, z: f64) -> f64 {
        self.sigma_min + (self.sigma_max - self.sigma_min) * logistic(z)
    }

    /// `d variance / d z`.
    pub fn variance_slope(&self, z: f64) -> f64 {
        let s = logistic(z);
        (self.sigma_max - self.sigma_min) * s * (1.0 - s)
    }

    fn expect(&self, variant: UncertaintyVariant, d_in: usize) -> Result<()> {
        if self.variant != variant {
            return Err(Error::InvalidParameter(format!(
                "model is {} but a {} prediction was requested",
                self.variant.as_str(),
                variant.as_str()
            )));
        }
        if self.d_in() != d_in {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} input features, got {d_in}",
                self.d_in()
            )));
        }
        Ok(())
    }

    pub fn predict_token_variance(&self, s: &Sequence) -> Result<Vec<f64>> {
        self.expect(UncertaintyVariant::PerToken, s.dim())?;
        let pooled = self.pooled();
        Ok(s.columns()
            .map(|x| {
                let z: f64 = pooled.iter().zip(x).map(|(w, v)| w * v).sum();
                self.variance_from_pre_activation(z)
            })
            .collect())
    }

    fn pair_pre_activation(pooled: &[f64], x: &[f64], y: &[f64]) -> f64 {
        let (pa, pb) = pooled.split_at(x.len());
        pa.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + pb.iter().zip(y).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict_pairwise_variance(&self, a: &Sequence, b: &Sequence) -> Result<VarianceField> {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch("feature dimensions differ".into()));
        }
        self.expect(UncertaintyVariant::Pairwise, 2 * a.dim())?;
        let pooled = self.pooled();
        let m = Matrix::from_fn(a.len(), b.len(), |i, j| {
            self.variance_from_pre_activation(Self::pair_pre_activation(&pooled, a.column(i), b.column(j)))
        });
        VarianceField::new(m, VarianceMode::JointPairwise)
    }

    /// Chain `dL/d variance_t` back to the weights for a per-token prediction.
    pub fn token_grad(&self, s: &Sequence, upstream: &[f64]) -> Result<Matrix> {
        self.expect(UncertaintyVariant::PerToken, s.dim())?;
        if upstream.len() != s.len() {
            return Err(Error::DimensionMismatch(
                "one upstream gradient per token is required".into(),
            ));
        }
        let pooled = self.pooled();
        // dL/d pooled_i, then spread evenly over the hidden units
        let mut wrt_pooled = vec![0.0; self.d_in()];
        for (x, &g) in s.columns().zip(upstream) {
            if g == 0.0 {
                continue;
            }
            let z: f64 = pooled.iter().zip(x).map(|(w, v)| w * v).sum();
            let dz = g * self.variance_slope(z);
            for (acc, v) in wrt_pooled.iter_mut().zip(x) {
                *acc += dz * v;
            }
        }
        Ok(self.spread(&wrt_pooled))
    }

    /// `dL/dx_t` for every token, given `dL/d variance_t`.
    pub fn token_input_grad(&self, s: &Sequence, upstream: &[f64]) -> Result<Vec<f64>> {
        self.expect(UncertaintyVariant::PerToken, s.dim())?;
        if upstream.len() != s.len() {
            return Err(Error::DimensionMismatch(
                "one upstream gradient per token is required".into(),
            ));
        }
        let pooled = self.pooled();
        let mut out = Vec::with_capacity(s.as_slice().len());
        for (x, &g) in s.columns().zip(upstream) {
            let z: f64 = pooled.iter().zip(x).map(|(w, v)| w * v).sum();
            let dz = g * self.variance_slope(z);
            out.extend(pooled.iter().map(|w| dz * w));
        }
        Ok(out)
    }

    /// Chain `dL/d variance[m, n]` back to the weights for a pairwise prediction.
    pub fn pairwise_grad(&self, a: &Sequence, b: &Sequence, upstream: &Matrix) -> Result<Matrix> {
        self.expect(UncertaintyVariant::Pairwise, 2 * a.dim())?;
        if upstream.shape() != (a.len(), b.len()) {
            return Err(Error::DimensionMismatch("upstream gradient shape".into()));
        }
        let pooled = self.pooled();
        let d = a.dim();
        let mut wrt_pooled = vec![0.0; self.d_in()];
        for i in 0..a.len() {
            for j in 0..b.len() {
                let g = upstream[(i, j)];
                if g == 0.0 {
                    continue;
                }
                let (x, y) = (a.column(i), b.column(j));
                let dz = g * self.variance_slope(Self::pair_pre_activation(&pooled, x, y));
                for k in 0..d {
                    wrt_pooled[k] += dz * x[k];
                    wrt_pooled[d + k] += dz * y[k];
                }
            }
        }
        Ok(self.spread(&wrt_pooled))
    }

    fn spread(&self, wrt_pooled: &[f64]) -> Matrix {
        let h = self.hidden() as f64;
        Matrix::from_fn(self.d_in(), self.hidden(), |i, _| wrt_pooled[i] / h)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FILE_HEADER}");
        let _ = writeln!(out, "{} {}", self.d_in(), self.hidden());
        let _ = writeln!(
            out,
            "{} {:.16e} {:.16e}",
            self.variant.as_str(),
            self.sigma_min,
            self.sigma_max
        );
        for i in 0..self.d_in() {
            let row: Vec<String> = self.weights.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    /// Parses [`to_text`](Self::to_text) output; leading `#` comment lines are skipped.
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let comments = text.lines().take_while(|l| l.starts_with('#')).count();
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line + comments,
            column: 1,
            message,
        };
        let mut lines = text.lines().skip(comments);
        if lines.next().map(str::trim) != Some(FILE_HEADER) {
            return Err(err(1, format!("expected header '{FILE_HEADER}'")));
        }
        let dims: Vec<usize> = lines
            .next()
            .ok_or_else(|| err(2, "missing dimensions".into()))?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| err(2, e.to_string())))
            .collect::<Result<_>>()?;
        let [d_in, hidden] = dims[..] else {
            return Err(err(2, "expected '<d_in> <hidden>'".into()));
        };
        let meta: Vec<&str> = lines
            .next()
            .ok_or_else(|| err(3, "missing variant line".into()))?
            .split_whitespace()
            .collect();
        let [variant, lo, hi] = meta[..] else {
            return Err(err(3, "expected '<variant> <sigma_min> <sigma_max>'".into()));
        };
        let variant = match variant {
            "per_token" => UncertaintyVariant::PerToken,
            "pairwise" => UncertaintyVariant::Pairwise,
            other => return Err(err(3, format!("unknown variant '{other}'"))),
        };
        let parse = |t: &str, line: usize| t.parse::<f64>().map_err(|e| err(line, format!("'{t}': {e}")));
        let (lo, hi) = (parse(lo, 3)?, parse(hi, 3)?);
        let mut rows = Vec::with_capacity(d_in);
        for i in 0..d_in {
            let line_no = 4 + i;
            let row: Vec<f64> = lines
                .next()
                .ok_or_else(|| err(line_no, "missing weight row".into()))?
                .split_whitespace()
                .map(|t| parse(t, line_no))
                .collect::<Result<_>>()?;
            if row.len() != hidden {
                return Err(err(line_no, format!("expected {hidden} weights, found {}", row.len())));
            }
            rows.push(row);
        }
        Self::new(Matrix::from_rows(&rows)?, variant, lo, hi)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text, path)
    }
}

/// Where the variances of a pair come from.
#[derive(Debug, Clone, Copy)]
pub enum VarianceSource<'a> {
    Unit,
    PerToken(&'a UncertaintyModel),
    Pairwise(&'a UncertaintyModel),
}

impl VarianceSource<'_> {
    pub fn field(&self, a: &Sequence, b: &Sequence) -> Result<VarianceField> {
        match self {
            Self::Unit => Ok(VarianceField::unit(a.len(), b.len())),
            Self::PerToken(model) => {
                compose_variance(&model.predict_token_variance(a)?, &model.predict_token_variance(b)?)
            }
            Self::Pairwise(model) => model.predict_pairwise_variance(a, b),
        }
    }
}
