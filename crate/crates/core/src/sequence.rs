//! Ordered collections of feature vectors.

use crate::error::{Error, Result};

/// A `dim x len` matrix of features stored column by column, so each timestep
/// (or token) is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    dim: usize,
    len: usize,
    data: Vec<f64>,
    name: Option<String>,
}

impl Sequence {
    /// `data` holds `len` consecutive columns of `dim` entries each.
    pub fn new(dim: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || len == 0 {
            return Err(Error::Empty(format!("sequence of shape {dim}x{len}")));
        }
        if data.len() != dim * len {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {dim}x{len} sequence",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sequence".into()));
        }
        Ok(Self {
            dim,
            len,
            data,
            name: None,
        })
    }

    /// Univariate sequence, one scalar per timestep.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(1, values.len(), values.to_vec())
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let dim = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != dim) {
            return Err(Error::DimensionMismatch("columns of unequal length".into()));
        }
        Self::new(dim, columns.len(), columns.concat())
    }

    /// Builds from feature rows (`dim` rows of `len` values), the on-disk layout.
    pub fn from_feature_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != len) {
            return Err(Error::DimensionMismatch("ragged feature rows".into()));
        }
        let mut data = Vec::with_capacity(dim * len);
        for t in 0..len {
            for row in rows {
                data.push(row[t]);
            }
        }
        Self::new(dim, len, data)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn column(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Column-major values.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn feature_row(&self, k: usize) -> Vec<f64> {
        self.columns().map(|c| c[k]).collect()
    }

    /// Linear interpolation of every feature onto `target_len` evenly spaced
    /// points spanning the original index range.
    pub fn resample(&self, target_len: usize) -> Result<Sequence> {
        if target_len == 0 {
            return Err(Error::InvalidParameter("resample length must be positive".into()));
        }
        if target_len == self.len {
            return Sequence::new(self.dim, self.len, self.data.clone());
        }
        let mut data = Vec::with_capacity(self.dim * target_len);
        for j in 0..target_len {
            let pos = if target_len == 1 {
                0.0
            } else {
                j as f64 * (self.len - 1) as f64 / (target_len - 1) as f64
            };
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(self.len - 1);
            let frac = pos - lo as f64;
            for k in 0..self.dim {
                let a = self.column(lo)[k];
                let b = self.column(hi)[k];
                data.push(a + frac * (b - a));
            }
        }
        Sequence::new(self.dim, target_len, data)
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_rows_are_transposed_into_columns() {
        let s = Sequence::from_feature_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(s.column(0), &[1.0, 3.0]);
        assert_eq!(s.column(1), &[2.0, 4.0]);
        assert_eq!(s.feature_row(1), vec![3.0, 4.0]);
    }

    #[test]
    fn rejects_nan_and_empty() {
        assert!(Sequence::from_scalars(&[1.0, f64::NAN]).is_err());
        assert!(Sequence::from_scalars(&[]).is_err());
    }

    #[test]
    fn resample_interpolates_linearly() {
        let s = Sequence::from_scalars(&[0.0, 2.0]).unwrap();
        let r = s.resample(3).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 1.0, 2.0]);
        let one = Sequence::from_scalars(&[5.0]).unwrap().resample(4).unwrap();
        assert_eq!(one.as_slice(), &[5.0; 4]);
    }
}
