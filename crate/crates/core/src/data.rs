//! Observed sample: response, integrated regressors and optional
//! unpenalized stationary regressors.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

/// A cointegrating-regression sample `y_t = mu + beta_t' X_t (+ W_t' c) + u_t`.
///
/// Rows are observations `t = 1..=T`. `offset` is the number of leading
/// observations of the original sample that were dropped before this one
/// (non-zero after lead/lag augmentation), so that local index `t` maps to
/// original index `t + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesData {
    y: Vec<f64>,
    x: DMatrix<f64>,
    w: Option<DMatrix<f64>>,
    labels: Option<Vec<String>>,
    offset: usize,
    original_len: usize,
}

impl TimeSeriesData {
    pub fn new(y: Vec<f64>, x: DMatrix<f64>) -> Result<Self> {
        let original_len = y.len();
        let data = Self {
            y,
            x,
            w: None,
            labels: None,
            offset: 0,
            original_len,
        };
        data.validate()?;
        Ok(data)
    }

    /// Builds a sample from row-major regressor rows.
    pub fn from_rows(y: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "y has {} observations but X has {} rows",
                y.len(),
                rows.len()
            )));
        }
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("ragged regressor rows".into()));
        }
        let x = DMatrix::from_fn(rows.len(), n, |t, j| rows[t][j]);
        Self::new(y, x)
    }

    pub fn with_augment(mut self, w: DMatrix<f64>) -> Result<Self> {
        self.w = Some(w);
        self.validate()?;
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} observations",
                labels.len(),
                self.y.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub(crate) fn with_origin(mut self, offset: usize, original_len: usize) -> Self {
        self.offset = offset;
        self.original_len = original_len;
        self
    }

    fn validate(&self) -> Result<()> {
        let t = self.y.len();
        let n = self.x.ncols();
        if n == 0 {
            return invalid("at least one regressor is required");
        }
        if self.x.nrows() != t {
            return Err(Error::DimensionMismatch(format!(
                "y has {t} observations but X has {} rows",
                self.x.nrows()
            )));
        }
        if t < 2 * (n + 1) {
            return invalid(format!(
                "sample too short: T = {t} but at least {} observations are needed for N = {n}",
                2 * (n + 1)
            ));
        }
        if self.y.iter().any(|v| !v.is_finite()) || self.x.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite value in y or X");
        }
        if let Some(w) = &self.w {
            if w.nrows() != t {
                return Err(Error::DimensionMismatch(format!(
                    "augment matrix has {} rows, expected {t}",
                    w.nrows()
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return invalid("non-finite value in augment matrix");
            }
        }
        Ok(())
    }

    /// Rejects samples the penalized estimators cannot identify: a constant
    /// regressor column is collinear with the intercept.
    pub fn check_estimable(&self) -> Result<()> {
        for j in 0..self.x.ncols() {
            let col = self.x.column(j);
            let first = col[0];
            if col.iter().all(|&v| v == first) {
                return invalid(format!("regressor column {} is constant", j + 1));
            }
        }
        Ok(())
    }

    /// Sample length `T`.
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Number of integrated regressors `N`.
    pub fn n_regressors(&self) -> usize {
        self.x.ncols()
    }

    /// Number of unpenalized augment columns `K` (0 without augmentation).
    pub fn n_augment(&self) -> usize {
        self.w.as_ref().map_or(0, |w| w.ncols())
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn augment(&self) -> Option<&DMatrix<f64>> {
        self.w.as_ref()
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Length of the sample this one was derived from.
    pub fn original_len(&self) -> usize {
        self.original_len
    }

    /// Maps a local 1-based observation index to the original sample.
    pub fn original_index(&self, t: usize) -> usize {
        t + self.offset
    }

    /// Label of local 1-based observation `t`, if labels are attached.
    pub fn label(&self, t: usize) -> Option<&str> {
        self.labels
            .as_ref()
            .and_then(|l| l.get(t.checked_sub(1)?))
            .map(String::as_str)
    }

    /// Restricts to local rows `start..end` (0-based, half open).
    pub(crate) fn slice_rows(&self, start: usize, end: usize) -> (Vec<f64>, DMatrix<f64>) {
        let y = self.y[start..end].to_vec();
        let x = self.x.rows(start, end - start).into_owned();
        (y, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_samples() {
        let x = DMatrix::from_fn(3, 1, |t, _| t as f64);
        assert!(TimeSeriesData::new(vec![1.0, 2.0, 3.0], x).is_err());
    }

    #[test]
    fn rejects_constant_regressor() {
        let x = DMatrix::from_element(10, 1, 1.0);
        let data = TimeSeriesData::new(vec![0.0; 10], x).unwrap();
        let err = data.check_estimable().unwrap_err();
        assert!(err.to_string().contains("constant"));
    }

    #[test]
    fn rejects_nan() {
        let mut y = vec![0.0; 10];
        y[3] = f64::NAN;
        let x = DMatrix::from_fn(10, 1, |t, _| t as f64);
        assert!(TimeSeriesData::new(y, x).is_err());
    }

    #[test]
    fn label_lookup_is_one_based() {
        let x = DMatrix::from_fn(4, 1, |t, _| t as f64);
        let data = TimeSeriesData::new(vec![0.0; 4], x)
            .unwrap()
            .with_labels(vec!["a".into(), "b".into(), "c".into(), "d".into()])
            .unwrap();
        assert_eq!(data.label(1), Some("a"));
        assert_eq!(data.label(4), Some("d"));
        assert_eq!(data.label(0), None);
    }
}
