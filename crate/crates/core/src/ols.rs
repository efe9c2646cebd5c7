//! Least squares with a common intercept, common augment coefficients and
//! regime-specific slopes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesData;
use crate::design::ThetaVector;
use crate::error::{Error, Result};

/// A fitted (or true) break model.
///
/// `breakpoints` are local 1-based indices of the first observation of each
/// new regime; `offset` and `original_len` map them back to the sample the
/// data was derived from (they differ only after lead/lag augmentation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakModel {
    pub breakpoints: Vec<usize>,
    pub segment_betas: Vec<Vec<f64>>,
    pub intercept: f64,
    pub augment_coefs: Vec<f64>,
    pub residuals: Vec<f64>,
    pub ssr: f64,
    pub sample_len: usize,
    pub offset: usize,
    pub original_len: usize,
}

impl BreakModel {
    pub fn n_breaks(&self) -> usize {
        self.breakpoints.len()
    }

    /// Breakpoints in original-sample indexing.
    pub fn original_breakpoints(&self) -> Vec<usize> {
        self.breakpoints.iter().map(|b| b + self.offset).collect()
    }

    /// Break fractions `t_j / T` on the original sample.
    pub fn break_fractions(&self) -> Vec<f64> {
        self.original_breakpoints()
            .iter()
            .map(|&b| b as f64 / self.original_len as f64)
            .collect()
    }

    /// Baseline coefficients followed by the change at every break.
    pub fn coefficient_changes(&self) -> Vec<Vec<f64>> {
        let mut out = vec![self.segment_betas[0].clone()];
        for w in self.segment_betas.windows(2) {
            out.push(w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect());
        }
        out
    }

    pub fn theta(&self) -> Result<ThetaVector> {
        ThetaVector::from_regimes(self.sample_len, &self.breakpoints, &self.segment_betas)
    }
}

pub(crate) fn check_breakpoints(t_len: usize, breakpoints: &[usize]) -> Result<()> {
    let mut prev = 1usize;
    for &b in breakpoints {
        if b <= prev || b > t_len {
            return Err(Error::InvalidInput(format!(
                "breakpoints must be strictly increasing in [2, {t_len}], got {breakpoints:?}"
            )));
        }
        prev = b;
    }
    Ok(())
}

/// Joint least squares of `y` on `[1, W, X * 1{regime j}]` for the regimes
/// implied by `breakpoints`.
pub fn segment_ols(data: &TimeSeriesData, breakpoints: &[usize]) -> Result<BreakModel> {
    let t_len = data.len();
    let n = data.n_regressors();
    let k = data.n_augment();
    check_breakpoints(t_len, breakpoints)?;

    let min_len = n + k + 2;
    let mut bounds = Vec::with_capacity(breakpoints.len() + 2);
    bounds.push(1);
    bounds.extend_from_slice(breakpoints);
    bounds.push(t_len + 1);
    for w in bounds.windows(2) {
        if w[1] - w[0] < min_len {
            return Err(Error::Infeasible(format!(
                "regime starting at {} has {} observations; at least {min_len} required",
                w[0],
                w[1] - w[0]
            )));
        }
    }

    let regimes = breakpoints.len() + 1;
    let cols = 1 + k + regimes * n;
    let x = data.x();
    let mut design = DMatrix::zeros(t_len, cols);
    let mut regime = 0usize;
    for t in 0..t_len {
        while regime + 1 < regimes && t + 1 >= bounds[regime + 1] {
            regime += 1;
        }
        design[(t, 0)] = 1.0;
        if let Some(w) = data.augment() {
            for c in 0..k {
                design[(t, 1 + c)] = w[(t, c)];
            }
        }
        for j in 0..n {
            design[(t, 1 + k + regime * n + j)] = x[(t, j)];
        }
    }
    let y = DVector::from_column_slice(data.y());
    let coef = least_squares(&design, &y)?;
    let fitted = &design * &coef;
    let residuals: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let ssr = residuals.iter().map(|r| r * r).sum();

    let segment_betas = (0..regimes)
        .map(|r| (0..n).map(|j| coef[1 + k + r * n + j]).collect())
        .collect();
    Ok(BreakModel {
        breakpoints: breakpoints.to_vec(),
        segment_betas,
        intercept: coef[0],
        augment_coefs: (0..k).map(|c| coef[1 + c]).collect(),
        residuals,
        ssr,
        sample_len: t_len,
        offset: data.offset(),
        original_len: data.original_len(),
    })
}

/// Householder QR least squares with a relative rank check.
pub(crate) fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = a.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tiny = diag_max * 1e-11 * (a.nrows() as f64).sqrt();
    if diag_max == 0.0 || r.diagonal().iter().any(|v| v.abs() <= tiny) {
        return Err(Error::RankDeficient(format!(
            "{} x {} regressor matrix is (numerically) rank deficient",
            a.nrows(),
            a.ncols()
        )));
    }
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::RankDeficient("triangular solve failed".into()))
}
