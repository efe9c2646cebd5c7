//! Dynamic OLS: leads and lags of regressor differences as extra,
//! unpenalized, regime-constant columns.

use nalgebra::DMatrix;

use crate::data::TimeSeriesData;
use crate::error::{invalid, Result};

/// Restrict to observations `l+2 ..= T-l` (1-based) and attach
/// `W_t = (dX_{t-l}, ..., dX_{t+l})`, `N(2l+1)` columns ordered by lead/lag
/// then regressor. Breakpoints estimated on the result map back through
/// [`TimeSeriesData::original_index`].
pub fn augment(data: &TimeSeriesData, l: usize) -> Result<TimeSeriesData> {
    if data.augment().is_some() {
        return invalid("data is already augmented");
    }
    let t_len = data.len();
    if t_len <= 2 * l + 2 {
        return invalid(format!("{l} leads and lags need more than {} observations, got {t_len}", 2 * l + 2));
    }
    let n = data.n_regressors();
    let x = data.x();
    let start = l + 1; // 0-based first retained row
    let end = t_len - l; // exclusive
    let eff = end - start;
    let k = n * (2 * l + 1);
    let w = DMatrix::from_fn(eff, k, |r, c| {
        let t = start + r;
        let shift = c / n; // 0 ..= 2l, lag l first
        let j = c % n;
        let s = t + shift - l;
        x[(s, j)] - x[(s - 1, j)]
    });
    let (y, xs) = data.slice_rows(start, end);
    let mut out = TimeSeriesData::new(y, xs)?.with_augment(w)?;
    if let Some(labels) = data.labels() {
        out = out.with_labels(labels[start..end].to_vec())?;
    }
    Ok(out.with_origin(data.offset() + start, data.original_len()))
}
