//! Implicit algebra for the cumulative break design.
//!
//! Row `t` of the design holds `X_t'` in every group block `i <= t` and zeros
//! afterwards, so `Z theta` is a running prefix sum of the groups and `Z' r`
//! is a running suffix sum of `X_t r_t`. Nothing here materializes the
//! `T x TN` matrix.
//!
//! Index convention: groups and breakpoints are 1-based observation indices.
//! A group at index `i >= 2` is the coefficient change that takes effect at
//! observation `i`, i.e. regime `j` covers `t_{j-1} <= t < t_j`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesData;
use crate::error::{Error, Result};

/// Group-sparse parameter-change vector.
///
/// Only non-zero groups are stored, except the baseline group at index 1
/// which is always present (possibly zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    t_len: usize,
    n: usize,
    groups: Vec<(usize, Vec<f64>)>,
}

impl ThetaVector {
    pub fn new(t_len: usize, n: usize, groups: Vec<(usize, Vec<f64>)>) -> Result<Self> {
        let mut prev = 0usize;
        for (idx, v) in &groups {
            if *idx <= prev || *idx > t_len {
                return Err(Error::InvalidInput(format!(
                    "group indices must be strictly increasing in [1, {t_len}], got {idx}"
                )));
            }
            if v.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "group {idx} has length {} but N = {n}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("group {idx} is not finite")));
            }
            prev = *idx;
        }
        let mut kept: Vec<(usize, Vec<f64>)> = groups
            .into_iter()
            .filter(|(i, v)| *i == 1 || v.iter().any(|x| *x != 0.0))
            .collect();
        if kept.first().map_or(true, |(i, _)| *i != 1) {
            kept.insert(0, (1, vec![0.0; n]));
        }
        Ok(Self {
            t_len,
            n,
            groups: kept,
        })
    }

    pub fn zeros(t_len: usize, n: usize) -> Self {
        Self {
            t_len,
            n,
            groups: vec![(1, vec![0.0; n])],
        }
    }

    /// Differences a piecewise-constant path back into groups: baseline
    /// `beta_1` at index 1 and `beta_{j+1} - beta_j` at each breakpoint.
    pub fn from_regimes(t_len: usize, breakpoints: &[usize], betas: &[Vec<f64>]) -> Result<Self> {
        if betas.len() != breakpoints.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} regimes for {} breakpoints",
                betas.len(),
                breakpoints.len()
            )));
        }
        let n = betas[0].len();
        let mut groups = vec![(1, betas[0].clone())];
        for (j, &b) in breakpoints.iter().enumerate() {
            if b < 2 {
                return Err(Error::InvalidInput(format!("breakpoint {b} must be >= 2")));
            }
            let diff: Vec<f64> = betas[j + 1]
                .iter()
                .zip(&betas[j])
                .map(|(a, c)| a - c)
                .collect();
            groups.push((b, diff));
        }
        Self::new(t_len, n, groups)
    }

    pub fn len(&self) -> usize {
        self.t_len
    }

    pub fn is_empty(&self) -> bool {
        self.t_len == 0
    }

    pub fn group_width(&self) -> usize {
        self.n
    }

    /// Stored groups as `(index, change vector)`, baseline first.
    pub fn groups(&self) -> &[(usize, Vec<f64>)] {
        &self.groups
    }

    pub fn group(&self, index: usize) -> Option<&[f64]> {
        self.groups
            .binary_search_by_key(&index, |(i, _)| *i)
            .ok()
            .map(|k| self.groups[k].1.as_slice())
    }

    /// Euclidean norm of the group at `index` (0 when not stored).
    pub fn group_norm(&self, index: usize) -> f64 {
        self.group(index).map_or(0.0, norm)
    }

    /// Indices `i >= 2` with a non-zero group.
    pub fn active_set(&self) -> Vec<usize> {
        self.groups
            .iter()
            .filter(|(i, v)| *i >= 2 && v.iter().any(|x| *x != 0.0))
            .map(|(i, _)| *i)
            .collect()
    }

    pub fn cumulative_coefficients(&self) -> CoefficientPath {
        cumulative_coefficients(self)
    }
}

/// Piecewise-constant coefficient path `t -> beta_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPath {
    t_len: usize,
    starts: Vec<usize>,
    values: Vec<Vec<f64>>,
}

impl CoefficientPath {
    /// Coefficient vector in force at 1-based observation `t`.
    pub fn at(&self, t: usize) -> &[f64] {
        assert!(t >= 1 && t <= self.t_len, "t = {t} outside [1, {}]", self.t_len);
        let k = self.starts.partition_point(|&s| s <= t) - 1;
        &self.values[k]
    }

    /// Regime start indices (first is always 1).
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    /// Coefficient vector of each regime.
    pub fn regimes(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Dense `T x N` matrix with row `t-1` equal to `beta_t`.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.values[0].len();
        let mut m = DMatrix::zeros(self.t_len, n);
        for (k, &s) in self.starts.iter().enumerate() {
            let end = self.starts.get(k + 1).map_or(self.t_len, |e| e - 1);
            for t in (s - 1)..end {
                for j in 0..n {
                    m[(t, j)] = self.values[k][j];
                }
            }
        }
        m
    }
}

/// Prefix sums of the stored groups: `beta_t = sum_{i <= t} theta_i`.
pub fn cumulative_coefficients(theta: &ThetaVector) -> CoefficientPath {
    let mut acc = vec![0.0; theta.n];
    let mut starts = Vec::with_capacity(theta.groups.len());
    let mut values = Vec::with_capacity(theta.groups.len());
    for (i, v) in &theta.groups {
        for (a, d) in acc.iter_mut().zip(v) {
            *a += d;
        }
        starts.push(*i);
        values.push(acc.clone());
    }
    CoefficientPath {
        t_len: theta.t_len,
        starts,
        values,
    }
}

/// `mu + Z theta` in one forward pass.
pub fn fitted_values(data: &TimeSeriesData, theta: &ThetaVector, intercept: f64) -> Result<Vec<f64>> {
    check_theta(data, theta)?;
    let t_len = data.len();
    let n = data.n_regressors();
    let x = data.x();
    let mut beta = vec![0.0; n];
    let mut next = 0usize;
    let groups = theta.groups();
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        while next < groups.len() && groups[next].0 == t + 1 {
            for (b, d) in beta.iter_mut().zip(&groups[next].1) {
                *b += d;
            }
            next += 1;
        }
        let mut f = intercept;
        for (j, b) in beta.iter().enumerate() {
            f += b * x[(t, j)];
        }
        out.push(f);
    }
    Ok(out)
}

/// Contribution `W_t' c` of the unpenalized augment columns.
pub fn augment_contribution(data: &TimeSeriesData, coefs: &[f64]) -> Result<Vec<f64>> {
    let t_len = data.len();
    match data.augment() {
        None if coefs.is_empty() => Ok(vec![0.0; t_len]),
        None => Err(Error::DimensionMismatch(
            "augment coefficients supplied for a sample without augment columns".into(),
        )),
        Some(w) => {
            if w.ncols() != coefs.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} augment coefficients for {} columns",
                    coefs.len(),
                    w.ncols()
                )));
            }
            Ok((0..t_len)
                .map(|t| (0..w.ncols()).map(|k| w[(t, k)] * coefs[k]).sum())
                .collect())
        }
    }
}

/// Suffix sums `g_i = sum_{s >= i} X_s r_s`, returned as a `T x N` matrix
/// whose row `i-1` is `g_i`.
pub fn gradient_blocks(data: &TimeSeriesData, residual: &[f64]) -> Result<DMatrix<f64>> {
    let t_len = data.len();
    if residual.len() != t_len {
        return Err(Error::DimensionMismatch(format!(
            "residual has length {} but T = {t_len}",
            residual.len()
        )));
    }
    let n = data.n_regressors();
    let mut flat = vec![0.0; t_len * n];
    suffix_gradient(data.x(), residual, &mut flat);
    Ok(DMatrix::from_fn(t_len, n, |t, j| flat[t * n + j]))
}

/// Row-major suffix sums of `X_s r_s` into `out` (length `T*N`).
pub(crate) fn suffix_gradient(x: &DMatrix<f64>, residual: &[f64], out: &mut [f64]) {
    let t_len = x.nrows();
    let n = x.ncols();
    let mut acc = vec![0.0; n];
    for t in (0..t_len).rev() {
        for j in 0..n {
            acc[j] += x[(t, j)] * residual[t];
            out[t * n + j] = acc[j];
        }
    }
}

fn check_theta(data: &TimeSeriesData, theta: &ThetaVector) -> Result<()> {
    if theta.len() != data.len() || theta.group_width() != data.n_regressors() {
        return Err(Error::DimensionMismatch(format!(
            "theta is {}x{} but data is T = {}, N = {}",
            theta.len(),
            theta.group_width(),
            data.len(),
            data.n_regressors()
        )));
    }
    Ok(())
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Suffix cross-moments of the sample, enough to form any inner product
/// between design group blocks, the unpenalized block `U = [1, W]` and `y`.
///
/// `Z_a' Z_b = gram(max(a, b))`, `Z_a' U = xu(a)`, `Z_a' y = xy(a)` with
/// 0-based group starts.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    pub t_len: usize,
    pub n: usize,
    /// Columns of the unpenalized block (intercept plus augment columns).
    pub p: usize,
    gram: Vec<f64>,
    xu: Vec<f64>,
    xy: Vec<f64>,
    pub utu: Vec<f64>,
    pub uty: Vec<f64>,
    pub yy: f64,
}

impl Moments {
    pub fn new(data: &TimeSeriesData) -> Self {
        let t_len = data.len();
        let n = data.n_regressors();
        let k = data.n_augment();
        let p = 1 + k;
        let x = data.x();
        let y = data.y();
        let w = data.augment();
        let u_row = |t: usize, c: usize| -> f64 {
            if c == 0 {
                1.0
            } else {
                w.map_or(0.0, |w| w[(t, c - 1)])
            }
        };

        let mut gram = vec![0.0; t_len * n * n];
        let mut xu = vec![0.0; t_len * n * p];
        let mut xy = vec![0.0; t_len * n];
        let mut g_acc = vec![0.0; n * n];
        let mut xu_acc = vec![0.0; n * p];
        let mut xy_acc = vec![0.0; n];
        for t in (0..t_len).rev() {
            for a in 0..n {
                let xa = x[(t, a)];
                for b in 0..n {
                    g_acc[a * n + b] += xa * x[(t, b)];
                }
                for c in 0..p {
                    xu_acc[a * p + c] += xa * u_row(t, c);
                }
                xy_acc[a] += xa * y[t];
            }
            gram[t * n * n..(t + 1) * n * n].copy_from_slice(&g_acc);
            xu[t * n * p..(t + 1) * n * p].copy_from_slice(&xu_acc);
            xy[t * n..(t + 1) * n].copy_from_slice(&xy_acc);
        }

        let mut utu = vec![0.0; p * p];
        let mut uty = vec![0.0; p];
        let mut yy = 0.0;
        for t in 0..t_len {
            for c in 0..p {
                let uc = u_row(t, c);
                for d in 0..p {
                    utu[c * p + d] += uc * u_row(t, d);
                }
                uty[c] += uc * y[t];
            }
            yy += y[t] * y[t];
        }

        Self {
            t_len,
            n,
            p,
            gram,
            xu,
            xy,
            utu,
            uty,
            yy,
        }
    }

    /// `sum_{s >= start} X_s X_s'` as a row-major `N x N` slice.
    #[inline]
    pub fn gram(&self, start: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.gram[start * nn..(start + 1) * nn]
    }

    /// `sum_{s >= start} X_s U_s'` as a row-major `N x p` slice.
    #[inline]
    pub fn xu(&self, start: usize) -> &[f64] {
        let np = self.n * self.p;
        &self.xu[start * np..(start + 1) * np]
    }

    #[inline]
    pub fn xy(&self, start: usize) -> &[f64] {
        &self.xy[start * self.n..(start + 1) * self.n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_data(t_len: usize) -> TimeSeriesData {
        let x = DMatrix::from_fn(t_len, 1, |t, _| (t + 1) as f64);
        TimeSeriesData::new(vec![0.0; t_len], x).unwrap()
    }

    #[test]
    fn single_break_path() {
        let theta = ThetaVector::new(10, 1, vec![(1, vec![1.0]), (6, vec![1.0])]).unwrap();
        let path = theta.cumulative_coefficients();
        for t in 1..=5 {
            assert_eq!(path.at(t), &[1.0]);
        }
        for t in 6..=10 {
            assert_eq!(path.at(t), &[2.0]);
        }
    }

    #[test]
    fn no_break_path_is_constant() {
        let theta = ThetaVector::new(7, 2, vec![(1, vec![2.0, 2.0])]).unwrap();
        let path = theta.cumulative_coefficients();
        for t in 1..=7 {
            assert_eq!(path.at(t), &[2.0, 2.0]);
        }
    }

    #[test]
    fn zero_theta_gives_zero_fit() {
        let data = ramp_data(6);
        let fit = fitted_values(&data, &ThetaVector::zeros(6, 1), 0.0).unwrap();
        assert!(fit.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn degenerate_unit_regressor_fit() {
        let x = DMatrix::from_element(5, 1, 1.0);
        let data = TimeSeriesData::new(vec![0.0; 5], x).unwrap();
        let theta = ThetaVector::new(5, 1, vec![(1, vec![3.0])]).unwrap();
        let fit = fitted_values(&data, &theta, 0.5).unwrap();
        assert!(fit.iter().all(|v| *v == 3.5));
    }

    #[test]
    fn gradient_blocks_small_example() {
        // T = 3 sits below the sample-validity floor, so exercise the kernel.
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let mut g = vec![0.0; 3];
        suffix_gradient(&x, &[1.0, 1.0, 1.0], &mut g);
        assert_eq!(g, vec![6.0, 5.0, 3.0]);
    }

    #[test]
    fn gradient_of_zero_residual_is_zero() {
        let data = ramp_data(8);
        let g = gradient_blocks(&data, &[0.0; 8]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dimension_mismatch_reported() {
        let data = ramp_data(8);
        assert!(gradient_blocks(&data, &[0.0; 7]).is_err());
        let theta = ThetaVector::zeros(9, 1);
        assert!(fitted_values(&data, &theta, 0.0).is_err());
    }

    #[test]
    fn from_regimes_round_trips() {
        let betas = vec![vec![1.0, 2.0], vec![3.0, 2.0], vec![0.5, -1.0]];
        let theta = ThetaVector::from_regimes(20, &[5, 12], &betas).unwrap();
        let path = theta.cumulative_coefficients();
        assert_eq!(path.starts(), &[1, 5, 12]);
        assert_eq!(path.regimes(), betas.as_slice());
    }

    #[test]
    fn rejects_unordered_groups() {
        assert!(ThetaVector::new(10, 1, vec![(1, vec![1.0]), (5, vec![1.0]), (5, vec![1.0])]).is_err());
        assert!(ThetaVector::new(10, 1, vec![(11, vec![1.0])]).is_err());
    }

    #[test]
    fn moments_match_direct_sums() {
        let x = DMatrix::from_fn(6, 2, |t, j| ((t + 1) * (j + 2)) as f64 * 0.3 - 1.0);
        let y: Vec<f64> = (0..6).map(|t| t as f64 * 1.5 - 2.0).collect();
        let data = TimeSeriesData::new(y.clone(), x.clone()).unwrap();
        let m = Moments::new(&data);
        for s in 0..6 {
            let mut g = [0.0; 4];
            let mut xy = [0.0; 2];
            for t in s..6 {
                for a in 0..2 {
                    for b in 0..2 {
                        g[a * 2 + b] += x[(t, a)] * x[(t, b)];
                    }
                    xy[a] += x[(t, a)] * y[t];
                }
            }
            for k in 0..4 {
                assert!((m.gram(s)[k] - g[k]).abs() < 1e-12);
            }
            for a in 0..2 {
                assert!((m.xy(s)[a] - xy[a]).abs() < 1e-12);
                let xs: f64 = (s..6).map(|t| x[(t, a)]).sum();
                assert!((m.xu(s)[a] - xs).abs() < 1e-12);
            }
        }
        assert_eq!(m.utu, vec![6.0]);
    }
}
