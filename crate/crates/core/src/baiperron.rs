//! Global-SSR segmentation by dynamic programming over a table of
//! segment costs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesData;
use crate::error::{Error, Result};
use crate::ols::{segment_ols, BreakModel};
use crate::stage1::ssr_floor;

/// `c(i, j)`: SSR of `y` on `(1, X)` over observations `i..=j` (1-based),
/// infinite for segments shorter than `min_seg`.
#[derive(Debug, Clone)]
pub struct CostTable {
    t_len: usize,
    min_seg: usize,
    cost: Vec<f64>,
}

impl CostTable {
    pub fn len(&self) -> usize {
        self.t_len
    }

    pub fn is_empty(&self) -> bool {
        self.t_len == 0
    }

    pub fn min_seg(&self) -> usize {
        self.min_seg
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(1 <= i && i <= j && j <= self.t_len, "segment [{i}, {j}] out of range");
        self.cost[(i - 1) * self.t_len + (j - 1)]
    }
}

pub fn ssr_table(data: &TimeSeriesData, min_seg: usize) -> Result<CostTable> {
    let t_len = data.len();
    let n = data.n_regressors();
    let p = n + 1;
    if min_seg < n + 2 {
        return Err(Error::InvalidInput(format!(
            "minimum segment length {min_seg} below {} for {n} regressors",
            n + 2
        )));
    }
    let x = data.x();
    let y = data.y();
    let mut cost = vec![f64::INFINITY; t_len * t_len];
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    let mut row = vec![0.0; p];
    for i in 0..t_len {
        // Center on the segment's first observation; the intercept absorbs
        // the shift and the cross-products stay small.
        let y0 = y[i];
        let x0: Vec<f64> = (0..n).map(|j| x[(i, j)]).collect();
        xtx.iter_mut().for_each(|v| *v = 0.0);
        xty.iter_mut().for_each(|v| *v = 0.0);
        let mut yy = 0.0;
        for j in i..t_len {
            row[0] = 1.0;
            for c in 0..n {
                row[c + 1] = x[(j, c)] - x0[c];
            }
            let yc = y[j] - y0;
            for a in 0..p {
                for b in 0..p {
                    xtx[a * p + b] += row[a] * row[b];
                }
                xty[a] += row[a] * yc;
            }
            yy += yc * yc;
            if j + 1 - i >= min_seg {
                let m = DMatrix::from_row_slice(p, p, &xtx);
                let b = DVector::from_column_slice(&xty);
                if let Some(ch) = m.cholesky() {
                    let coef = ch.solve(&b);
                    cost[i * t_len + j] = (yy - coef.dot(&b)).max(0.0);
                }
            }
        }
    }
    Ok(CostTable {
        t_len,
        min_seg,
        cost,
    })
}

/// Breakpoints (first index of each new regime) minimizing total cost with
/// exactly `m` breaks. Among equal totals the earliest last break wins at
/// every stage of the recursion.
pub fn optimal_partition(table: &CostTable, m: usize) -> Result<Vec<usize>> {
    let t = table.t_len;
    let h = table.min_seg;
    if (m + 1) * h > t {
        return Err(Error::Infeasible(format!(
            "{m} breaks with segments of at least {h} do not fit into {t} observations"
        )));
    }
    // best[k][e]: minimal cost of splitting observations 1..=e into k+1
    // segments; arg[k][e]: start of the last of them.
    let mut best = vec![vec![f64::INFINITY; t + 1]; m + 1];
    let mut arg = vec![vec![0usize; t + 1]; m + 1];
    for e in h..=t {
        best[0][e] = table.get(1, e);
    }
    for k in 1..=m {
        for e in (k + 1) * h..=t {
            let mut b = f64::INFINITY;
            let mut a = 0;
            for s in (k * h + 1)..=(e + 1 - h) {
                let prev = best[k - 1][s - 1];
                if !prev.is_finite() {
                    continue;
                }
                let v = prev + table.get(s, e);
                if v < b {
                    b = v;
                    a = s;
                }
            }
            best[k][e] = b;
            arg[k][e] = a;
        }
    }
    if !best[m][t].is_finite() {
        return Err(Error::Infeasible(format!("no admissible partition with {m} breaks")));
    }
    let mut out = vec![0usize; m];
    let mut e = t;
    for k in (1..=m).rev() {
        let s = arg[k][e];
        out[k - 1] = s;
        e = s - 1;
    }
    Ok(out)
}

/// Total cost of the partition implied by `breakpoints`.
pub fn partition_cost(table: &CostTable, breakpoints: &[usize]) -> f64 {
    let mut bounds = vec![1];
    bounds.extend_from_slice(breakpoints);
    bounds.push(table.t_len + 1);
    bounds.windows(2).map(|w| table.get(w[0], w[1] - 1)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaiPerronConfig {
    pub max_breaks: usize,
    /// Minimum segment length; `None` uses `ceil(0.15 T)`.
    pub min_seg: Option<usize>,
    /// BIC parameter count `p_m = (m+1) per_regime + m per_break`;
    /// `per_regime = None` uses `N + 1`.
    pub per_regime: Option<f64>,
    pub per_break: f64,
}

impl Default for BaiPerronConfig {
    fn default() -> Self {
        Self {
            max_breaks: 5,
            min_seg: None,
            per_regime: None,
            per_break: 1.0,
        }
    }
}

impl BaiPerronConfig {
    pub fn min_seg_for(&self, t_len: usize, n: usize) -> usize {
        self.min_seg
            .unwrap_or(((0.15 * t_len as f64) - 1e-9).ceil() as usize)
            .max(n + 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaiPerronFit {
    /// `(m, breakpoints, SSR, BIC)` for every feasible `m`.
    pub candidates: Vec<(usize, Vec<usize>, f64, f64)>,
    pub chosen: usize,
    pub model: BreakModel,
}

/// Optimal partitions for `m = 0..=max_breaks`, `m` chosen by
/// `log(SSR/T) + p_m log(T)/T`, final model refit with a common intercept.
pub fn select_num_breaks(data: &TimeSeriesData, config: &BaiPerronConfig) -> Result<BaiPerronFit> {
    let t_len = data.len();
    let n = data.n_regressors();
    let h = config.min_seg_for(t_len, n);
    let table = ssr_table(data, h)?;
    let per_regime = config.per_regime.unwrap_or((n + 1) as f64);
    let t = t_len as f64;
    let mut candidates = Vec::new();
    for m in 0..=config.max_breaks {
        if (m + 1) * h > t_len {
            break;
        }
        let bps = optimal_partition(&table, m)?;
        let ssr = partition_cost(&table, &bps);
        candidates.push((m, bps, ssr, 0.0));
    }
    let ybar = data.y().iter().sum::<f64>() / t;
    let tss = data.y().iter().map(|v| (v - ybar).powi(2)).sum::<f64>();
    let floor = ssr_floor(tss);
    for c in candidates.iter_mut() {
        let p_m = (c.0 + 1) as f64 * per_regime + c.0 as f64 * config.per_break;
        c.3 = (c.2.max(floor) / t).ln() + p_m * t.ln() / t;
    }
    let best = candidates
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (idx, c)| match acc {
            Some((_, b)) if !(c.3 < b) => acc,
            _ => Some((idx, c.3)),
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Infeasible(format!("segments of {h} do not fit into {t_len}")))?;
    let model = segment_ols(data, &candidates[best].1)?;
    Ok(BaiPerronFit {
        chosen: candidates[best].0,
        candidates,
        model,
    })
}
