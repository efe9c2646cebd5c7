//! First-step group lasso over every admissible breakpoint.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesData;
use crate::design::{norm, suffix_gradient, Moments, ThetaVector};
use crate::error::{invalid, Error, Result};
use crate::solver::{GroupProblem, GroupState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub delta: f64,
    pub c0_grid: Vec<f64>,
    pub max_candidates: usize,
    pub min_spacing: usize,
    /// Shortest admissible first and last regime.
    pub min_regime: usize,
    pub trim_lo: f64,
    pub trim_hi: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Per-break penalty of the information criterion; `None` uses
    /// `(log T / T) log log (T N)`.
    pub rho: Option<f64>,
}

/// `points` log-spaced values over `[lo, hi]`, ascending.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

impl Stage1Config {
    /// Defaults for a sample of length `t_len` with `n` regressors.
    pub fn for_sample(t_len: usize, n: usize) -> Self {
        let min_spacing = ((0.02 * t_len as f64).ceil() as usize).max(n + 2);
        Self {
            delta: 0.55,
            c0_grid: log_grid(0.01, 10.0, 40),
            max_candidates: 10,
            min_spacing,
            min_regime: min_spacing,
            trim_lo: 0.15,
            trim_hi: 0.15,
            tol: 1e-6,
            max_iter: 100_000,
            rho: None,
        }
    }

    pub fn validate(&self, t_len: usize) -> Result<()> {
        if !(self.delta > 0.5 && self.delta < 1.0) {
            return invalid(format!("delta must lie in (1/2, 1), got {}", self.delta));
        }
        if self.c0_grid.is_empty() || self.c0_grid.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return invalid("c0 grid must be a nonempty list of positive values");
        }
        for (name, v) in [("trim_lo", self.trim_lo), ("trim_hi", self.trim_hi)] {
            if !(0.0..0.5).contains(&v) {
                return invalid(format!("{name} must lie in [0, 0.5), got {v}"));
            }
        }
        if self.max_candidates == 0 || self.min_spacing == 0 || self.min_regime == 0 {
            return invalid("max_candidates, min_spacing and min_regime must be positive");
        }
        if self.max_candidates * self.min_spacing >= t_len {
            return Err(Error::Infeasible(format!(
                "{} candidates spaced {} apart do not fit into {t_len} observations",
                self.max_candidates, self.min_spacing
            )));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return invalid("tol and max_iter must be positive");
        }
        if let Some(r) = self.rho {
            if !(r >= 0.0) || !r.is_finite() {
                return invalid(format!("rho must be nonnegative, got {r}"));
            }
        }
        Ok(())
    }

    /// Inclusive 1-based range of admissible break indices, if nonempty.
    pub fn candidate_window(&self, t_len: usize) -> Option<(usize, usize)> {
        let lo = ((self.trim_lo * t_len as f64).floor() as usize + 1)
            .max(self.min_regime + 1)
            .max(2);
        let hi_trim = t_len - (self.trim_hi * t_len as f64).floor() as usize;
        let hi = hi_trim.min((t_len + 1).saturating_sub(self.min_regime));
        (lo <= hi).then_some((lo, hi))
    }

    /// `lambda_T = 2 N c0 T^delta` for every grid value.
    pub fn lambda_grid(&self, t_len: usize, n: usize) -> Vec<f64> {
        let scale = 2.0 * n as f64 * (t_len as f64).powf(self.delta);
        self.c0_grid.iter().map(|c| scale * c).collect()
    }

    pub fn rho(&self, t_len: usize, n: usize) -> f64 {
        self.rho.unwrap_or_else(|| default_rho(t_len, n))
    }
}

pub fn default_rho(t_len: usize, n: usize) -> f64 {
    let t = t_len as f64;
    (t.ln() / t) * ((t * n as f64).ln().ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Solution {
    pub theta: ThetaVector,
    pub intercept: f64,
    pub augment_coefs: Vec<f64>,
    /// Indices `i >= 2` with a nonzero group.
    pub active_set: Vec<usize>,
    pub lambda: f64,
    pub ssr: f64,
    pub ic_value: f64,
    pub kkt_violation: f64,
    pub converged: bool,
    pub sweeps: usize,
}

/// Everything about a sample that does not depend on `lambda`.
pub(crate) struct Stage1Context<'d> {
    data: &'d TimeSeriesData,
    moments: Moments,
    window: (usize, usize),
    config: Stage1Config,
}

impl<'d> Stage1Context<'d> {
    pub fn new(data: &'d TimeSeriesData, config: &Stage1Config) -> Result<Self> {
        config.validate(data.len())?;
        let window = config.candidate_window(data.len()).ok_or_else(|| {
            Error::Infeasible(format!(
                "trimming {}/{} with minimum regime {} leaves no admissible break in {} observations",
                config.trim_lo,
                config.trim_hi,
                config.min_regime,
                data.len()
            ))
        })?;
        Ok(Self {
            data,
            moments: Moments::new(data),
            window,
            config: config.clone(),
        })
    }

    fn admissible(&self, i: usize) -> bool {
        i == 1 || (self.window.0..=self.window.1).contains(&i)
    }

    /// Residual of the fit `(eta, groups)` with groups keyed by 1-based index.
    fn residual(&self, eta: &[f64], groups: &BTreeMap<usize, Vec<f64>>) -> Vec<f64> {
        residual_of(self.data, eta, groups)
    }

    /// `(2/T) max ||g_i||` over admissible groups for the residual of `y` on
    /// the unpenalized block alone.
    pub fn lambda_max(&self) -> f64 {
        let problem = GroupProblem::new(&self.moments, vec![], vec![]);
        let mut st = problem.zero_state();
        problem.solve(&mut st, f64::INFINITY, 0);
        let r = self.residual(&st.eta, &BTreeMap::new());
        self.max_scaled_gradient(&r, |_| true)
    }

    fn max_scaled_gradient(&self, r: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
        let n = self.data.n_regressors();
        let t_len = self.data.len();
        let mut g = vec![0.0; t_len * n];
        suffix_gradient(self.data.x(), r, &mut g);
        let scale = 2.0 / t_len as f64;
        (1..=t_len)
            .filter(|&i| self.admissible(i) && keep(i))
            .map(|i| scale * norm(&g[(i - 1) * n..i * n]))
            .fold(0.0, f64::max)
    }

    /// Group lasso at `lambda` by a working-set strategy: solve on a small
    /// set of groups, scan the full gradient for violators and grow the set
    /// until every admissible group satisfies its optimality condition.
    pub fn solve(&self, lambda: f64, warm: Option<&Stage1Solution>) -> Result<Stage1Solution> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return invalid(format!("lambda must be positive, got {lambda}"));
        }
        let n = self.data.n_regressors();
        let t_len = self.data.len();
        let tol = self.config.tol;

        let mut values: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        values.insert(1, vec![0.0; n]);
        let mut eta = vec![0.0; self.moments.p];
        if let Some(w) = warm {
            for (i, v) in w.theta.groups() {
                if self.admissible(*i) && norm(v) > 0.0 {
                    values.insert(*i, v.clone());
                }
            }
            eta[0] = w.intercept;
            eta[1..].copy_from_slice(&w.augment_coefs);
        }

        let mut sweeps = 0usize;
        let mut scaled = vec![0.0; t_len * n];
        let (kkt, ssr, converged) = loop {
            let starts: Vec<usize> = values.keys().map(|i| i - 1).collect();
            let problem = GroupProblem::new(&self.moments, starts, vec![lambda; values.len()]);
            let mut st = GroupState {
                theta: values.values().flatten().copied().collect(),
                eta: eta.clone(),
            };
            let report = problem.solve(&mut st, tol, self.config.max_iter.saturating_sub(sweeps));
            sweeps += report.sweeps;
            for (slot, (_, v)) in values.iter_mut().enumerate() {
                v.copy_from_slice(&st.theta[slot * n..(slot + 1) * n]);
            }
            eta = st.eta;

            let r = self.residual(&eta, &values);
            suffix_gradient(self.data.x(), &r, &mut scaled);
            let scale = 2.0 / t_len as f64;
            let mut violators: Vec<(f64, usize)> = (self.window.0..=self.window.1)
                .filter(|i| !values.contains_key(i))
                .map(|i| (scale * norm(&scaled[(i - 1) * n..i * n]) - lambda, i))
                .filter(|(v, _)| *v > tol)
                .collect();
            let outside = violators.iter().map(|v| v.0).fold(0.0, f64::max);
            let kkt = report.kkt.max(outside);
            if violators.is_empty() || !report.converged || sweeps >= self.config.max_iter {
                break (kkt, report.ssr, report.converged && violators.is_empty());
            }
            violators.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, i) in violators.iter().take(10) {
                values.insert(i, vec![0.0; n]);
            }
        };

        let groups: Vec<(usize, Vec<f64>)> = values.into_iter().collect();
        let theta = ThetaVector::new(t_len, n, groups)?;
        let active_set = theta.active_set();
        let ic_value = information_criterion(
            ssr,
            t_len,
            active_set.len(),
            self.config.rho(t_len, n),
        );
        Ok(Stage1Solution {
            theta,
            intercept: eta[0],
            augment_coefs: eta[1..].to_vec(),
            active_set,
            lambda,
            ssr,
            ic_value,
            kkt_violation: kkt,
            converged,
            sweeps,
        })
    }

    pub fn path(&self) -> Result<Vec<Stage1Solution>> {
        let t_len = self.data.len();
        let n = self.data.n_regressors();
        let lmax = self.lambda_max();
        let mut grid: Vec<f64> = self
            .config
            .lambda_grid(t_len, n)
            .into_iter()
            .map(|l| l.min(lmax))
            .filter(|l| *l > 0.0)
            .collect();
        grid.sort_by(|a, b| b.total_cmp(a));
        grid.dedup();
        let mut out: Vec<Stage1Solution> = Vec::with_capacity(grid.len());
        for lambda in grid {
            let sol = self.solve(lambda, out.last())?;
            out.push(sol);
        }
        Ok(out)
    }
}

pub(crate) fn residual_of(
    data: &TimeSeriesData,
    eta: &[f64],
    groups: &BTreeMap<usize, Vec<f64>>,
) -> Vec<f64> {
    let n = data.n_regressors();
    let x = data.x();
    let y = data.y();
    let w = data.augment();
    let mut beta = vec![0.0; n];
    let mut next = groups.iter().peekable();
    (0..data.len())
        .map(|t| {
            while let Some((i, v)) = next.peek() {
                if **i > t + 1 {
                    break;
                }
                for j in 0..n {
                    beta[j] += v[j];
                }
                next.next();
            }
            let mut fit = eta[0];
            if let Some(w) = w {
                for c in 0..w.ncols() {
                    fit += w[(t, c)] * eta[1 + c];
                }
            }
            for j in 0..n {
                fit += x[(t, j)] * beta[j];
            }
            y[t] - fit
        })
        .collect()
}

/// Smallest SSR treated as distinct from zero for data whose sum of squares
/// is `scale`. Exact fits then tie and the penalty decides.
pub(crate) fn ssr_floor(scale: f64) -> f64 {
    1e-10 * scale.max(f64::MIN_POSITIVE)
}

/// `log(SSR / T) + rho * breaks`.
pub fn information_criterion(ssr: f64, t_len: usize, breaks: usize, rho: f64) -> f64 {
    (ssr / t_len as f64).max(f64::MIN_POSITIVE).ln() + rho * breaks as f64
}

pub fn solve_group_lasso(
    data: &TimeSeriesData,
    lambda: f64,
    config: &Stage1Config,
    warm_start: Option<&Stage1Solution>,
) -> Result<Stage1Solution> {
    Stage1Context::new(data, config)?.solve(lambda, warm_start)
}

/// Smallest `lambda` at which every admissible group is zero.
pub fn lambda_max(data: &TimeSeriesData, config: &Stage1Config) -> Result<f64> {
    Ok(Stage1Context::new(data, config)?.lambda_max())
}

/// Solutions over the configured grid, in decreasing `lambda` order, each
/// warm-started from its predecessor. Grid values above `lambda_max`
/// collapse onto it.
pub fn lambda_path(data: &TimeSeriesData, config: &Stage1Config) -> Result<Vec<Stage1Solution>> {
    Stage1Context::new(data, config)?.path()
}

/// Largest optimality violation of `theta` for the group lasso at `lambda`.
/// The intercept and augment coefficients are profiled out by least
/// squares, which is what they equal at any optimum.
pub fn kkt_check_stage1(data: &TimeSeriesData, theta: &ThetaVector, lambda: f64) -> Result<f64> {
    kkt_check_stage1_within(data, theta, lambda, (2, data.len()))
}

/// As [`kkt_check_stage1`], with change groups restricted to the inclusive
/// `window` (groups outside it are held at zero).
pub fn kkt_check_stage1_within(
    data: &TimeSeriesData,
    theta: &ThetaVector,
    lambda: f64,
    window: (usize, usize),
) -> Result<f64> {
    let n = data.n_regressors();
    let t_len = data.len();
    if theta.len() != t_len || theta.group_width() != n {
        return Err(Error::DimensionMismatch(format!(
            "theta is {}x{}, data is {t_len}x{n}",
            theta.len(),
            theta.group_width()
        )));
    }
    let groups: BTreeMap<usize, Vec<f64>> = theta.groups().iter().cloned().collect();
    let eta = profile_unpenalized(data, &groups)?;
    let r = residual_of(data, &eta, &groups);
    let mut g = vec![0.0; t_len * n];
    suffix_gradient(data.x(), &r, &mut g);
    let scale = 2.0 / t_len as f64;
    let mut worst: f64 = 0.0;
    let mut buf = vec![0.0; n];
    for i in 1..=t_len {
        if i != 1 && !(window.0..=window.1).contains(&i) {
            continue;
        }
        let gi = &g[(i - 1) * n..i * n];
        let th = theta.group(i).unwrap_or(&[]);
        let tn = if th.is_empty() { 0.0 } else { norm(th) };
        let v = if tn > 0.0 {
            for j in 0..n {
                buf[j] = scale * gi[j] - lambda * th[j] / tn;
            }
            norm(&buf)
        } else {
            (scale * norm(gi) - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// Least-squares intercept and augment coefficients given the groups.
pub(crate) fn profile_unpenalized(
    data: &TimeSeriesData,
    groups: &BTreeMap<usize, Vec<f64>>,
) -> Result<Vec<f64>> {
    let k = data.n_augment();
    let zero = vec![0.0; 1 + k];
    let r = residual_of(data, &zero, groups);
    let u = nalgebra::DMatrix::from_fn(data.len(), 1 + k, |t, c| {
        if c == 0 {
            1.0
        } else {
            data.augment().map_or(0.0, |w| w[(t, c - 1)])
        }
    });
    let coef = crate::ols::least_squares(&u, &nalgebra::DVector::from_vec(r))?;
    Ok(coef.iter().copied().collect())
}

/// Merge active indices closer than `min_spacing` (chained), keep the
/// largest group of each cluster, then the `max_candidates` largest overall.
/// Returned sorted.
pub fn screen_candidates(
    solution: &Stage1Solution,
    min_spacing: usize,
    max_candidates: usize,
) -> Vec<usize> {
    let scored: Vec<(usize, f64)> = solution
        .active_set
        .iter()
        .map(|&i| (i, solution.theta.group_norm(i)))
        .collect();
    screen_scored(&scored, min_spacing, max_candidates)
}

pub(crate) fn screen_scored(
    scored: &[(usize, f64)],
    min_spacing: usize,
    max_candidates: usize,
) -> Vec<usize> {
    let mut reps: Vec<(usize, f64)> = Vec::new();
    let mut last: Option<usize> = None;
    for &(i, w) in scored {
        match (last, reps.last_mut()) {
            (Some(prev), Some(rep)) if i - prev < min_spacing => {
                if w > rep.1 {
                    *rep = (i, w);
                }
            }
            _ => reps.push((i, w)),
        }
        last = Some(i);
    }
    reps.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    reps.truncate(max_candidates);
    let mut out: Vec<usize> = reps.into_iter().map(|r| r.0).collect();
    out.sort_unstable();
    out
}

/// The path point minimizing `log(SSR/T) + rho |A|`, ties resolved toward
/// the larger `lambda`. `rho` defaults to `(log T / T) log log (T N)`.
pub fn select_stage1(
    path: &[Stage1Solution],
    t_len: usize,
    n: usize,
    rho: Option<f64>,
) -> Option<Stage1Solution> {
    let rho = rho.unwrap_or_else(|| default_rho(t_len, n));
    let floor = ssr_floor(path.iter().map(|s| s.ssr).fold(0.0, f64::max));
    let mut best: Option<(f64, &Stage1Solution)> = None;
    for sol in path {
        let ic = information_criterion(sol.ssr.max(floor), t_len, sol.active_set.len(), rho);
        let better = match best {
            None => true,
            Some((b, prev)) => ic < b || (ic == b && sol.lambda > prev.lambda),
        };
        if better {
            best = Some((ic, sol));
        }
    }
    best.map(|(ic, s)| Stage1Solution {
        ic_value: ic,
        ..s.clone()
    })
}
