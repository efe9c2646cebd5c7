//! Second-step adaptive group lasso on the screened candidates, and the
//! full two-step estimator.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesData;
use crate::design::{norm, suffix_gradient, Moments, ThetaVector};
use crate::dols;
use crate::error::{invalid, Error, Result};
use crate::ols::{segment_ols, BreakModel};
use crate::solver::{GroupProblem, GroupState};
use crate::stage1::{
    log_grid, profile_unpenalized, residual_of, screen_candidates, select_stage1, ssr_floor,
    Stage1Config, Stage1Context, Stage1Solution,
};

/// Adaptive weights. `indices[0]` is the baseline group `1` with weight 0;
/// the rest are change candidates. An infinite weight marks a candidate
/// whose first-step estimate is zero; it is held at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl WeightVector {
    pub fn candidates(&self) -> &[usize] {
        &self.indices[1..]
    }

    /// Candidates with finite weight, paired with it.
    pub fn live(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.weights)
            .skip(1)
            .filter(|(_, w)| w.is_finite())
            .map(|(&i, &w)| (i, w))
    }

    /// Multiply every finite candidate weight by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for w in out.weights.iter_mut().skip(1) {
            if w.is_finite() {
                *w *= c;
            }
        }
        out
    }
}

/// `w_i = ||theta_i||^-gamma` for every candidate, infinite when the group
/// is zero.
pub fn compute_weights(
    stage1: &Stage1Solution,
    candidates: &[usize],
    gamma: f64,
) -> Result<WeightVector> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return invalid(format!("gamma must be positive, got {gamma}"));
    }
    if candidates.windows(2).any(|w| w[0] >= w[1]) || candidates.first().is_some_and(|&c| c < 2) {
        return invalid(format!("candidates must be increasing indices >= 2, got {candidates:?}"));
    }
    let mut indices = vec![1];
    let mut weights = vec![0.0];
    for &c in candidates {
        let g = stage1.theta.group_norm(c);
        indices.push(c);
        weights.push(if g > 0.0 { g.powf(-gamma) } else { f64::INFINITY });
    }
    Ok(WeightVector { indices, weights })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    pub gamma: f64,
    /// Explicit penalty grid; `None` builds one from the rate bounds.
    pub lambda_grid: Option<Vec<f64>>,
    pub grid_points: usize,
    /// Exponent slack `eps` of the upper grid end `T^{-(1-delta)gamma/2 + eps}`.
    pub grid_epsilon: f64,
    /// Rate exponent of the first step, used for the grid bounds.
    pub delta: f64,
    pub min_spacing: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Stage2Config {
    pub fn for_sample(t_len: usize, n: usize) -> Self {
        let s1 = Stage1Config::for_sample(t_len, n);
        Self {
            gamma: 1.0,
            lambda_grid: None,
            grid_points: 30,
            grid_epsilon: 0.5,
            delta: s1.delta,
            min_spacing: s1.min_spacing,
            tol: 1e-6,
            max_iter: 100_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return invalid(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.lambda_grid.as_ref().is_some_and(|g| {
            g.is_empty() || g.iter().any(|l| !(*l >= 0.0) || !l.is_finite())
        }) {
            return invalid("stage-two grid must be a nonempty list of nonnegative values");
        }
        if self.lambda_grid.is_none() && self.grid_points == 0 {
            return invalid("grid_points must be positive");
        }
        if !(self.tol > 0.0) || self.max_iter == 0 || self.min_spacing == 0 {
            return invalid("tol, max_iter and min_spacing must be positive");
        }
        Ok(())
    }

    /// Grid in decreasing order.
    pub fn grid(&self, t_len: usize) -> Vec<f64> {
        let mut g = match &self.lambda_grid {
            Some(g) => g.clone(),
            None => default_stage2_grid(
                t_len,
                self.delta,
                self.gamma,
                self.grid_epsilon,
                self.grid_points,
            ),
        };
        g.sort_by(|a, b| b.total_cmp(a));
        g.dedup();
        g
    }
}

/// Log-spaced over `[T^-1, T^{-(1-delta)gamma/2} T^eps]`.
pub fn default_stage2_grid(t_len: usize, delta: f64, gamma: f64, eps: f64, points: usize) -> Vec<f64> {
    let t = t_len as f64;
    let lo = 1.0 / t;
    let hi = t.powf(-(1.0 - delta) * gamma / 2.0 + eps).max(lo);
    log_grid(lo, hi, points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Solution {
    pub theta: ThetaVector,
    pub intercept: f64,
    pub augment_coefs: Vec<f64>,
    /// Candidates with a nonzero group.
    pub breakpoints: Vec<usize>,
    pub lambda: f64,
    pub ssr: f64,
    pub bic: f64,
    pub kkt_violation: f64,
    pub converged: bool,
}

/// `log(SSR/T) + m N log(T) / T`.
pub fn bic(ssr: f64, t_len: usize, n: usize, breaks: usize) -> f64 {
    let t = t_len as f64;
    (ssr / t).max(f64::MIN_POSITIVE).ln() + (breaks * n) as f64 * t.ln() / t
}

struct Stage2Context<'d> {
    data: &'d TimeSeriesData,
    moments: Moments,
    /// Baseline plus live candidates, 1-based.
    groups: Vec<usize>,
    weights: Vec<f64>,
    config: Stage2Config,
}

impl<'d> Stage2Context<'d> {
    fn new(data: &'d TimeSeriesData, weights: &WeightVector, config: &Stage2Config) -> Result<Self> {
        config.validate()?;
        let cands = weights.candidates();
        if weights.indices.first() != Some(&1) || weights.weights.first() != Some(&0.0) {
            return invalid("weight vector must start with the baseline group at weight 0");
        }
        if cands.iter().any(|&c| c < 2 || c > data.len()) {
            return invalid(format!("candidates {cands:?} outside [2, {}]", data.len()));
        }
        let mut prev = 1usize;
        for &c in cands {
            if c <= prev || (prev > 1 && c - prev < config.min_spacing) {
                return Err(Error::Infeasible(format!(
                    "candidates {cands:?} are not increasing with spacing >= {}",
                    config.min_spacing
                )));
            }
            prev = c;
        }
        let mut groups = vec![1];
        let mut w = vec![0.0];
        for (i, wi) in weights.live() {
            groups.push(i);
            w.push(wi);
        }
        let moments = Moments::new(data);
        check_reduced_gram(&moments, &groups)?;
        Ok(Self {
            data,
            moments,
            groups,
            weights: w,
            config: config.clone(),
        })
    }

    fn solve(&self, lambda: f64, warm: Option<&Stage2Solution>) -> Result<Stage2Solution> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return invalid(format!("stage-two lambda must be nonnegative, got {lambda}"));
        }
        let n = self.data.n_regressors();
        let t_len = self.data.len();
        let starts: Vec<usize> = self.groups.iter().map(|i| i - 1).collect();
        let penalty: Vec<f64> = self.weights.iter().map(|w| lambda * w).collect();
        let problem = GroupProblem::new(&self.moments, starts, penalty);
        let mut st = problem.zero_state();
        if let Some(w) = warm {
            for (slot, &i) in self.groups.iter().enumerate() {
                if let Some(v) = w.theta.group(i) {
                    st.theta[slot * n..(slot + 1) * n].copy_from_slice(v);
                }
            }
            st.eta[0] = w.intercept;
            st.eta[1..].copy_from_slice(&w.augment_coefs);
        }
        let report = problem.solve(&mut st, self.config.tol, self.config.max_iter);
        self.finish(lambda, st, report.ssr, report.kkt, report.converged, n, t_len)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        lambda: f64,
        st: GroupState,
        ssr: f64,
        kkt: f64,
        converged: bool,
        n: usize,
        t_len: usize,
    ) -> Result<Stage2Solution> {
        let groups: Vec<(usize, Vec<f64>)> = self
            .groups
            .iter()
            .enumerate()
            .map(|(slot, &i)| (i, st.theta[slot * n..(slot + 1) * n].to_vec()))
            .collect();
        let theta = ThetaVector::new(t_len, n, groups)?;
        let breakpoints = theta.active_set();
        Ok(Stage2Solution {
            bic: bic(ssr, t_len, n, breakpoints.len()),
            breakpoints,
            theta,
            intercept: st.eta[0],
            augment_coefs: st.eta[1..].to_vec(),
            lambda,
            ssr,
            kkt_violation: kkt,
            converged,
        })
    }

    fn path(&self) -> Result<Vec<Stage2Solution>> {
        let mut out: Vec<Stage2Solution> = Vec::new();
        for lambda in self.config.grid(self.data.len()) {
            let sol = self.solve(lambda, out.last())?;
            out.push(sol);
        }
        Ok(out)
    }
}

/// Reject candidate sets whose reduced design (with the intercept and
/// augment columns) is numerically singular.
fn check_reduced_gram(m: &Moments, groups: &[usize]) -> Result<()> {
    let n = m.n;
    let p = m.p;
    let d = groups.len() * n + p;
    let mut g = DMatrix::zeros(d, d);
    for (a, &ia) in groups.iter().enumerate() {
        for (b, &ib) in groups.iter().enumerate() {
            let blk = m.gram(ia.max(ib) - 1);
            for i in 0..n {
                for j in 0..n {
                    g[(a * n + i, b * n + j)] = blk[i * n + j];
                }
            }
        }
        let xu = m.xu(ia - 1);
        for i in 0..n {
            for c in 0..p {
                g[(a * n + i, groups.len() * n + c)] = xu[i * p + c];
                g[(groups.len() * n + c, a * n + i)] = xu[i * p + c];
            }
        }
    }
    let off = groups.len() * n;
    for c in 0..p {
        for e in 0..p {
            g[(off + c, off + e)] = m.utu[c * p + e];
        }
    }
    // Scale to unit diagonal before judging the spectrum.
    let diag: Vec<f64> = (0..d).map(|i| g[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
    let scaled = DMatrix::from_fn(d, d, |i, j| g[(i, j)] / (diag[i] * diag[j]));
    let eig = scaled.symmetric_eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 1e-12) {
        return Err(Error::RankDeficient(format!(
            "reduced candidate design is singular (smallest scaled eigenvalue {min:.3e})"
        )));
    }
    Ok(())
}

pub fn solve_adaptive_group_lasso(
    data: &TimeSeriesData,
    weights: &WeightVector,
    lambda: f64,
    config: &Stage2Config,
) -> Result<Stage2Solution> {
    Stage2Context::new(data, weights, config)?.solve(lambda, None)
}

/// Largest optimality violation of `theta` for the adaptive problem at
/// `lambda`, with the unpenalized block profiled out. Excluded candidates
/// and indices outside the candidate list are not checked.
pub fn kkt_check_stage2(
    data: &TimeSeriesData,
    theta: &ThetaVector,
    weights: &WeightVector,
    lambda: f64,
) -> Result<f64> {
    let n = data.n_regressors();
    let t_len = data.len();
    let groups: BTreeMap<usize, Vec<f64>> = theta.groups().iter().cloned().collect();
    let eta = profile_unpenalized(data, &groups)?;
    let r = residual_of(data, &eta, &groups);
    let mut g = vec![0.0; t_len * n];
    suffix_gradient(data.x(), &r, &mut g);
    let scale = 2.0 / t_len as f64;
    let mut worst: f64 = 0.0;
    let mut buf = vec![0.0; n];
    for (&i, &w) in weights.indices.iter().zip(&weights.weights) {
        if !w.is_finite() {
            continue;
        }
        let pen = lambda * w;
        let gi = &g[(i - 1) * n..i * n];
        let th = theta.group(i).unwrap_or(&[]);
        let tn = if th.is_empty() { 0.0 } else { norm(th) };
        let v = if tn > 0.0 {
            for j in 0..n {
                buf[j] = scale * gi[j] - pen * th[j] / tn;
            }
            norm(&buf)
        } else {
            (scale * norm(gi) - pen).max(0.0)
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// Solve over `config`'s grid (decreasing, warm-started) and keep the
/// solution with the smallest BIC, ties toward the larger penalty.
pub fn select_stage2(
    data: &TimeSeriesData,
    weights: &WeightVector,
    config: &Stage2Config,
) -> Result<Stage2Solution> {
    let path = Stage2Context::new(data, weights, config)?.path()?;
    pick_by_bic(path, data.len(), data.n_regressors()).ok_or_else(|| Error::InvalidInput("empty stage-two grid".into()))
}

fn pick_by_bic(mut path: Vec<Stage2Solution>, t_len: usize, n: usize) -> Option<Stage2Solution> {
    let floor = ssr_floor(path.iter().map(|s| s.ssr).fold(0.0, f64::max));
    for s in path.iter_mut() {
        s.bic = bic(s.ssr.max(floor), t_len, n, s.breakpoints.len());
    }
    // The path is in decreasing lambda order, so strict improvement keeps
    // the larger penalty on ties.
    path.into_iter().fold(None, |best, s| match best {
        Some(b) if !(s.bic < b.bic) => Some(b),
        _ => Some(s),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    /// Lead/lag order of the dynamic augmentation; `None` disables it.
    pub leads_lags: Option<usize>,
}

impl PipelineConfig {
    /// Defaults for `t_len` observations, `n` regressors, and an expected
    /// maximum of `max_breaks` breaks (candidates kept: twice that).
    pub fn for_sample(t_len: usize, n: usize, max_breaks: usize) -> Self {
        let mut stage1 = Stage1Config::for_sample(t_len, n);
        stage1.max_candidates = (2 * max_breaks).max(1);
        let stage2 = Stage2Config::for_sample(t_len, n);
        Self {
            stage1,
            stage2,
            leads_lags: None,
        }
    }

    pub fn with_leads_lags(mut self, l: usize) -> Self {
        self.leads_lags = Some(l);
        self
    }

    /// Raise spacing and regime length so every regime can carry its own
    /// slopes next to `k` augment columns.
    fn adjusted(&self, n: usize, k: usize) -> Self {
        let mut c = self.clone();
        let floor = n + k + 2;
        c.stage1.min_spacing = c.stage1.min_spacing.max(floor);
        c.stage1.min_regime = c.stage1.min_regime.max(floor);
        c.stage2.min_spacing = c.stage2.min_spacing.min(c.stage1.min_spacing).max(floor);
        c.stage2.delta = c.stage1.delta;
        c
    }
}

/// Everything the estimator computed on the way to its answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub stage1_path: Vec<Stage1Solution>,
    pub stage1: Stage1Solution,
    pub candidates: Vec<usize>,
    pub weights: Option<WeightVector>,
    pub stage2_path: Vec<Stage2Solution>,
    pub stage2: Option<Stage2Solution>,
    pub model: BreakModel,
}

/// The first-step path and its selected point as the full estimator sees
/// them (after lead/lag augmentation when configured).
pub fn first_step_path(
    data: &TimeSeriesData,
    config: &PipelineConfig,
) -> Result<(Vec<Stage1Solution>, Stage1Solution)> {
    let augmented = augmented_for(data, config)?;
    let data = augmented.as_ref().unwrap_or(data);
    first_step(data, config).map(|(_, path, sel)| (path, sel))
}

/// The lead/lag augmented sample, when the configuration asks for one and
/// `data` does not already carry augment columns.
fn augmented_for(data: &TimeSeriesData, config: &PipelineConfig) -> Result<Option<TimeSeriesData>> {
    match config.leads_lags {
        Some(l) if data.augment().is_none() => dols::augment(data, l).map(Some),
        _ => Ok(None),
    }
}

fn first_step(
    data: &TimeSeriesData,
    config: &PipelineConfig,
) -> Result<(PipelineConfig, Vec<Stage1Solution>, Stage1Solution)> {
    data.check_estimable()?;
    let cfg = config.adjusted(data.n_regressors(), data.n_augment());
    let path = Stage1Context::new(data, &cfg.stage1)?.path()?;
    let stage1 = select_stage1(&path, data.len(), data.n_regressors(), cfg.stage1.rho)
        .ok_or_else(|| Error::InvalidInput("empty stage-one grid".into()))?;
    Ok((cfg, path, stage1))
}

/// Two-step estimate followed by an unpenalized refit on the selected
/// breaks.
pub fn estimate_breaks(data: &TimeSeriesData, config: &PipelineConfig) -> Result<BreakModel> {
    estimate_breaks_traced(data, config).map(|t| t.model)
}

pub fn estimate_breaks_traced(data: &TimeSeriesData, config: &PipelineConfig) -> Result<PipelineTrace> {
    let augmented = augmented_for(data, config)?;
    let data = augmented.as_ref().unwrap_or(data);
    let (cfg, path, stage1) = first_step(data, config)?;
    let t_len = data.len();
    let n = data.n_regressors();
    let candidates = screen_candidates(&stage1, cfg.stage1.min_spacing, cfg.stage1.max_candidates);

    let (weights, stage2_path, stage2, breaks) = if candidates.is_empty() {
        (None, vec![], None, vec![])
    } else {
        let weights = compute_weights(&stage1, &candidates, cfg.stage2.gamma)?;
        let s2 = Stage2Context::new(data, &weights, &cfg.stage2)?;
        let s2_path = s2.path()?;
        let best = pick_by_bic(s2_path.clone(), t_len, n);
        let breaks = best.as_ref().map(|b| b.breakpoints.clone()).unwrap_or_default();
        (Some(weights), s2_path, best, breaks)
    };
    let model = segment_ols(data, &breaks)?;
    Ok(PipelineTrace {
        stage1_path: path,
        stage1,
        candidates,
        weights,
        stage2_path,
        stage2,
        model,
    })
}
