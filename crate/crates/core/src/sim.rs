//! Monte Carlo data-generating processes: a cointegrating regression on
//! random-walk regressors with slope breaks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesData;
use crate::error::{invalid, Error, Result};
use crate::ols::BreakModel;

/// One simulation design. Field names double as the scenario file schema
/// (TOML); omitted keys take the values of the `sb1` design at `t = 200`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub name: String,
    /// Sample length.
    pub t: usize,
    /// Number of regressors.
    pub n: usize,
    pub reps: usize,
    pub mu: f64,
    pub baseline_beta: Vec<f64>,
    pub break_fractions: Vec<f64>,
    /// One change vector per break.
    pub jumps: Vec<Vec<f64>>,
    pub sigma_theta_sq: f64,
    pub sigma_omega_sq: f64,
    /// Draw the regression error jointly with the regressor innovations,
    /// with covariance 0.5 between the error and every innovation.
    pub endogenous: bool,
    pub seed: u64,
    /// Lead/lag order the estimator should use for this design.
    pub leads_lags: Option<usize>,
    /// Estimator trimming for this design, if it differs from the default.
    pub trim_lo: Option<f64>,
    pub trim_hi: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            name: "sb1".into(),
            t: 200,
            n: 2,
            reps: 200,
            mu: 2.0,
            baseline_beta: vec![2.0, 2.0],
            break_fractions: vec![0.5],
            jumps: vec![vec![2.0, 2.0]],
            sigma_theta_sq: 4.0,
            sigma_omega_sq: 1.0,
            endogenous: false,
            seed: 1,
            leads_lags: None,
            trim_lo: None,
            trim_hi: None,
        }
    }
}

pub const SCENARIOS: &[&str] = &[
    "sb1",
    "sb2",
    "sb4",
    "partial",
    "partial_sb2",
    "partial_sb4",
    "boundary_0.1",
    "boundary_0.9",
    "boundary_0.1_0.9",
    "boundary_0.1_0.95",
    "endogenous",
    "endogenous_sb2",
    "endogenous_sb4",
    "null",
];

/// Built-in designs by name.
pub fn scenario(name: &str) -> Result<SimConfig> {
    let base = SimConfig {
        name: name.to_string(),
        ..SimConfig::default()
    };
    let full = |taus: &[f64]| -> SimConfig {
        SimConfig {
            break_fractions: taus.to_vec(),
            jumps: vec![vec![2.0, 2.0]; taus.len()],
            ..base.clone()
        }
    };
    let partial = |taus: &[f64]| -> SimConfig {
        SimConfig {
            jumps: vec![vec![2.0, 0.0]; taus.len()],
            ..full(taus)
        }
    };
    let endogenous = |taus: &[f64]| -> SimConfig {
        SimConfig {
            endogenous: true,
            leads_lags: Some(1),
            ..full(taus)
        }
    };
    let trimmed = |taus: &[f64], lo: f64, hi: f64| -> SimConfig {
        SimConfig {
            trim_lo: Some(lo),
            trim_hi: Some(hi),
            ..full(taus)
        }
    };
    const SB2: &[f64] = &[0.33, 0.67];
    const SB4: &[f64] = &[0.2, 0.4, 0.6, 0.8];
    let cfg = match name {
        "sb1" => full(&[0.5]),
        "sb2" => full(SB2),
        "sb4" => full(SB4),
        "partial" => partial(&[0.5]),
        "partial_sb2" => partial(SB2),
        "partial_sb4" => partial(SB4),
        "boundary_0.1" => trimmed(&[0.1], 0.05, 0.05),
        "boundary_0.9" => trimmed(&[0.9], 0.05, 0.05),
        "boundary_0.1_0.9" => trimmed(&[0.1, 0.9], 0.05, 0.05),
        "boundary_0.1_0.95" => trimmed(&[0.1, 0.95], 0.05, 0.0),
        "endogenous" => endogenous(&[0.5]),
        "endogenous_sb2" => endogenous(SB2),
        "endogenous_sb4" => endogenous(SB4),
        "null" => full(&[]),
        other => {
            return Err(Error::UnknownScenario(format!(
                "{other} (known: {})",
                SCENARIOS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t < 2 * (self.n + 1) {
            return invalid(format!("need n >= 1 and t >= 2(n+1), got t={} n={}", self.t, self.n));
        }
        if self.baseline_beta.len() != self.n {
            return invalid("baseline_beta must have n entries");
        }
        if self.jumps.len() != self.break_fractions.len() {
            return invalid("jumps must have one entry per break fraction");
        }
        if self.jumps.iter().any(|j| j.len() != self.n) {
            return invalid("every jump must have n entries");
        }
        let mut prev = 0.0;
        for &tau in &self.break_fractions {
            if !(tau > prev && tau < 1.0) {
                return invalid("break fractions must be strictly increasing in (0, 1)");
            }
            prev = tau;
        }
        let idx = self.break_indices();
        if idx.windows(2).any(|w| w[0] >= w[1]) || idx.iter().any(|&b| b < 2 || b > self.t) {
            return invalid(format!("break fractions map to unusable indices {idx:?}"));
        }
        if !(self.sigma_theta_sq > 0.0 && self.sigma_omega_sq > 0.0) {
            return invalid("variances must be positive");
        }
        if self.endogenous && self.innovation_factor().is_none() {
            return invalid("endogenous covariance matrix is not positive definite");
        }
        if self.reps == 0 {
            return invalid("reps must be positive");
        }
        Ok(())
    }

    /// 1-based first observation of each new regime, `ceil(tau * T)`.
    pub fn break_indices(&self) -> Vec<usize> {
        self.break_fractions
            .iter()
            .map(|tau| (tau * self.t as f64 - 1e-9).ceil() as usize)
            .collect()
    }

    /// Slope vector of every regime.
    pub fn regime_betas(&self) -> Vec<Vec<f64>> {
        let mut out = vec![self.baseline_beta.clone()];
        for jump in &self.jumps {
            let last = out.last().unwrap();
            out.push(last.iter().zip(jump).map(|(a, b)| a + b).collect());
        }
        out
    }

    /// Lower Cholesky factor of the joint covariance of the error and the
    /// regressor innovations.
    fn innovation_factor(&self) -> Option<DMatrix<f64>> {
        let d = self.n + 1;
        let v = DMatrix::from_fn(d, d, |i, j| match (i, j) {
            (0, 0) => self.sigma_theta_sq,
            (0, _) | (_, 0) => 0.5,
            _ if i == j => self.sigma_omega_sq,
            _ => 0.0,
        });
        v.cholesky().map(|c| c.l())
    }
}

/// Draw replication `rep`. The generator is seeded with `seed` and
/// positioned on stream `rep`, so every replication is reproducible on
/// its own.
pub fn generate(config: &SimConfig, rep: u64) -> Result<(TimeSeriesData, BreakModel)> {
    config.validate()?;
    let t_len = config.t;
    let n = config.n;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(rep);

    let factor = if config.endogenous {
        config.innovation_factor()
    } else {
        None
    };
    let sd_theta = config.sigma_theta_sq.sqrt();
    let sd_omega = config.sigma_omega_sq.sqrt();
    let breaks = config.break_indices();
    let betas = config.regime_betas();

    let mut x = DMatrix::zeros(t_len, n);
    let mut y = Vec::with_capacity(t_len);
    let mut errors = Vec::with_capacity(t_len);
    let mut level = vec![0.0; n];
    let mut z = vec![0.0; n + 1];
    let mut regime = 0usize;
    for t in 0..t_len {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let (err, innov): (f64, Vec<f64>) = match &factor {
            Some(l) => {
                let draw: Vec<f64> = (0..=n)
                    .map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum())
                    .collect();
                (draw[0], draw[1..].to_vec())
            }
            None => (sd_theta * z[0], z[1..].iter().map(|v| sd_omega * v).collect()),
        };
        while regime < breaks.len() && t + 1 >= breaks[regime] {
            regime += 1;
        }
        let mut yt = config.mu + err;
        for j in 0..n {
            level[j] += innov[j];
            x[(t, j)] = level[j];
            yt += betas[regime][j] * level[j];
        }
        y.push(yt);
        errors.push(err);
    }

    let data = TimeSeriesData::new(y, x)?;
    let truth = BreakModel {
        breakpoints: breaks,
        segment_betas: betas,
        intercept: config.mu,
        augment_coefs: vec![],
        ssr: errors.iter().map(|e| e * e).sum(),
        residuals: errors,
        sample_len: t_len,
        offset: 0,
        original_len: t_len,
    };
    Ok((data, truth))
}

/// Squared smallest jump norm times the shortest spacing between
/// consecutive breaks, with the sample ends `0` and `T` as outer limits.
pub fn signal_strength(config: &SimConfig) -> Result<f64> {
    if config.jumps.is_empty() {
        return invalid("signal strength needs at least one break");
    }
    let min_jump = config
        .jumps
        .iter()
        .map(|j| j.iter().map(|v| v * v).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let mut marks = vec![0usize];
    marks.extend(config.break_indices());
    marks.push(config.t);
    let gap = marks.windows(2).map(|w| w[1] - w[0]).min().unwrap();
    Ok(min_jump * gap as f64)
}
