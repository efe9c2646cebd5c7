//! Accuracy of estimated breaks against the truth, and Monte Carlo
//! summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ols::BreakModel;

/// `max_{b in truth} min_{a in estimated} |b - a|`, in observations.
///
/// If exactly one set is empty the distance is `t_len` (a full sample);
/// two empty sets agree perfectly and are at distance 0.
pub fn hausdorff(estimated: &[usize], truth: &[usize], t_len: usize) -> f64 {
    match (estimated.is_empty(), truth.is_empty()) {
        (true, true) => 0.0,
        (true, false) | (false, true) => t_len as f64,
        _ => truth
            .iter()
            .map(|&b| estimated.iter().map(|&a| a.abs_diff(b)).min().unwrap())
            .max()
            .unwrap() as f64,
    }
}

/// Larger of the two directed distances; unlike [`hausdorff`] it also
/// penalizes spurious estimated breaks.
pub fn symmetric_hausdorff(a: &[usize], b: &[usize], t_len: usize) -> f64 {
    hausdorff(a, b, t_len).max(hausdorff(b, a, t_len))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rep: u64,
    pub m_hat: usize,
    pub m_true: usize,
    pub correct: bool,
    /// Hausdorff distance divided by `T`.
    pub hd_frac: f64,
    pub hd_sym_frac: f64,
    pub breakpoints: Vec<usize>,
    pub tau_hat: Vec<f64>,
    /// Baseline slopes followed by the change at every break.
    pub changes: Vec<Vec<f64>>,
    pub intercept: f64,
    /// Set when estimation failed; such runs count as incorrect.
    pub error: Option<String>,
}

/// Compare an estimate against the truth on the original sample.
pub fn evaluate_run(estimate: &BreakModel, truth: &BreakModel, rep: u64) -> RunRecord {
    let t_len = truth.original_len;
    let est = estimate.original_breakpoints();
    let tru = truth.original_breakpoints();
    let hd = hausdorff(&est, &tru, t_len);
    RunRecord {
        rep,
        m_hat: est.len(),
        m_true: tru.len(),
        correct: est.len() == tru.len(),
        hd_frac: hd / t_len as f64,
        hd_sym_frac: symmetric_hausdorff(&est, &tru, t_len) / t_len as f64,
        tau_hat: est.iter().map(|&b| b as f64 / t_len as f64).collect(),
        breakpoints: est,
        changes: estimate.coefficient_changes(),
        intercept: estimate.intercept,
        error: None,
    }
}

pub fn failed_run(truth: &BreakModel, rep: u64, error: String) -> RunRecord {
    RunRecord {
        rep,
        m_hat: 0,
        m_true: truth.n_breaks(),
        correct: false,
        hd_frac: 1.0,
        hd_sym_frac: 1.0,
        breakpoints: vec![],
        tau_hat: vec![],
        changes: vec![],
        intercept: f64::NAN,
        error: Some(error),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub scenario: String,
    pub method: String,
    pub t: usize,
    pub reps: usize,
    pub m_true: usize,
    pub pce: f64,
    /// Mean Hausdorff distance over `T`, in percent.
    pub hd_over_t_pct: Option<f64>,
    /// Same for the symmetric distance (diagnostic).
    pub hd_sym_over_t_pct: Option<f64>,
    /// Whether the distances above average over every run rather than only
    /// the runs with the correct number of breaks.
    pub hd_all_runs: bool,
    pub tau: Vec<Option<MeanSd>>,
    /// `theta[k][j]`: regressor `k`, group `j` (0 is the baseline).
    pub theta: Vec<Vec<Option<MeanSd>>>,
    pub m_hat_counts: BTreeMap<usize, usize>,
    pub failures: usize,
}

/// Percent of runs with the right number of breaks, plus break-date and
/// coefficient statistics over those runs.
pub fn aggregate(
    records: &[RunRecord],
    scenario: &str,
    method: &str,
    t_len: usize,
    n: usize,
    include_all_runs: bool,
) -> Result<MonteCarloReport> {
    if records.is_empty() {
        return invalid("cannot aggregate an empty set of runs");
    }
    let m_true = records[0].m_true;
    let correct: Vec<&RunRecord> = records.iter().filter(|r| r.correct).collect();
    let pce = 100.0 * correct.len() as f64 / records.len() as f64;
    let hd_pool: Vec<&RunRecord> = if include_all_runs {
        records.iter().collect()
    } else {
        correct.clone()
    };
    let hd: Vec<f64> = hd_pool.iter().map(|r| 100.0 * r.hd_frac).collect();
    let hd_sym: Vec<f64> = hd_pool.iter().map(|r| 100.0 * r.hd_sym_frac).collect();
    let tau = (0..m_true)
        .map(|j| MeanSd::of(&correct.iter().map(|r| r.tau_hat[j]).collect::<Vec<_>>()))
        .collect();
    let theta = (0..n)
        .map(|k| {
            (0..=m_true)
                .map(|j| MeanSd::of(&correct.iter().map(|r| r.changes[j][k]).collect::<Vec<_>>()))
                .collect()
        })
        .collect();
    let mut m_hat_counts = BTreeMap::new();
    for r in records {
        *m_hat_counts.entry(r.m_hat).or_insert(0) += 1;
    }
    Ok(MonteCarloReport {
        scenario: scenario.to_string(),
        method: method.to_string(),
        t: t_len,
        reps: records.len(),
        m_true,
        pce,
        hd_over_t_pct: MeanSd::of(&hd).map(|s| s.mean),
        hd_sym_over_t_pct: MeanSd::of(&hd_sym).map(|s| s.mean),
        hd_all_runs: include_all_runs,
        tau,
        theta,
        m_hat_counts,
        failures: records.iter().filter(|r| r.error.is_some()).count(),
    })
}

impl MonteCarloReport {
    /// Tab-separated header and one row: `T, pce, hd/T, tau_j..., theta_k,j...`
    /// with `mean (sd)` cells, `NA` where no run qualifies.
    pub fn to_tsv(&self) -> String {
        let mut head = vec!["T".to_string(), "pce".into(), "hd/T".into()];
        for j in 1..=self.m_true {
            head.push(if self.m_true == 1 { "tau".into() } else { format!("tau_{j}") });
        }
        for k in 0..self.theta.len() {
            for j in 0..self.theta[k].len() {
                head.push(format!("theta_{},{}", k + 1, j + 1));
            }
        }
        let cell = |s: &Option<MeanSd>, digits: usize| match s {
            Some(s) => format!("{:.*} ({:.3})", digits, s.mean, s.sd),
            None => "NA".into(),
        };
        let mut row = vec![
            self.t.to_string(),
            format!("{:.1}", self.pce),
            self.hd_over_t_pct.map_or("NA".into(), |v| format!("{v:.2}")),
        ];
        row.extend(self.tau.iter().map(|s| cell(s, 3)));
        for k in &self.theta {
            row.extend(k.iter().map(|s| cell(s, 2)));
        }
        let mut out = String::new();
        let _ = writeln!(out, "{}", head.join("\t"));
        let _ = writeln!(out, "{}", row.join("\t"));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(bps: Vec<usize>, t_len: usize) -> BreakModel {
        let regimes = bps.len() + 1;
        BreakModel {
            breakpoints: bps,
            segment_betas: (0..regimes).map(|r| vec![2.0 + 2.0 * r as f64]).collect(),
            intercept: 2.0,
            augment_coefs: vec![],
            residuals: vec![],
            ssr: 0.0,
            sample_len: t_len,
            offset: 0,
            original_len: t_len,
        }
    }

    #[test]
    fn hausdorff_examples() {
        assert_eq!(hausdorff(&[50], &[50], 100), 0.0);
        assert_eq!(hausdorff(&[], &[50], 100), 100.0);
        assert_eq!(hausdorff(&[40, 90], &[50], 100), 10.0);
        assert_eq!(symmetric_hausdorff(&[40, 90], &[50], 100), 40.0);
        assert_eq!(hausdorff(&[], &[], 100), 0.0);
    }

    #[test]
    fn exact_estimate_is_correct() {
        let truth = model(vec![100], 200);
        let r = evaluate_run(&truth, &truth, 0);
        assert!(r.correct);
        assert_eq!(r.hd_frac, 0.0);
    }

    #[test]
    fn near_miss_distance() {
        let r = evaluate_run(&model(vec![102], 200), &model(vec![100], 200), 0);
        assert!((r.hd_frac - 0.01).abs() < 1e-15);
        assert_eq!(r.tau_hat, vec![0.51]);
    }

    #[test]
    fn wrong_count_flagged_and_excluded() {
        let truth = model(vec![100], 200);
        let runs = vec![
            evaluate_run(&truth, &truth, 0),
            evaluate_run(&model(vec![60, 100], 200), &truth, 1),
        ];
        assert!(!runs[1].correct);
        let rep = aggregate(&runs, "sb1", "lasso", 200, 1, false).unwrap();
        assert_eq!(rep.pce, 50.0);
        assert_eq!(rep.hd_over_t_pct, Some(0.0));
        assert_eq!(rep.tau[0].unwrap().mean, 0.5);
        let all = aggregate(&runs, "sb1", "lasso", 200, 1, true).unwrap();
        assert_eq!(all.hd_over_t_pct, Some(0.0));
        assert_eq!(all.hd_sym_over_t_pct, Some(10.0));
    }

    #[test]
    fn aggregate_needs_records() {
        assert!(aggregate(&[], "x", "lasso", 100, 1, false).is_err());
    }

    #[test]
    fn tsv_layout() {
        let truth = model(vec![100], 200);
        let runs = vec![evaluate_run(&truth, &truth, 0)];
        let tsv = aggregate(&runs, "sb1", "lasso", 200, 1, false).unwrap().to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], "T\tpce\thd/T\ttau\ttheta_1,1\ttheta_1,2");
        assert_eq!(lines[1], "200\t100.0\t0.00\t0.500 (0.000)\t2.00 (0.000)\t2.00 (0.000)");
    }
}
