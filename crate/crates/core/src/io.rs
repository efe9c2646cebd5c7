//! CSV ingestion, residual export, flat configuration files and estimation
//! reports.
//!
//! Input CSV: a header row, an optional first column named `date` holding
//! opaque labels, then `y`, then one column per regressor. Every cell must
//! parse as a finite number.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::baiperron::{BaiPerronConfig, BaiPerronFit};
use crate::data::TimeSeriesData;
use crate::error::{invalid, Error, Result};
use crate::ols::BreakModel;
use crate::sim::SimConfig;
use crate::stage1::Stage1Solution;
use crate::stage2::{PipelineConfig, PipelineTrace};

pub fn read_csv<R: Read>(reader: R) -> Result<TimeSeriesData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let dated = header.first().is_some_and(|h| h.eq_ignore_ascii_case("date"));
    let first = usize::from(dated);
    if header.len() < first + 2 {
        return invalid(format!(
            "need a `y` column and at least one regressor, header has {} column(s)",
            header.len()
        ));
    }
    let mut labels = Vec::new();
    let mut y = Vec::new();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        if rec.len() != header.len() {
            return invalid(format!("row {row}: expected {} fields, found {}", header.len(), rec.len()));
        }
        if dated {
            labels.push(rec[0].to_string());
        }
        let mut vals = Vec::with_capacity(header.len() - first);
        for (c, cell) in rec.iter().enumerate().skip(first) {
            let v: f64 = cell.parse().map_err(|_| {
                Error::InvalidInput(format!("row {row}, column `{}`: `{cell}` is not a number", header[c]))
            })?;
            if !v.is_finite() {
                return invalid(format!("row {row}, column `{}`: missing or non-finite value", header[c]));
            }
            vals.push(v);
        }
        y.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    if y.is_empty() {
        return invalid("no data rows");
    }
    let data = TimeSeriesData::from_rows(y, &rows)?;
    if dated {
        data.with_labels(labels)
    } else {
        Ok(data)
    }
}

pub fn read_csv_path(path: &std::path::Path) -> Result<TimeSeriesData> {
    read_csv(std::fs::File::open(path)?)
}

/// Inverse of [`read_csv`]: `date` (when labelled), `y`, `x1`, ..., `xN`.
pub fn write_data_csv<W: Write>(data: &TimeSeriesData, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = data.n_regressors();
    let mut head: Vec<String> = Vec::new();
    if data.labels().is_some() {
        head.push("date".into());
    }
    head.push("y".into());
    head.extend((1..=n).map(|j| format!("x{j}")));
    w.write_record(&head)?;
    for t in 0..data.len() {
        let mut rec: Vec<String> = Vec::with_capacity(head.len());
        if let Some(l) = data.labels() {
            rec.push(l[t].clone());
        }
        rec.push(data.y()[t].to_string());
        rec.extend((0..n).map(|j| data.x()[(t, j)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Residual series as `row,date,residual` (`date` only when `labels` is
/// given), `row` being the 1-based index in the original sample. Values are
/// written in shortest round-trip form.
pub fn write_residuals<W: Write>(model: &BreakModel, labels: Option<&[String]>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if labels.is_some() {
        w.write_record(["row", "date", "residual"])?;
    } else {
        w.write_record(["row", "residual"])?;
    }
    for (t, r) in model.residuals.iter().enumerate() {
        let row = model.offset + t + 1;
        let mut rec = vec![row.to_string()];
        if let Some(l) = labels {
            rec.push(l.get(row - 1).cloned().unwrap_or_default());
        }
        rec.push(r.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Residual column of a file written by [`write_residuals`].
pub fn read_residuals<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "residual")
        .ok_or_else(|| Error::InvalidInput("no `residual` column".into()))?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            rec[col]
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("bad residual `{}`", &rec[col])))
        })
        .collect()
}

/// Flat key/value settings. Estimator keys carry the names of the
/// corresponding configuration fields; simulation keys those of
/// [`SimConfig`]. Absent keys keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    // estimator
    pub method: Option<String>,
    pub max_breaks: Option<usize>,
    pub delta: Option<f64>,
    pub c0_grid: Option<Vec<f64>>,
    pub max_candidates: Option<usize>,
    pub min_spacing: Option<usize>,
    pub min_regime: Option<usize>,
    pub trim_lo: Option<f64>,
    pub trim_hi: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub rho: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub grid_points: Option<usize>,
    pub grid_epsilon: Option<f64>,
    pub leads_lags: Option<usize>,
    pub min_seg: Option<usize>,
    // simulation
    pub scenario: Option<String>,
    pub t: Option<usize>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub mu: Option<f64>,
    pub baseline_beta: Option<Vec<f64>>,
    pub break_fractions: Option<Vec<f64>>,
    pub jumps: Option<Vec<Vec<f64>>>,
    pub sigma_theta_sq: Option<f64>,
    pub sigma_omega_sq: Option<f64>,
    pub endogenous: Option<bool>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident, $($f:ident),*) => {
        FileConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl FileConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Values in `top` win over those in `self`.
    pub fn overlay(self, top: FileConfig) -> FileConfig {
        let base = self;
        overlay_fields!(
            base, top, method, max_breaks, delta, c0_grid, max_candidates, min_spacing, min_regime,
            trim_lo, trim_hi, tol, max_iter, rho, gamma, lambda_grid, grid_points, grid_epsilon,
            leads_lags, min_seg, scenario, t, n, reps, mu, baseline_beta, break_fractions, jumps,
            sigma_theta_sq, sigma_omega_sq, endogenous, seed, jobs
        )
    }

    pub fn apply_pipeline(&self, c: &mut PipelineConfig) {
        let s1 = &mut c.stage1;
        let s2 = &mut c.stage2;
        if let Some(v) = self.delta {
            s1.delta = v;
            s2.delta = v;
        }
        if let Some(v) = &self.c0_grid {
            s1.c0_grid = v.clone();
        }
        if let Some(v) = self.max_candidates {
            s1.max_candidates = v;
        }
        if let Some(v) = self.min_spacing {
            s1.min_spacing = v;
            s2.min_spacing = v;
        }
        if let Some(v) = self.min_regime {
            s1.min_regime = v;
        }
        if let Some(v) = self.trim_lo {
            s1.trim_lo = v;
        }
        if let Some(v) = self.trim_hi {
            s1.trim_hi = v;
        }
        if let Some(v) = self.tol {
            s1.tol = v;
            s2.tol = v;
        }
        if let Some(v) = self.max_iter {
            s1.max_iter = v;
            s2.max_iter = v;
        }
        if self.rho.is_some() {
            s1.rho = self.rho;
        }
        if let Some(v) = self.gamma {
            s2.gamma = v;
        }
        if self.lambda_grid.is_some() {
            s2.lambda_grid = self.lambda_grid.clone();
        }
        if let Some(v) = self.grid_points {
            s2.grid_points = v;
        }
        if let Some(v) = self.grid_epsilon {
            s2.grid_epsilon = v;
        }
        if self.leads_lags.is_some() {
            c.leads_lags = self.leads_lags;
        }
    }

    pub fn apply_baiperron(&self, c: &mut BaiPerronConfig) {
        if let Some(v) = self.max_breaks {
            c.max_breaks = v;
        }
        if self.min_seg.is_some() {
            c.min_seg = self.min_seg;
        }
    }

    pub fn apply_sim(&self, c: &mut SimConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { c.$f = v.clone(); } )* };
        }
        set!(t, n, reps, mu, baseline_beta, break_fractions, jumps, sigma_theta_sq, sigma_omega_sq, endogenous, seed);
        if self.leads_lags.is_some() {
            c.leads_lags = self.leads_lags;
        }
        if self.trim_lo.is_some() {
            c.trim_lo = self.trim_lo;
        }
        if self.trim_hi.is_some() {
            c.trim_hi = self.trim_hi;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakDate {
    /// 1-based row in the input file.
    pub row: usize,
    pub label: Option<String>,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub first_row: usize,
    pub last_row: usize,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub breakpoints: Vec<usize>,
    pub ssr: f64,
    pub criterion: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CriterionTrace {
    Lasso {
        stage1: Vec<PathPoint>,
        candidates: Vec<usize>,
        weights: Vec<f64>,
        stage2: Vec<PathPoint>,
    },
    BaiPerron {
        /// One point per number of breaks; `lambda` holds `m`.
        partitions: Vec<PathPoint>,
    },
}

/// Everything `estimate` reports for one method. Indices in `trace` are
/// local to the estimation sample (they differ from file rows by the
/// augmentation offset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakReport {
    pub method: String,
    pub rows: usize,
    pub estimation_rows: usize,
    pub breaks: Vec<BreakDate>,
    pub segments: Vec<Segment>,
    pub intercept: f64,
    pub augment_coefs: Vec<f64>,
    pub ssr: f64,
    pub trace: CriterionTrace,
}

fn report_base(method: &str, model: &BreakModel, labels: Option<&[String]>, trace: CriterionTrace) -> BreakReport {
    let rows = model.original_len;
    let bps = model.original_breakpoints();
    let breaks = bps
        .iter()
        .map(|&b| BreakDate {
            row: b,
            label: labels.and_then(|l| l.get(b - 1).cloned()),
            fraction: b as f64 / rows as f64,
        })
        .collect();
    let mut firsts = vec![model.offset + 1];
    firsts.extend(&bps);
    let last = model.offset + model.sample_len;
    let segments = model
        .segment_betas
        .iter()
        .enumerate()
        .map(|(k, beta)| Segment {
            first_row: firsts[k],
            last_row: firsts.get(k + 1).map_or(last, |s| s - 1),
            beta: beta.clone(),
        })
        .collect();
    BreakReport {
        method: method.into(),
        rows,
        estimation_rows: model.sample_len,
        breaks,
        segments,
        intercept: model.intercept,
        augment_coefs: model.augment_coefs.clone(),
        ssr: model.ssr,
        trace,
    }
}

/// Stage-one path points with their information criterion.
pub fn stage1_points(path: &[Stage1Solution], selected: &Stage1Solution) -> Vec<PathPoint> {
    path.iter()
        .map(|s| PathPoint {
            lambda: s.lambda,
            breakpoints: s.active_set.clone(),
            ssr: s.ssr,
            criterion: s.ic_value,
            selected: s.lambda == selected.lambda,
        })
        .collect()
}

impl BreakReport {
    pub fn from_lasso(trace: &PipelineTrace, labels: Option<&[String]>) -> Self {
        let chosen = trace.stage2.as_ref().map(|s| s.lambda);
        let stage2 = trace
            .stage2_path
            .iter()
            .map(|s| PathPoint {
                lambda: s.lambda,
                breakpoints: s.breakpoints.clone(),
                ssr: s.ssr,
                criterion: s.bic,
                selected: Some(s.lambda) == chosen,
            })
            .collect();
        let ic = CriterionTrace::Lasso {
            stage1: stage1_points(&trace.stage1_path, &trace.stage1),
            candidates: trace.candidates.clone(),
            weights: trace.weights.as_ref().map(|w| w.weights[1..].to_vec()).unwrap_or_default(),
            stage2,
        };
        report_base("lasso", &trace.model, labels, ic)
    }

    pub fn from_baiperron(fit: &BaiPerronFit, labels: Option<&[String]>) -> Self {
        let partitions = fit
            .candidates
            .iter()
            .map(|(m, bps, ssr, bic)| PathPoint {
                lambda: *m as f64,
                breakpoints: bps.clone(),
                ssr: *ssr,
                criterion: *bic,
                selected: *m == fit.chosen,
            })
            .collect();
        report_base("baiperron", &fit.model, labels, CriterionTrace::BaiPerron { partitions })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Tab-separated `lambda, active, ssr, ic, selected` table of a stage-one
/// path, one row per grid point in decreasing `lambda`.
pub fn path_table(points: &[PathPoint]) -> String {
    let mut out = String::from("lambda\tactive\tssr\tic\tselected\n");
    for p in points {
        let _ = writeln!(
            out,
            "{:.6e}\t{}\t{:.6e}\t{:.6}\t{}",
            p.lambda,
            p.breakpoints.len(),
            p.ssr,
            p.criterion,
            if p.selected { "*" } else { "" }
        );
    }
    out
}
