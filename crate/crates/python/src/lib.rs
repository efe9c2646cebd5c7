//! Python bindings: estimation, the Bai-Perron baseline, segment OLS,
//! simulation and Monte Carlo summaries over plain lists of floats.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use coint_breaks::baiperron::{select_num_breaks, BaiPerronConfig};
use coint_breaks::metrics;
use coint_breaks::montecarlo::{run_monte_carlo, Method, MonteCarloSpec};
use coint_breaks::sim::{generate, scenario};
use coint_breaks::stage2::{estimate_breaks_traced, PipelineConfig};
use coint_breaks::{Error, TimeSeriesData};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Infeasible(_) | Error::RankDeficient(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Sample from `y` and row-major regressors `x`.
pub fn to_data(y: Vec<f64>, x: Vec<Vec<f64>>) -> coint_breaks::Result<TimeSeriesData> {
    TimeSeriesData::from_rows(y, &x)
}

/// A fitted break model. Break indices are 1-based rows of the input.
#[pyclass(name = "BreakModel", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyBreakModel {
    inner: coint_breaks::BreakModel,
}

#[pymethods]
impl PyBreakModel {
    #[getter]
    fn breakpoints(&self) -> Vec<usize> {
        self.inner.original_breakpoints()
    }

    #[getter]
    fn break_fractions(&self) -> Vec<f64> {
        self.inner.break_fractions()
    }

    #[getter]
    fn segment_betas(&self) -> Vec<Vec<f64>> {
        self.inner.segment_betas.clone()
    }

    /// Baseline slopes followed by the change at each break.
    #[getter]
    fn coefficient_changes(&self) -> Vec<Vec<f64>> {
        self.inner.coefficient_changes()
    }

    #[getter]
    fn intercept(&self) -> f64 {
        self.inner.intercept
    }

    #[getter]
    fn augment_coefs(&self) -> Vec<f64> {
        self.inner.augment_coefs.clone()
    }

    #[getter]
    fn residuals(&self) -> Vec<f64> {
        self.inner.residuals.clone()
    }

    #[getter]
    fn ssr(&self) -> f64 {
        self.inner.ssr
    }

    fn __repr__(&self) -> String {
        format!(
            "BreakModel(breakpoints={:?}, ssr={:.6})",
            self.inner.original_breakpoints(),
            self.inner.ssr
        )
    }
}

#[pyclass(name = "MonteCarloReport", frozen, skip_from_py_object)]
pub struct PyMonteCarloReport {
    inner: metrics::MonteCarloReport,
}

#[pymethods]
impl PyMonteCarloReport {
    #[getter]
    fn pce(&self) -> f64 {
        self.inner.pce
    }

    #[getter]
    fn hd_over_t_pct(&self) -> Option<f64> {
        self.inner.hd_over_t_pct
    }

    #[getter]
    fn reps(&self) -> usize {
        self.inner.reps
    }

    /// Mean estimated break fraction per true break (`None` when no run
    /// found the right number of breaks).
    #[getter]
    fn tau_means(&self) -> Vec<Option<f64>> {
        self.inner.tau.iter().map(|s| s.map(|s| s.mean)).collect()
    }

    fn to_tsv(&self) -> String {
        self.inner.to_tsv()
    }
}

/// Two-step adaptive group lasso estimate.
#[pyfunction]
#[pyo3(signature = (y, x, max_breaks=5, leads_lags=None, trim_lo=None, trim_hi=None, gamma=None, min_regime=None))]
#[allow(clippy::too_many_arguments)]
fn estimate_breaks(
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
    max_breaks: usize,
    leads_lags: Option<usize>,
    trim_lo: Option<f64>,
    trim_hi: Option<f64>,
    gamma: Option<f64>,
    min_regime: Option<usize>,
) -> PyResult<PyBreakModel> {
    let data = to_data(y, x).map_err(py_err)?;
    let mut cfg = PipelineConfig::for_sample(data.len(), data.n_regressors(), max_breaks);
    cfg.leads_lags = leads_lags;
    if let Some(v) = trim_lo {
        cfg.stage1.trim_lo = v;
    }
    if let Some(v) = trim_hi {
        cfg.stage1.trim_hi = v;
    }
    if let Some(v) = gamma {
        cfg.stage2.gamma = v;
    }
    if let Some(v) = min_regime {
        cfg.stage1.min_regime = v;
    }
    let trace = estimate_breaks_traced(&data, &cfg).map_err(py_err)?;
    Ok(PyBreakModel { inner: trace.model })
}

/// Global-SSR dynamic programming with the number of breaks chosen by BIC.
#[pyfunction]
#[pyo3(signature = (y, x, max_breaks=5, min_seg=None))]
fn bai_perron(y: Vec<f64>, x: Vec<Vec<f64>>, max_breaks: usize, min_seg: Option<usize>) -> PyResult<PyBreakModel> {
    let data = to_data(y, x).map_err(py_err)?;
    let cfg = BaiPerronConfig {
        max_breaks,
        min_seg,
        ..BaiPerronConfig::default()
    };
    let fit = select_num_breaks(&data, &cfg).map_err(py_err)?;
    Ok(PyBreakModel { inner: fit.model })
}

/// Least squares with regime-specific slopes at the given breakpoints.
#[pyfunction]
fn segment_ols(y: Vec<f64>, x: Vec<Vec<f64>>, breakpoints: Vec<usize>) -> PyResult<PyBreakModel> {
    let data = to_data(y, x).map_err(py_err)?;
    let inner = coint_breaks::segment_ols(&data, &breakpoints).map_err(py_err)?;
    Ok(PyBreakModel { inner })
}

/// One draw of a named scenario: `(y, x_rows, true_breakpoints)`.
#[pyfunction]
#[pyo3(signature = (name, t=None, rep=0, seed=None))]
#[allow(clippy::type_complexity)]
fn simulate(
    name: &str,
    t: Option<usize>,
    rep: u64,
    seed: Option<u64>,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, Vec<usize>)> {
    let mut cfg = scenario(name).map_err(py_err)?;
    if let Some(t) = t {
        cfg.t = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (data, truth) = generate(&cfg, rep).map_err(py_err)?;
    let x = (0..data.len())
        .map(|r| (0..data.n_regressors()).map(|j| data.x()[(r, j)]).collect())
        .collect();
    Ok((data.y().to_vec(), x, truth.breakpoints))
}

/// Replications of a named scenario with the breaks cap and candidate
/// budget both set to the true number of breaks.
#[pyfunction]
#[pyo3(signature = (name, t, reps, method="lasso", jobs=1, seed=None))]
fn monte_carlo(
    py: Python<'_>,
    name: &str,
    t: usize,
    reps: usize,
    method: &str,
    jobs: usize,
    seed: Option<u64>,
) -> PyResult<PyMonteCarloReport> {
    let mut cfg = scenario(name).map_err(py_err)?;
    cfg.t = t;
    cfg.reps = reps;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let method: Method = method.parse().map_err(py_err)?;
    let spec = MonteCarloSpec::table_setup(cfg, method);
    let (_, report) = py.detach(|| run_monte_carlo(&spec, jobs)).map_err(py_err)?;
    Ok(PyMonteCarloReport { inner: report })
}

/// Largest distance from a true break to its nearest estimate.
#[pyfunction]
fn hausdorff(estimated: Vec<usize>, truth: Vec<usize>, t_len: usize) -> f64 {
    metrics::hausdorff(&estimated, &truth, t_len)
}

#[pymodule]
fn coint_breaks_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBreakModel>()?;
    m.add_class::<PyMonteCarloReport>()?;
    m.add_function(wrap_pyfunction!(estimate_breaks, m)?)?;
    m.add_function(wrap_pyfunction!(bai_perron, m)?)?;
    m.add_function(wrap_pyfunction!(segment_ols, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(hausdorff, m)?)?;
    Ok(())
}
