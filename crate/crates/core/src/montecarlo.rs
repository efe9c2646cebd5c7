//! Parallel replication runner.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baiperron::{select_num_breaks, BaiPerronConfig};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, evaluate_run, failed_run, MonteCarloReport, RunRecord};
use crate::sim::{generate, SimConfig};
use crate::stage2::{estimate_breaks, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lasso,
    BaiPerron,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lasso => "lasso",
            Method::BaiPerron => "baiperron",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lasso" => Ok(Method::Lasso),
            "baiperron" => Ok(Method::BaiPerron),
            other => Err(Error::InvalidInput(format!("unknown method {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    pub sim: SimConfig,
    pub method: Method,
    pub pipeline: PipelineConfig,
    pub baiperron: BaiPerronConfig,
    pub include_all_runs: bool,
}

impl MonteCarloSpec {
    /// Estimator defaults for the design, honoring its trimming and
    /// lead/lag settings, allowing up to `max_breaks` breaks.
    pub fn new(sim: SimConfig, method: Method, max_breaks: usize) -> Self {
        let mut pipeline = PipelineConfig::for_sample(sim.t, sim.n, max_breaks);
        if let Some(lo) = sim.trim_lo {
            pipeline.stage1.trim_lo = lo;
        }
        if let Some(hi) = sim.trim_hi {
            pipeline.stage1.trim_hi = hi;
        }
        pipeline.leads_lags = sim.leads_lags;
        let baiperron = BaiPerronConfig {
            max_breaks,
            ..BaiPerronConfig::default()
        };
        Self {
            sim,
            method,
            pipeline,
            baiperron,
            include_all_runs: false,
        }
    }

    /// Reference replication set-up: the maximum number
    /// of breaks and the number of first-step candidates both equal the
    /// number of breaks in the design (at least one).
    pub fn table_setup(sim: SimConfig, method: Method) -> Self {
        let m = sim.break_fractions.len().max(1);
        let mut spec = Self::new(sim, method, m);
        spec.pipeline.stage1.max_candidates = m;
        spec
    }
}

/// Generate and estimate replication `rep`. Estimation failures are
/// recorded in the returned run rather than raised.
pub fn run_replication(spec: &MonteCarloSpec, rep: u64) -> Result<RunRecord> {
    let (data, truth) = generate(&spec.sim, rep)?;
    let estimate = match spec.method {
        Method::Lasso => estimate_breaks(&data, &spec.pipeline),
        Method::BaiPerron => select_num_breaks(&data, &spec.baiperron).map(|f| f.model),
    };
    Ok(match estimate {
        Ok(model) => evaluate_run(&model, &truth, rep),
        Err(e) => failed_run(&truth, rep, e.to_string()),
    })
}

/// All replications on a pool of `jobs` threads. Replications are seeded
/// individually and collected in order, so the result does not depend on
/// `jobs`.
pub fn run_monte_carlo(spec: &MonteCarloSpec, jobs: usize) -> Result<(Vec<RunRecord>, MonteCarloReport)> {
    spec.sim.validate()?;
    // Settings errors would otherwise surface as every run failing.
    if spec.method == Method::Lasso {
        spec.pipeline.stage1.validate(spec.sim.t)?;
        spec.pipeline.stage2.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let records = pool.install(|| {
        (0..spec.sim.reps as u64)
            .into_par_iter()
            .map(|rep| run_replication(spec, rep))
            .collect::<Result<Vec<_>>>()
    })?;
    let report = aggregate(
        &records,
        &spec.sim.name,
        &spec.method.to_string(),
        spec.sim.t,
        spec.sim.n,
        spec.include_all_runs,
    )?;
    Ok((records, report))
}
