use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use coint_breaks::baiperron::{select_num_breaks, BaiPerronConfig};
use coint_breaks::io::{
    path_table, read_csv_path, stage1_points, write_data_csv, write_residuals, BreakReport, FileConfig,
};
use coint_breaks::montecarlo::{run_monte_carlo, Method, MonteCarloSpec};
use coint_breaks::sim::{generate, scenario, SimConfig};
use coint_breaks::stage2::{estimate_breaks_traced, first_step_path, PipelineConfig};
use coint_breaks::{Error, TimeSeriesData};

#[derive(Parser)]
#[command(name = "coint-breaks", version, about = "Structural breaks in cointegrating regressions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate breaks in a CSV series and write a report plus residuals.
    Estimate {
        csv: PathBuf,
        #[command(flatten)]
        opts: EstimatorOpts,
        #[arg(long, value_enum)]
        method: Option<CliMethod>,
        /// Output directory for `report.json` and `residuals_<method>.csv`;
        /// without it the report goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo replications of a named scenario or a config file.
    Simulate {
        scenario: Option<String>,
        #[command(flatten)]
        opts: EstimatorOpts,
        #[arg(long, value_enum)]
        method: Option<CliMethod>,
        #[arg(long = "T", alias = "t")]
        t: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Average distances over every run, not only those with the right
        /// number of breaks.
        #[arg(long)]
        include_all_runs: bool,
        /// Table destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write every run record as one JSON line.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Write the sample of replication 0 as an input CSV.
        #[arg(long)]
        data_out: Option<PathBuf>,
    },
    /// First-step penalty path diagnostics for a CSV series.
    Path {
        csv: PathBuf,
        #[command(flatten)]
        opts: EstimatorOpts,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliMethod {
    Lasso,
    Baiperron,
    Both,
}

#[derive(Args)]
struct EstimatorOpts {
    /// Flat key/value TOML file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_breaks: Option<usize>,
    #[arg(long)]
    max_candidates: Option<usize>,
    #[arg(long)]
    min_regime: Option<usize>,
    #[arg(long)]
    min_spacing: Option<usize>,
    #[arg(long)]
    trim_lo: Option<f64>,
    #[arg(long)]
    trim_hi: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    leads_lags: Option<usize>,
}

impl EstimatorOpts {
    fn settings(&self) -> Result<FileConfig, Error> {
        let file = match &self.config {
            Some(p) => FileConfig::from_path(p)?,
            None => FileConfig::default(),
        };
        Ok(file.overlay(FileConfig {
            max_breaks: self.max_breaks,
            max_candidates: self.max_candidates,
            min_regime: self.min_regime,
            min_spacing: self.min_spacing,
            trim_lo: self.trim_lo,
            trim_hi: self.trim_hi,
            gamma: self.gamma,
            delta: self.delta,
            leads_lags: self.leads_lags,
            ..FileConfig::default()
        }))
    }
}

const DEFAULT_MAX_BREAKS: usize = 5;

fn parse_method(flag: Option<CliMethod>, file: Option<&str>, default: CliMethod) -> Result<CliMethod, Error> {
    if let Some(m) = flag {
        return Ok(m);
    }
    match file {
        None => Ok(default),
        Some(s) => CliMethod::from_str(s, true).map_err(|_| Error::Config(format!("unknown method `{s}`"))),
    }
}

fn pipeline_for(data: &TimeSeriesData, cfg: &FileConfig) -> PipelineConfig {
    let mb = cfg.max_breaks.unwrap_or(DEFAULT_MAX_BREAKS);
    let mut p = PipelineConfig::for_sample(data.len(), data.n_regressors(), mb);
    cfg.apply_pipeline(&mut p);
    p
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn estimate(csv: &Path, opts: &EstimatorOpts, method: Option<CliMethod>, out: Option<&Path>) -> Result<(), Error> {
    let cfg = opts.settings()?;
    let method = parse_method(method, cfg.method.as_deref(), CliMethod::Lasso)?;
    let data = read_csv_path(csv)?;
    let labels = data.labels();
    let mut reports = Vec::new();
    if method != CliMethod::Baiperron {
        let trace = estimate_breaks_traced(&data, &pipeline_for(&data, &cfg))?;
        reports.push((BreakReport::from_lasso(&trace, labels), trace.model));
    }
    if method != CliMethod::Lasso {
        let mut bp = BaiPerronConfig {
            max_breaks: DEFAULT_MAX_BREAKS,
            ..BaiPerronConfig::default()
        };
        cfg.apply_baiperron(&mut bp);
        let fit = select_num_breaks(&data, &bp)?;
        reports.push((BreakReport::from_baiperron(&fit, labels), fit.model));
    }
    let json = serde_json::to_string_pretty(&reports.iter().map(|r| &r.0).collect::<Vec<_>>())? + "\n";
    match out {
        None => emit(None, &json),
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("report.json"), json)?;
            for (report, model) in &reports {
                let f = fs::File::create(dir.join(format!("residuals_{}.csv", report.method)))?;
                write_residuals(model, labels, f)?;
            }
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    name: Option<&str>,
    opts: &EstimatorOpts,
    method: Option<CliMethod>,
    t: Option<usize>,
    reps: Option<usize>,
    seed: Option<u64>,
    jobs: Option<usize>,
    include_all_runs: bool,
    out: Option<&Path>,
    records: Option<&Path>,
    data_out: Option<&Path>,
) -> Result<(), Error> {
    let cfg = opts.settings()?.overlay(FileConfig {
        t,
        reps,
        seed,
        jobs,
        ..FileConfig::default()
    });
    let name = name.map(str::to_string).or(cfg.scenario.clone());
    let mut sim = match &name {
        Some(n) => scenario(n)?,
        None => SimConfig {
            name: "custom".into(),
            ..SimConfig::default()
        },
    };
    cfg.apply_sim(&mut sim);
    sim.validate()?;
    let method = match parse_method(method, cfg.method.as_deref(), CliMethod::Lasso)? {
        CliMethod::Lasso => Method::Lasso,
        CliMethod::Baiperron => Method::BaiPerron,
        CliMethod::Both => return Err(Error::InvalidInput("simulate runs one method at a time".into())),
    };
    let mut spec = match cfg.max_breaks {
        Some(mb) => MonteCarloSpec::new(sim.clone(), method, mb),
        None => MonteCarloSpec::table_setup(sim.clone(), method),
    };
    cfg.apply_pipeline(&mut spec.pipeline);
    cfg.apply_baiperron(&mut spec.baiperron);
    spec.include_all_runs = include_all_runs;

    if let Some(p) = data_out {
        let (data, _) = generate(&sim, 0)?;
        write_data_csv(&data, fs::File::create(p)?)?;
    }
    let (runs, report) = run_monte_carlo(&spec, cfg.jobs.unwrap_or(1))?;
    let mut text = report.to_tsv();
    if runs.len() == 1 {
        text.push_str(&serde_json::to_string(&runs[0])?);
        text.push('\n');
    }
    emit(out, &text)?;
    if let Some(p) = records {
        let mut lines = String::new();
        for r in &runs {
            lines.push_str(&serde_json::to_string(r)?);
            lines.push('\n');
        }
        fs::write(p, lines)?;
    }
    Ok(())
}

fn path(csv: &Path, opts: &EstimatorOpts, out: Option<&Path>) -> Result<(), Error> {
    let cfg = opts.settings()?;
    let data = read_csv_path(csv)?;
    let (sols, chosen) = first_step_path(&data, &pipeline_for(&data, &cfg))?;
    emit(out, &path_table(&stage1_points(&sols, &chosen)))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible(_) | Error::RankDeficient(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Estimate { csv, opts, method, out } => estimate(csv, opts, *method, out.as_deref()),
        Command::Simulate {
            scenario,
            opts,
            method,
            t,
            reps,
            seed,
            jobs,
            include_all_runs,
            out,
            records,
            data_out,
        } => simulate(
            scenario.as_deref(),
            opts,
            *method,
            *t,
            *reps,
            *seed,
            *jobs,
            *include_all_runs,
            out.as_deref(),
            records.as_deref(),
            data_out.as_deref(),
        ),
        Command::Path { csv, opts, out } => path(csv, opts, out.as_deref()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
