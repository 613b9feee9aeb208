//! Simulation-study driver: repeated generate / estimate / summarize over a
//! grid of cells, with both estimators run on every replicate dataset.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gformula::{
    bayesian_gformula, frequentist_gformula, mean, sample_sd, BootstrapConfig, Estimator, GFormulaResult,
    StandardizeOptions,
};
use crate::mcmc::SamplerConfig;
use crate::model::{ModelSpec, Prior, PriorSpec, Regime};
use crate::panel::Panel;
use crate::rng::StreamKey;
use crate::simgen::{
    gen_time_fixed, gen_time_varying, time_fixed_analysis_spec, time_varying_analysis_spec, TimeFixedDGP,
    TimeVaryingDGP,
};

/// Sample size of every time-fixed dataset.
pub const TIME_FIXED_N: usize = 100;
/// Acceptance rates outside this range are counted in the report.
pub const ACCEPTANCE_RANGE: (f64, f64) = (0.1, 0.6);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    TimeFixed,
    TimeVarying,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "time_fixed" | "time-fixed" => Ok(Scenario::TimeFixed),
            "time_varying" | "time-varying" => Ok(Scenario::TimeVarying),
            _ => Err(Error::InvalidArgument(format!("unknown scenario `{s}`"))),
        }
    }

    pub fn analysis_spec(self) -> ModelSpec {
        match self {
            Scenario::TimeFixed => time_fixed_analysis_spec(),
            Scenario::TimeVarying => time_varying_analysis_spec(),
        }
    }

    pub fn horizon(self) -> usize {
        match self {
            Scenario::TimeFixed => 0,
            Scenario::TimeVarying => 1,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::TimeFixed => "time_fixed",
            Scenario::TimeVarying => "time_varying",
        })
    }
}

/// One grid point. `rho` is used by the time-fixed scenario only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub n: usize,
    pub rho: Option<f64>,
    pub true_rd: f64,
}

impl Cell {
    /// Generates the dataset of one replicate.
    pub fn generate(&self, scenario: Scenario, seed: u64) -> Result<Panel> {
        let sim = match scenario {
            Scenario::TimeFixed => {
                let rho = self
                    .rho
                    .ok_or_else(|| Error::InvalidArgument("time-fixed cells need a correlation".into()))?;
                gen_time_fixed(&TimeFixedDGP { n: self.n, rho, true_rd: self.true_rd }, seed)?
            }
            Scenario::TimeVarying => gen_time_varying(&TimeVaryingDGP { n: self.n, true_rd: self.true_rd }, seed)?,
        };
        Ok(sim.panel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(Error::InvalidArgument(format!("unknown scale `{s}` (expected desk or full)"))),
        }
    }

    /// `(replicates, bootstrap resamples, iterations, burn-in)`.
    pub fn settings(self) -> (usize, usize, usize, usize) {
        match self {
            Scale::Desk => (200, 200, 2000, 500),
            Scale::Full => (1000, 1000, 10_000, 1000),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub scenario: Scenario,
    pub cells: Vec<Cell>,
    pub replicates: usize,
    pub bootstrap: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub prior_intercept: Prior,
    pub prior_slope: Prior,
    pub base_seed: u64,
    /// Worker threads; `None` uses every available core. Results do not
    /// depend on this value.
    pub workers: Option<usize>,
    pub standardize: StandardizeOptions,
}

impl StudyConfig {
    /// The grid of one of the two published tables at the given scale.
    pub fn table(table: u8, scale: Scale, base_seed: u64) -> Result<Self> {
        let (scenario, cells) = match table {
            1 => {
                let mut cells = Vec::new();
                for rho in [0.4, 0.8, 0.9, 0.98] {
                    for rd in [0.0, 0.2] {
                        cells.push(Cell { n: TIME_FIXED_N, rho: Some(rho), true_rd: rd });
                    }
                }
                (Scenario::TimeFixed, cells)
            }
            2 => {
                let mut cells = Vec::new();
                for n in [20, 60, 100] {
                    for rd in [0.0, 0.2] {
                        cells.push(Cell { n, rho: None, true_rd: rd });
                    }
                }
                (Scenario::TimeVarying, cells)
            }
            _ => return Err(Error::InvalidArgument(format!("unknown table {table} (expected 1 or 2)"))),
        };
        let (replicates, bootstrap, iterations, burn_in) = scale.settings();
        Ok(StudyConfig {
            scenario,
            cells,
            replicates,
            bootstrap,
            iterations,
            burn_in,
            thin: 1,
            prior_intercept: Prior::Normal { mean: 0.5f64.ln(), variance: 1000.0 },
            prior_slope: Prior::Normal { mean: 0.0, variance: 3.0 },
            base_seed,
            workers: None,
            standardize: StandardizeOptions::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 || self.bootstrap < 2 {
            return Err(Error::InvalidArgument("replicates and bootstrap resamples must be at least 2".into()));
        }
        if self.cells.is_empty() {
            return Err(Error::InvalidArgument("study has no cells".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        self.prior_intercept.validate()?;
        self.prior_slope.validate()?;
        self.sampler(0).validate()
    }

    pub fn priors(&self, spec: &ModelSpec) -> PriorSpec {
        PriorSpec::uniform(spec, self.prior_intercept, self.prior_slope)
    }

    fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig { iterations: self.iterations, burn_in: self.burn_in, thin: self.thin, seed, ..Default::default() }
    }
}

/// One estimator's result on one replicate dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateEstimate {
    pub estimate: f64,
    pub se: f64,
    /// Share of bootstrap refits that hit the coefficient clamp.
    pub divergence_frac: f64,
    /// Lowest and highest per-block acceptance rate (sampler only).
    pub acceptance: Option<(f64, f64)>,
}

impl ReplicateEstimate {
    fn from_result(r: &GFormulaResult) -> Self {
        let e = r.final_effect();
        ReplicateEstimate {
            estimate: e.point,
            se: e.se,
            divergence_frac: r.divergence_count as f64 / r.usable as f64,
            acceptance: r.acceptance_rate.as_ref().map(|a| {
                a.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
            }),
        }
    }

    pub fn covers(&self, truth: f64) -> bool {
        let h = crate::gformula::Z_975 * self.se;
        self.estimate - h <= truth && truth <= self.estimate + h
    }
}

/// Seed of replicate `m` (1-based).
pub fn replicate_seed(base_seed: u64, m: usize) -> u64 {
    base_seed.wrapping_add(m as u64)
}

/// Generates replicate `m` of `cell` and runs both estimators on it.
pub fn run_replicate(config: &StudyConfig, cell: &Cell, m: usize) -> Result<[ReplicateEstimate; 2]> {
    let key = StreamKey::new(replicate_seed(config.base_seed, m));
    let panel = cell.generate(config.scenario, key.child(0).seed())?;
    let spec = config.scenario.analysis_spec();
    let horizon = config.scenario.horizon();
    let regimes = (Regime::ALWAYS, Regime::NEVER);
    let boot = BootstrapConfig { resamples: config.bootstrap, seed: key.child(1).seed(), standardize: config.standardize };
    let standard = frequentist_gformula(&panel, &spec, regimes, horizon, &boot)?;
    let bayes = bayesian_gformula(
        &panel,
        &spec,
        &config.priors(&spec),
        regimes,
        horizon,
        &config.sampler(key.child(2).seed()),
        &config.standardize,
    )?;
    Ok([ReplicateEstimate::from_result(&standard), ReplicateEstimate::from_result(&bayes)])
}

/// Summary metrics of one estimator within one cell. Bias is `truth − estimate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mean_bias: f64,
    /// Sample SD of the per-replicate biases (divisor `M − 1`).
    pub sd_bias: f64,
    /// Mean squared error of the estimates, `mean_bias² + Var(bias)` with
    /// divisor `M`.
    pub mse: f64,
    /// Mean over replicates of `bias² + se²`.
    pub mse_se2: f64,
    /// Share of Wald intervals containing the truth.
    pub coverage: f64,
}

impl Metrics {
    pub fn compute(truth: f64, estimates: &[(f64, f64)]) -> Result<Self> {
        if estimates.len() < 2 {
            return Err(Error::InvalidArgument("metrics need at least 2 replicates".into()));
        }
        let m = estimates.len() as f64;
        let bias: Vec<f64> = estimates.iter().map(|(e, _)| truth - e).collect();
        let mean_bias = mean(&bias);
        let var_m = bias.iter().map(|b| (b - mean_bias).powi(2)).sum::<f64>() / m;
        let covered = estimates
            .iter()
            .filter(|(e, se)| {
                let h = crate::gformula::Z_975 * se;
                e - h <= truth && truth <= e + h
            })
            .count();
        Ok(Metrics {
            mean_bias,
            sd_bias: sample_sd(&bias),
            mse: mean_bias * mean_bias + var_m,
            mse_se2: estimates.iter().zip(&bias).map(|((_, se), b)| b * b + se * se).sum::<f64>() / m,
            coverage: covered as f64 / m,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRow {
    pub method: Estimator,
    pub metrics: Metrics,
    /// Ratio to the Standard row's `mse` (1 for the Standard row).
    pub mse_ratio: f64,
    /// Ratio to the Standard row's `mse_se2`.
    pub mse_se2_ratio: f64,
    pub divergence_frac: f64,
    /// Replicates with a block acceptance rate outside [`ACCEPTANCE_RANGE`].
    pub acceptance_out_of_range: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub cell: Cell,
    pub rows: [MethodRow; 2],
    /// Per-replicate `[standard, bayes]` results in replicate order.
    pub replicates: Vec<[ReplicateEstimate; 2]>,
}

impl CellReport {
    pub fn standard(&self) -> &MethodRow {
        &self.rows[0]
    }

    pub fn bayes(&self) -> &MethodRow {
        &self.rows[1]
    }
}

/// Runs all replicates of a cell on the current thread pool and summarizes
/// them. Any failing replicate aborts the cell.
pub fn run_cell(cell: &Cell, config: &StudyConfig) -> Result<CellReport> {
    config.validate()?;
    let replicates: Vec<[ReplicateEstimate; 2]> = (1..=config.replicates)
        .into_par_iter()
        .map(|m| {
            run_replicate(config, cell, m).map_err(|e| Error::Replicate { replicate: m, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let metrics = |k: usize| {
        let est: Vec<(f64, f64)> = replicates.iter().map(|r| (r[k].estimate, r[k].se)).collect();
        Metrics::compute(cell.true_rd, &est)
    };
    let (ms, mb) = (metrics(0)?, metrics(1)?);
    let row = |k: usize, method: Estimator, m: Metrics| MethodRow {
        method,
        metrics: m,
        mse_ratio: m.mse / ms.mse,
        mse_se2_ratio: m.mse_se2 / ms.mse_se2,
        divergence_frac: replicates.iter().map(|r| r[k].divergence_frac).sum::<f64>() / replicates.len() as f64,
        acceptance_out_of_range: replicates
            .iter()
            .filter(|r| {
                r[k].acceptance
                    .is_some_and(|(lo, hi)| lo <= ACCEPTANCE_RANGE.0 || hi >= ACCEPTANCE_RANGE.1)
            })
            .count(),
    };
    Ok(CellReport {
        cell: *cell,
        rows: [row(0, Estimator::Bootstrap, ms), row(1, Estimator::Bayes, mb)],
        replicates,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub config: StudyConfig,
    pub table: Option<u8>,
    pub scale: Option<Scale>,
    pub cells: Vec<CellReport>,
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w);
    }
    b.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Runs every cell of `config` in order.
pub fn run_study(config: &StudyConfig) -> Result<SimReport> {
    config.validate()?;
    let cells = pool(config.workers)?.install(|| config.cells.iter().map(|c| run_cell(c, config)).collect::<Result<Vec<_>>>())?;
    Ok(SimReport { config: config.clone(), table: None, scale: None, cells })
}

fn fmt6(v: f64) -> String {
    let s = format!("{v:.6}");
    // Avoid "-0.000000" so equal results print identically.
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn prior_text(p: &Prior) -> String {
    match p {
        Prior::Normal { mean, variance } => format!("normal({mean},{variance})"),
        Prior::DoubleExponential { mean, rate } => format!("laplace({mean},{rate})"),
        Prior::Flat => "flat".into(),
    }
}

impl SimReport {
    /// CSV with a `#` metadata block. Wall time is left out so reruns are
    /// byte-identical.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        writeln!(w, "# gformula simulation report")?;
        writeln!(w, "# version={}", env!("CARGO_PKG_VERSION"))?;
        if let Some(t) = self.table {
            writeln!(w, "# table={t}")?;
        }
        writeln!(w, "# scenario={}", c.scenario)?;
        if let Some(s) = self.scale {
            writeln!(w, "# scale={s}")?;
        }
        writeln!(w, "# base_seed={} (replicate m uses seed base_seed+m)", c.base_seed)?;
        writeln!(
            w,
            "# replicates={} bootstrap={} iterations={} burn_in={} thin={}",
            c.replicates, c.bootstrap, c.iterations, c.burn_in, c.thin
        )?;
        writeln!(w, "# prior_intercept={} prior_slope={}", prior_text(&c.prior_intercept), prior_text(&c.prior_slope))?;
        writeln!(w, "# bias=true_rd-estimate; coverage uses Wald intervals estimate +/- 1.96*se")?;
        writeln!(w, "# mse=mean_bias^2+var(bias) (mean squared error); mse_se2=mean(bias^2+se^2)")?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "method",
            "n",
            "rho",
            "true_rd",
            "mean_bias",
            "sd_bias",
            "mse",
            "coverage",
            "mse_ratio",
            "mse_se2",
            "mse_se2_ratio",
            "divergence_frac",
            "acceptance_out_of_range",
        ])?;
        for cell in &self.cells {
            for row in &cell.rows {
                let m = &row.metrics;
                out.write_record([
                    row.method.label().to_string(),
                    cell.cell.n.to_string(),
                    cell.cell.rho.map(|r| r.to_string()).unwrap_or_default(),
                    cell.cell.true_rd.to_string(),
                    fmt6(m.mean_bias),
                    fmt6(m.sd_bias),
                    fmt6(m.mse),
                    fmt6(m.coverage),
                    fmt6(row.mse_ratio),
                    fmt6(m.mse_se2),
                    fmt6(row.mse_se2_ratio),
                    fmt6(row.divergence_frac),
                    row.acceptance_out_of_range.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs the grid of `table` at `scale` and writes
/// `<out_dir>/table<t>_<scale>_seed<seed>.csv`.
pub fn replicate_table(table: u8, scale: Scale, seed: u64, out_dir: &Path, workers: Option<usize>) -> Result<PathBuf> {
    let mut config = StudyConfig::table(table, scale, seed)?;
    config.workers = workers;
    replicate_with(table, scale, &config, out_dir)
}

/// Like [`replicate_table`] with an explicit, possibly modified, config.
pub fn replicate_with(table: u8, scale: Scale, config: &StudyConfig, out_dir: &Path) -> Result<PathBuf> {
    let mut report = run_study(config)?;
    report.table = Some(table);
    report.scale = Some(scale);
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("table{table}_{scale}_seed{}.csv", config.base_seed));
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    fs::write(&path, buf)?;
    Ok(path)
}

/// Coverage of the Wald interval for a single estimate.
pub fn wald_covers(estimate: f64, se: f64, truth: f64) -> bool {
    ReplicateEstimate { estimate, se, divergence_frac: 0.0, acceptance: None }.covers(truth)
}
