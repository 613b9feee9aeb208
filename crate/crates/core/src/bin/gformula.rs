use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use gformula::config::{priors_from_kv, KeyValues, ModelFile};
use gformula::gformula::{
    bayesian_gformula, frequentist_gformula, quantile, sample_sd, BootstrapConfig, Standardization,
    StandardizeOptions,
};
use gformula::glm::fit_mle;
use gformula::harness::{replicate_with, Scale, StudyConfig};
use gformula::mcmc::{sample_chain, Posterior, SamplerConfig};
use gformula::model::{Prior, Regime};
use gformula::panel::Panel;
use gformula::simgen::{gen_structural_demo, gen_time_fixed, gen_time_varying, TimeFixedDGP, TimeVaryingDGP};

#[derive(Parser)]
#[command(name = "gformula", version, about = "Parametric g-formula, frequentist and Bayesian")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    TimeFixed,
    TimeVarying,
    /// Continuous outcome over three visits; arbitrary coefficients.
    Demo,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Standard,
    Bayes,
}

#[derive(Clone, Copy, ValueEnum)]
enum StandardizeArg {
    Auto,
    Exact,
    Mc,
}

#[derive(clap::Args)]
struct RunFlags {
    /// Run settings file (`key = value`); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset as panel CSV.
    Simulate {
        #[arg(long, value_enum)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        #[arg(long, default_value_t = 0.0)]
        rd: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit every model block by maximum likelihood and sample the posterior.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        priors: Option<PathBuf>,
        /// Parameter summary CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        draws_out: Option<PathBuf>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Estimate standardized means under two static regimes and their contrast.
    Effect {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(long, default_value = "always,never")]
        regime: String,
        #[arg(long, value_enum, default_value_t = MethodArg::Bayes)]
        method: MethodArg,
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long, value_enum)]
        standardize: Option<StandardizeArg>,
        #[arg(long)]
        n_pseudo: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Run a simulation table and write its report.
    Replicate {
        #[arg(long)]
        table: u8,
        #[arg(long, default_value = "desk")]
        scale: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        bootstrap: Option<usize>,
        #[command(flatten)]
        run: RunFlags,
    },
}

const RUN_KEYS: &[&str] = &[
    "seed",
    "iterations",
    "burn_in",
    "thin",
    "workers",
    "bootstrap",
    "replicates",
    "standardize",
    "n_pseudo",
    "prior_intercept",
    "prior_slope",
    "rho",
    "n",
    "true_rd",
];

/// Run settings: file values, then flag overrides.
struct Settings {
    kv: KeyValues,
}

impl Settings {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let kv = match path {
            Some(p) => KeyValues::read(p).with_context(|| format!("reading {}", p.display()))?,
            None => KeyValues::default(),
        };
        kv.check_keys(|k| RUN_KEYS.contains(&k))?;
        Ok(Settings { kv })
    }

    fn value<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        Ok(match flag {
            Some(v) => Some(v),
            None => self.kv.parse_value(key)?,
        })
    }

    fn sampler(&self, run: &RunFlags) -> anyhow::Result<SamplerConfig> {
        let d = SamplerConfig::default();
        Ok(SamplerConfig {
            iterations: self.value(run.iterations, "iterations")?.unwrap_or(d.iterations),
            burn_in: self.value(run.burn_in, "burn_in")?.unwrap_or(d.burn_in),
            thin: self.value(run.thin, "thin")?.unwrap_or(d.thin),
            seed: self.value(run.seed, "seed")?.unwrap_or(1),
            ..d
        })
    }

    fn floats(&self, key: &str) -> anyhow::Result<Option<Vec<f64>>> {
        self.kv
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().parse::<f64>().with_context(|| format!("key `{key}`: bad number `{s}`")))
                    .collect()
            })
            .transpose()
    }
}

fn install_pool(workers: Option<usize>) -> anyhow::Result<()> {
    if let Some(w) = workers {
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global()?;
    }
    Ok(())
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_data(data: &Path, model: &ModelFile) -> anyhow::Result<Panel> {
    let file = File::open(data).with_context(|| format!("opening {}", data.display()))?;
    let panel = Panel::read_csv(file, model.outcome_kind, &model.real_columns)?;
    panel.ensure_valid()?;
    Ok(panel)
}

fn load_priors(path: Option<&Path>, model: &ModelFile) -> anyhow::Result<gformula::PriorSpec> {
    let kv = match path {
        Some(p) => KeyValues::read(p).with_context(|| format!("reading {}", p.display()))?,
        None => KeyValues::default(),
    };
    Ok(priors_from_kv(&kv, &model.spec)?)
}

fn simulate(scenario: ScenarioArg, n: usize, rho: f64, rd: f64, seed: u64, out: &Path) -> anyhow::Result<()> {
    let panel = match scenario {
        ScenarioArg::TimeFixed => gen_time_fixed(&TimeFixedDGP { n, rho, true_rd: rd }, seed)?.panel,
        ScenarioArg::TimeVarying => gen_time_varying(&TimeVaryingDGP { n, true_rd: rd }, seed)?.panel,
        ScenarioArg::Demo => gen_structural_demo(n, seed)?,
    };
    let mut w = output(Some(out))?;
    writeln!(w, "# gformula simulate version={}", env!("CARGO_PKG_VERSION"))?;
    match scenario {
        ScenarioArg::TimeFixed => writeln!(w, "# scenario=time_fixed n={n} rho={rho} true_rd={rd} seed={seed}")?,
        ScenarioArg::TimeVarying => writeln!(w, "# scenario=time_varying n={n} true_rd={rd} seed={seed}")?,
        ScenarioArg::Demo => writeln!(w, "# scenario=demo n={n} seed={seed} (synthetic, arbitrary coefficients)")?,
    }
    panel.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fit(
    data: &Path,
    model: &Path,
    priors: Option<&Path>,
    out: Option<&Path>,
    draws_out: Option<&Path>,
    run: &RunFlags,
) -> anyhow::Result<()> {
    let settings = Settings::load(run.config.as_deref())?;
    let sampler = settings.sampler(run)?;
    install_pool(settings.value(run.workers, "workers")?)?;
    let model = ModelFile::read(model)?;
    let panel = load_data(data, &model)?;
    let priors = load_priors(priors, &model)?;

    let mut mle = Vec::new();
    for block in model.spec.block_data(&panel)? {
        let f = fit_mle(&block.design, &block.response, block.family)?;
        if !f.converged || f.divergence_flag {
            eprintln!("warning: block `{}` MLE converged={} diverged={}", block.name, f.converged, f.divergence_flag);
        }
        mle.extend_from_slice(&f.coefficients);
        if let Some(s) = f.sigma {
            mle.push(s.ln());
        }
    }
    let posterior = Posterior::new(&model.spec, &priors, &panel)?;
    let chain = sample_chain(&sampler, &posterior)?;
    for (name, rate) in model.spec.blocks().map(|b| &b.response).zip(&chain.acceptance_rate) {
        eprintln!("acceptance rate `{name}`: {rate:.3}");
    }

    let mut w = output(out)?;
    writeln!(w, "# gformula fit version={}", env!("CARGO_PKG_VERSION"))?;
    writeln!(
        w,
        "# seed={} iterations={} burn_in={} thin={}",
        sampler.seed, sampler.iterations, sampler.burn_in, sampler.thin
    )?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["param", "mle", "post_mean", "post_sd", "q2.5", "q97.5"])?;
    for (j, name) in chain.param_names.iter().enumerate() {
        let col = chain.column(j);
        csv.write_record([
            name.clone(),
            mle[j].to_string(),
            gformula::gformula::mean(&col).to_string(),
            sample_sd(&col).to_string(),
            quantile(&col, 0.025).to_string(),
            quantile(&col, 0.975).to_string(),
        ])?;
    }
    csv.flush()?;
    if let Some(p) = draws_out {
        chain.write_csv(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))?;
    }
    Ok(())
}

fn parse_regimes(s: &str) -> anyhow::Result<(Regime, Regime)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        bail!("--regime takes two comma-separated regimes, got `{s}`");
    }
    Ok((Regime::parse(parts[0])?, Regime::parse(parts[1])?))
}

#[allow(clippy::too_many_arguments)]
fn effect(
    data: &Path,
    model: &Path,
    priors: Option<&Path>,
    regime: &str,
    method: MethodArg,
    bootstrap: Option<usize>,
    standardize: Option<StandardizeArg>,
    n_pseudo: Option<usize>,
    out: Option<&Path>,
    run: &RunFlags,
) -> anyhow::Result<()> {
    let settings = Settings::load(run.config.as_deref())?;
    install_pool(settings.value(run.workers, "workers")?)?;
    let regimes = parse_regimes(regime)?;
    let model = ModelFile::read(model)?;
    let panel = load_data(data, &model)?;
    let horizon = model.horizon.unwrap_or(panel.horizon());

    let mut st = StandardizeOptions::default();
    let method_text = match standardize {
        Some(s) => Some(s),
        None => match settings.kv.get("standardize") {
            Some("auto") | None => None,
            Some("exact") => Some(StandardizeArg::Exact),
            Some("mc") => Some(StandardizeArg::Mc),
            Some(other) => bail!("unknown standardization `{other}`"),
        },
    };
    st.method = match method_text {
        None | Some(StandardizeArg::Auto) => Standardization::Auto,
        Some(StandardizeArg::Exact) => Standardization::Exact,
        Some(StandardizeArg::Mc) => Standardization::MonteCarlo,
    };
    if let Some(n) = settings.value(n_pseudo, "n_pseudo")? {
        st.n_pseudo = n;
    }

    let seed = settings.value(run.seed, "seed")?.unwrap_or(1);
    let result = match method {
        MethodArg::Standard => {
            let resamples = settings.value(bootstrap, "bootstrap")?.unwrap_or(1000);
            frequentist_gformula(&panel, &model.spec, regimes, horizon, &BootstrapConfig { resamples, seed, standardize: st })?
        }
        MethodArg::Bayes => {
            let priors = load_priors(priors, &model)?;
            let sampler = settings.sampler(run)?;
            bayesian_gformula(&panel, &model.spec, &priors, regimes, horizon, &sampler, &st)?
        }
    };
    if result.divergence_count > 0 {
        eprintln!("warning: {} of {} bootstrap refits hit the coefficient bound", result.divergence_count, result.usable);
    }
    let mut w = output(out)?;
    writeln!(w, "# gformula effect version={}", env!("CARGO_PKG_VERSION"))?;
    writeln!(w, "# method={} seed={seed} horizon={horizon} usable={}", result.estimator.label(), result.usable)?;
    if let Some(a) = &result.acceptance_rate {
        let rates: Vec<String> = a.iter().map(|r| format!("{r:.3}")).collect();
        writeln!(w, "# acceptance={}", rates.join(","))?;
    }
    result.write_report(&mut w)?;
    w.flush()?;
    Ok(())
}

fn replicate(
    table: u8,
    scale: &str,
    out: &Path,
    replicates: Option<usize>,
    bootstrap: Option<usize>,
    run: &RunFlags,
) -> anyhow::Result<()> {
    let settings = Settings::load(run.config.as_deref())?;
    let scale = Scale::parse(scale)?;
    let seed = settings.value(run.seed, "seed")?.unwrap_or(1);
    let mut config = StudyConfig::table(table, scale, seed)?;
    if let Some(v) = settings.value(replicates, "replicates")? {
        config.replicates = v;
    }
    if let Some(v) = settings.value(bootstrap, "bootstrap")? {
        config.bootstrap = v;
    }
    if let Some(v) = settings.value(run.iterations, "iterations")? {
        config.iterations = v;
    }
    if let Some(v) = settings.value(run.burn_in, "burn_in")? {
        config.burn_in = v;
    }
    if let Some(v) = settings.value(run.thin, "thin")? {
        config.thin = v;
    }
    if let Some(v) = settings.kv.get("prior_intercept") {
        config.prior_intercept = Prior::parse(v)?;
    }
    if let Some(v) = settings.kv.get("prior_slope") {
        config.prior_slope = Prior::parse(v)?;
    }
    // Optional grid filters.
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    if let Some(rhos) = settings.floats("rho")? {
        config.cells.retain(|c| c.rho.is_some_and(|r| rhos.iter().any(|&v| close(v, r))));
    }
    if let Some(ns) = settings.floats("n")? {
        config.cells.retain(|c| ns.iter().any(|&v| close(v, c.n as f64)));
    }
    if let Some(rds) = settings.floats("true_rd")? {
        config.cells.retain(|c| rds.iter().any(|&v| close(v, c.true_rd)));
    }
    config.workers = settings.value(run.workers, "workers")?;
    fs::create_dir_all(out)?;
    let started = std::time::Instant::now();
    let path = replicate_with(table, scale, &config, out)?;
    eprintln!("wrote {} in {:.1}s", path.display(), started.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { scenario, n, rho, rd, seed, out } => simulate(scenario, n, rho, rd, seed, &out),
        Command::Fit { data, model, priors, out, draws_out, run } => {
            fit(&data, &model, priors.as_deref(), out.as_deref(), draws_out.as_deref(), &run)
        }
        Command::Effect { data, model, priors, regime, method, bootstrap, standardize, n_pseudo, out, run } => effect(
            &data,
            &model,
            priors.as_deref(),
            &regime,
            method,
            bootstrap,
            standardize,
            n_pseudo,
            out.as_deref(),
            &run,
        ),
        Command::Replicate { table, scale, out, replicates, bootstrap, run } => {
            replicate(table, &scale, &out, replicates, bootstrap, &run)
        }
    }
}
