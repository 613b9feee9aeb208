//! Shared oracles and check routines for the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use gformula::gformula::{standardize_exact, Standardizer};
use gformula::glm::{expit, fit_mle, loglik_bernoulli, loglik_gaussian, score_bernoulli, score_gaussian};
use gformula::mcmc::{sample_chain, Posterior, SamplerConfig};
use gformula::model::{BlockPrior, Family, ModelSpec, Prior, PriorSpec, Regime};
use gformula::panel::{ColumnKind, Panel, PanelBuilder};
use gformula::terms::{DesignMatrix, TermList};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one numerical check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), passed, detail: detail.into() }
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

pub fn describe(checks: &[Check]) -> String {
    checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Monte Carlo standard error of the mean of a correlated sequence by
/// non-overlapping batch means.
pub fn batch_means_se(v: &[f64], batches: usize) -> f64 {
    let size = v.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&v[b * size..(b + 1) * size])).collect();
    sd(&means) / (batches as f64).sqrt()
}

/// Effective sample size implied by the batch-means standard error.
pub fn ess(v: &[f64]) -> f64 {
    let se = batch_means_se(v, 50);
    (sd(v) / se).powi(2)
}

fn random_design(r: &mut ChaCha8Rng, n: usize, p: usize) -> DesignMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut row = vec![1.0];
            row.extend((1..p).map(|_| r.random_range(-1.5..1.5)));
            row
        })
        .collect();
    DesignMatrix::from_rows(&rows).unwrap()
}

/// Analytic scores against central differences (step 1e-6) at 20 random
/// points per family. Error is `|analytic − numeric| / max(|numeric|, 1)`.
pub fn gradient_checks() -> Vec<Check> {
    let h = 1e-6;
    let mut r = rng(20);
    let mut worst_b: f64 = 0.0;
    let mut worst_g: f64 = 0.0;
    for _ in 0..20 {
        let x = random_design(&mut r, 40, 4);
        let y: Vec<f64> = (0..40).map(|_| (r.random::<f64>() < 0.4) as u8 as f64).collect();
        let beta: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
        let g = score_bernoulli(&beta, &x, &y).unwrap();
        for j in 0..4 {
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (loglik_bernoulli(&up, &x, &y).unwrap() - loglik_bernoulli(&dn, &x, &y).unwrap()) / (2.0 * h);
            worst_b = worst_b.max((g[j] - fd).abs() / fd.abs().max(1.0));
        }

        let yg: Vec<f64> = (0..40).map(|_| r.random_range(-3.0..3.0)).collect();
        let sigma = r.random_range(0.5..2.5);
        let g = score_gaussian(&beta, sigma, &x, &yg).unwrap();
        let ll = |b: &[f64], s: f64| loglik_gaussian(b, s, &x, &yg).unwrap();
        for j in 0..5 {
            let fd = if j < 4 {
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up[j] += h;
                dn[j] -= h;
                (ll(&up, sigma) - ll(&dn, sigma)) / (2.0 * h)
            } else {
                (ll(&beta, sigma + h) - ll(&beta, sigma - h)) / (2.0 * h)
            };
            worst_g = worst_g.max((g[j] - fd).abs() / fd.abs().max(1.0));
        }
    }
    vec![
        Check::new("bernoulli score", worst_b <= 1e-5, format!("max relative error {worst_b:.2e}")),
        Check::new("gaussian score", worst_g <= 1e-5, format!("max relative error {worst_g:.2e}")),
    ]
}

/// Random all-binary panel with `k` follow-up times and `c` covariates.
/// Subjects leave after an event.
pub fn random_binary_panel(r: &mut ChaCha8Rng, n: usize, k: usize, c: usize) -> Panel {
    let names: Vec<(String, ColumnKind)> = (0..c).map(|j| (format!("l{}", j + 1), ColumnKind::Binary)).collect();
    let mut b = PanelBuilder::new(ColumnKind::Binary, names);
    for i in 0..n {
        for t in 0..=k {
            let covs: Vec<f64> = (0..c).map(|_| (r.random::<f64>() < 0.5) as u8 as f64).collect();
            let x = (r.random::<f64>() < 0.5) as u8 as f64;
            let y = if t >= 1 && r.random::<f64>() < 0.2 { 1.0 } else { 0.0 };
            b.push(format!("s{i}"), t, y, x, &covs);
            if y == 1.0 {
                break;
            }
        }
    }
    b.build().unwrap()
}

/// Pooled-logistic models for up to two binary covariates and the outcome.
pub fn random_spec(r: &mut ChaCha8Rng, c: usize) -> ModelSpec {
    let mut outcome = "1 + t + x + cumlag(x)".to_string();
    for j in 1..=c {
        outcome.push_str(&format!(" + l{j} + cumlag(l{j})"));
    }
    let mut spec = ModelSpec::new(TermList::parse(&outcome).unwrap(), Family::BernoulliLogit);
    for j in 1..=c {
        let mut f = format!("1 + t + cumlag(x) + cumlag(l{j})");
        for earlier in 1..j {
            f.push_str(&format!(" + l{earlier}"));
        }
        spec = spec.with_covariate(&format!("l{j}"), TermList::parse(&f).unwrap(), Family::BernoulliLogit);
    }
    let theta: Vec<f64> = (0..spec.n_params()).map(|_| r.random_range(-1.5..1.5)).collect();
    spec.with_parameters(&theta).unwrap()
}

/// Monte Carlo standardization against exact enumeration on 50 random
/// instances (up to two covariates, up to three times, both regimes), each
/// within four binomial standard errors.
pub fn mc_vs_exact_checks(n_pseudo: usize) -> Check {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for inst in 0..50u64 {
        let c = 1 + (inst % 2) as usize;
        let k = 1 + (inst % 3) as usize;
        let panel = random_binary_panel(&mut r, 12, k, c);
        let spec = random_spec(&mut r, c);
        let st = Standardizer::new(&spec, &panel, k).unwrap();
        for regime in [Regime::ALWAYS, Regime::NEVER] {
            let exact = st.exact(&spec, regime).unwrap();
            let mut mr = rng(1000 + inst);
            let mc = st.monte_carlo(&spec, regime, n_pseudo, &mut mr).unwrap();
            for (e, m) in exact.iter().zip(&mc) {
                let se = (e * (1.0 - e) / n_pseudo as f64).sqrt().max(1e-12);
                worst = worst.max((e - m).abs() / se);
                compared += 1;
            }
        }
    }
    Check::new(
        "monte carlo vs exact",
        worst <= 4.0,
        format!("{compared} comparisons, largest deviation {worst:.2} binomial SE"),
    )
}

/// Small time-fixed table with every (x, l) cell populated and a
/// non-degenerate outcome in each.
pub fn saturated_panel() -> Panel {
    // (x, l, events, total)
    let cells = [(0.0, 0.0, 3, 10), (0.0, 1.0, 2, 7), (1.0, 0.0, 4, 6), (1.0, 1.0, 6, 11)];
    let mut b = PanelBuilder::new(ColumnKind::Binary, vec![("l".into(), ColumnKind::Binary)]);
    let mut id = 0;
    for (x, l, events, total) in cells {
        for k in 0..total {
            b.push(format!("{id}"), 0, (k < events) as u8 as f64, x, &[l]);
            id += 1;
        }
    }
    b.build().unwrap()
}

/// Fitted saturated model standardized exactly, against the law of total
/// probability computed from raw counts.
pub fn saturated_identity_check() -> Check {
    let panel = saturated_panel();
    let spec = ModelSpec::new(TermList::parse("1 + x + l + x*l").unwrap(), Family::BernoulliLogit);
    let data = spec.block_data(&panel).unwrap();
    let fit = fit_mle(&data[0].design, &data[0].response, Family::BernoulliLogit).unwrap();
    let fitted = spec.with_parameters(&fit.coefficients).unwrap();

    let y = panel.outcome().values();
    let x = panel.exposure().values();
    let l = panel.covariates()[0].values();
    let n = y.len() as f64;
    let mut worst: f64 = 0.0;
    for (regime, a) in [(Regime::ALWAYS, 1.0), (Regime::NEVER, 0.0)] {
        let mut oracle = 0.0;
        for lv in [0.0, 1.0] {
            let p_l = l.iter().filter(|&&v| v == lv).count() as f64 / n;
            let idx: Vec<usize> = (0..y.len()).filter(|&i| x[i] == a && l[i] == lv).collect();
            let cell_mean = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
            oracle += p_l * cell_mean;
        }
        let got = standardize_exact(&fitted, &panel, regime, 0).unwrap()[0];
        worst = worst.max((got - oracle).abs());
    }
    Check::new("saturated identity", worst <= 1e-8, format!("max difference {worst:.2e}"))
}

/// Two-period structure with known coefficients: enumeration over the two
/// values of the intermediate confounder done by hand.
pub fn two_branch_check() -> Check {
    let spec = ModelSpec::new(TermList::parse("1 + cumlag(x) + x + l").unwrap(), Family::BernoulliLogit)
        .with_covariate("l", TermList::parse("1 + cumlag(x)").unwrap(), Family::BernoulliLogit);
    let (b0, b1, b2, b3) = (-0.4, 0.3, 0.5, 0.8);
    let (e0, e1) = (-1.0, 1.0);
    let spec = spec.with_parameters(&[b0, b1, b2, b3, e0, e1]).unwrap();
    let sim = gformula::simgen::gen_time_varying(&gformula::simgen::TimeVaryingDGP { n: 15, true_rd: 0.1 }, 5).unwrap();
    let mut worst: f64 = 0.0;
    for (regime, a) in [(Regime::ALWAYS, 1.0), (Regime::NEVER, 0.0)] {
        let p1 = 1.0 / (1.0 + (-(e0 + e1 * a)).exp());
        let y = |l: f64| 1.0 / (1.0 + (-(b0 + b1 * a + b2 * a + b3 * l)).exp());
        let hand = p1 * y(1.0) + (1.0 - p1) * y(0.0);
        let got = standardize_exact(&spec, &sim.panel, regime, 1).unwrap();
        worst = worst.max((got[0] - hand).abs());
    }
    Check::new("two-branch enumeration", worst <= 1e-10, format!("max difference {worst:.2e}"))
}

pub fn oracle_checks() -> Vec<Check> {
    vec![mc_vs_exact_checks(100_000), saturated_identity_check(), two_branch_check()]
}

fn gaussian_intercept_panel(y: &[f64]) -> Panel {
    let mut b = PanelBuilder::new(ColumnKind::Real, vec![]);
    for (i, v) in y.iter().enumerate() {
        b.push(format!("{i}"), 0, *v, 0.0, &[]);
    }
    b.build().unwrap()
}

/// Gaussian outcome with known scale and a Normal prior on the mean: chain
/// mean and SD against the conjugate closed form.
pub fn conjugate_check() -> Vec<Check> {
    let mut r = rng(55);
    let y: Vec<f64> = (0..25).map(|_| 1.3 + r.random_range(-2.0..2.0)).collect();
    let n = y.len() as f64;
    let ybar = mean(&y);
    // The scale is pinned at its maximum-likelihood value by a very tight prior
    // on log σ, so the chain starts there and the mean is conjugate.
    let sigma0 = (y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / n).sqrt();
    let (m0, v0) = (0.0, 0.5);
    let spec = ModelSpec::new(TermList::intercept_only(), Family::GaussianIdentity);
    let priors = PriorSpec {
        blocks: vec![BlockPrior {
            coefficients: vec![Prior::Normal { mean: m0, variance: v0 }],
            log_scale: Prior::Normal { mean: sigma0.ln(), variance: 1e-14 },
        }],
    };
    let panel = gaussian_intercept_panel(&y);
    let post = Posterior::new(&spec, &priors, &panel).unwrap();
    let cfg = SamplerConfig { iterations: 40_000, burn_in: 2_000, seed: 11, ..Default::default() };
    let chain = sample_chain(&cfg, &post).unwrap();
    let mu = chain.column(0);

    let prec = n / (sigma0 * sigma0) + 1.0 / v0;
    let post_mean = (ybar * n / (sigma0 * sigma0) + m0 / v0) / prec;
    let post_sd = prec.sqrt().recip();

    let se_mean = batch_means_se(&mu, 50);
    let se_sd = post_sd / (2.0 * ess(&mu)).sqrt();
    let dm = (mean(&mu) - post_mean).abs();
    let ds = (sd(&mu) - post_sd).abs();
    vec![
        Check::new(
            "conjugate mean",
            dm <= 3.0 * se_mean,
            format!("chain {:.5} vs {:.5} (|diff| {:.2} MC SE)", mean(&mu), post_mean, dm / se_mean),
        ),
        Check::new(
            "conjugate sd",
            ds <= 3.0 * se_sd,
            format!("chain {:.5} vs {:.5} (|diff| {:.2} MC SE)", sd(&mu), post_sd, ds / se_sd),
        ),
    ]
}

/// Data for the two-coefficient logistic calibration check.
pub fn logistic_calibration_data() -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(77);
    let x: Vec<f64> = (0..40).map(|_| r.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|xi| (r.random::<f64>() < expit(-0.3 + 1.2 * xi)) as u8 as f64).collect();
    (x, y)
}

/// Marginal quantiles of a two-parameter log density by integration on a
/// fine grid. Returns `(quantile, density at quantile)` per requested level
/// for each coordinate.
pub fn grid_quantiles(
    logpost: impl Fn(f64, f64) -> f64,
    center: (f64, f64),
    half_width: (f64, f64),
    levels: &[f64],
) -> [Vec<(f64, f64)>; 2] {
    let m = 801;
    let ga: Vec<f64> = (0..m).map(|i| center.0 - half_width.0 + 2.0 * half_width.0 * i as f64 / (m - 1) as f64).collect();
    let gb: Vec<f64> = (0..m).map(|i| center.1 - half_width.1 + 2.0 * half_width.1 * i as f64 / (m - 1) as f64).collect();
    let mut lp = vec![0.0; m * m];
    let mut top = f64::NEG_INFINITY;
    for (i, a) in ga.iter().enumerate() {
        for (j, b) in gb.iter().enumerate() {
            lp[i * m + j] = logpost(*a, *b);
            top = top.max(lp[i * m + j]);
        }
    }
    let mut marg_a = vec![0.0; m];
    let mut marg_b = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            let w = (lp[i * m + j] - top).exp();
            marg_a[i] += w;
            marg_b[j] += w;
        }
    }
    let q = |grid: &[f64], dens: &[f64]| -> Vec<(f64, f64)> {
        let step = grid[1] - grid[0];
        // Trapezoid CDF on the grid.
        let mut cdf = vec![0.0; m];
        for k in 1..m {
            cdf[k] = cdf[k - 1] + 0.5 * (dens[k] + dens[k - 1]) * step;
        }
        let total = cdf[m - 1];
        levels
            .iter()
            .map(|&p| {
                let target = p * total;
                let k = cdf.iter().position(|&c| c >= target).unwrap().max(1);
                let frac = (target - cdf[k - 1]) / (cdf[k] - cdf[k - 1]);
                let xq = grid[k - 1] + frac * step;
                let fq = (dens[k - 1] + frac * (dens[k] - dens[k - 1])) / total;
                (xq, fq)
            })
            .collect()
    };
    [q(&ga, &marg_a), q(&gb, &marg_b)]
}

fn sample_quantile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Chain quantiles of a two-coefficient logistic posterior with `N(0, 3)`
/// priors against grid integration.
pub fn logistic_grid_check() -> Vec<Check> {
    let (xs, ys) = logistic_calibration_data();
    let mut b = PanelBuilder::new(ColumnKind::Binary, vec![("z".into(), ColumnKind::Real)]);
    for (i, (x, y)) in xs.iter().zip(&ys).enumerate() {
        b.push(format!("{i}"), 0, *y, 0.0, &[*x]);
    }
    let panel = b.build().unwrap();
    let spec = ModelSpec::new(TermList::parse("1 + z").unwrap(), Family::BernoulliLogit);
    let prior = Prior::Normal { mean: 0.0, variance: 3.0 };
    let priors = PriorSpec::uniform(&spec, prior, prior);
    let post = Posterior::new(&spec, &priors, &panel).unwrap();
    let cfg = SamplerConfig { iterations: 60_000, burn_in: 2_000, seed: 3, ..Default::default() };
    let chain = sample_chain(&cfg, &post).unwrap();

    let logpost = |a: f64, bb: f64| {
        let mut s = -(a * a + bb * bb) / (2.0 * 3.0);
        for (x, y) in xs.iter().zip(&ys) {
            let p = 1.0 / (1.0 + (-(a + bb * x)).exp());
            s += if *y == 1.0 { p.ln() } else { (1.0 - p).ln() };
        }
        s
    };
    let c0 = chain.column(0);
    let c1 = chain.column(1);
    let levels = [0.025, 0.1, 0.5, 0.9, 0.975];
    let grid = grid_quantiles(logpost, (mean(&c0), mean(&c1)), (8.0 * sd(&c0), 8.0 * sd(&c1)), &levels);
    let mut checks = Vec::new();
    for (k, col) in [c0, c1].iter().enumerate() {
        let n_eff = ess(col);
        for (li, &p) in levels.iter().enumerate() {
            let (xq, fq) = grid[k][li];
            let got = sample_quantile(col, p);
            let se = (p * (1.0 - p) / n_eff).sqrt() / fq;
            let dev = (got - xq).abs() / se;
            checks.push(Check::new(
                format!("coefficient {k} quantile {p}"),
                dev <= 3.0,
                format!("chain {got:.4} vs grid {xq:.4} ({dev:.2} MC SE)"),
            ));
        }
    }
    checks
}

pub fn calibration_checks() -> Vec<Check> {
    let mut v = conjugate_check();
    v.extend(logistic_grid_check());
    v
}

/// Panel with a binary and a real covariate over one follow-up period.
pub fn factorization_panel() -> Panel {
    let mut r = rng(66);
    let mut b = PanelBuilder::new(
        ColumnKind::Binary,
        vec![("l".into(), ColumnKind::Binary), ("w".into(), ColumnKind::Real)],
    );
    for i in 0..30 {
        let x0 = (r.random::<f64>() < 0.5) as u8 as f64;
        b.push(format!("{i}"), 0, 0.0, x0, &[0.0, 0.0]);
        let l1 = (r.random::<f64>() < 0.4 + 0.2 * x0) as u8 as f64;
        let w1 = r.random_range(-1.0..1.0) + 0.5 * l1;
        let x1 = (r.random::<f64>() < 0.5) as u8 as f64;
        let y = (r.random::<f64>() < 0.3 + 0.2 * x1) as u8 as f64;
        b.push(format!("{i}"), 1, y, x1, &[l1, w1]);
    }
    b.build().unwrap()
}

pub fn factorization_spec() -> ModelSpec {
    ModelSpec::new(TermList::parse("1 + cumlag(x) + x + l + w").unwrap(), Family::BernoulliLogit)
        .with_covariate("l", TermList::parse("1 + cumlag(x)").unwrap(), Family::BernoulliLogit)
        .with_covariate("w", TermList::parse("1 + cumlag(x) + l").unwrap(), Family::GaussianIdentity)
}

/// Joint log-posterior against per-block likelihoods and priors summed by a
/// naive oracle with hand-built design rows, at 100 random points.
pub fn factorization_check() -> Check {
    let panel = factorization_panel();
    let spec = factorization_spec();
    let mut priors = PriorSpec::uniform(
        &spec,
        Prior::Normal { mean: 0.5f64.ln(), variance: 1000.0 },
        Prior::DoubleExponential { mean: 0.0, rate: 1.5 },
    );
    priors.blocks[1].coefficients[1] = Prior::Flat;
    priors.blocks[2].log_scale = Prior::Normal { mean: 0.0, variance: 2.0 };
    let post = Posterior::new(&spec, &priors, &panel).unwrap();

    // Rows at t = 1: outcome [1, x0, x1, l1, w1], l [1, x0], w [1, x0, l1].
    let mut rows = Vec::new();
    for s in 0..panel.n_subjects() {
        let r0 = panel.row_at(s, 0).unwrap();
        let r1 = panel.row_at(s, 1).unwrap();
        let x0 = panel.exposure().values()[r0];
        let x1 = panel.exposure().values()[r1];
        let l1 = panel.covariates()[0].values()[r1];
        let w1 = panel.covariates()[1].values()[r1];
        let y = panel.outcome().values()[r1];
        rows.push((x0, x1, l1, w1, y));
    }
    let normal = |v: f64, m: f64, var: f64| -0.5 * (2.0 * PI * var).ln() - (v - m).powi(2) / (2.0 * var);
    let laplace = |v: f64, m: f64, rate: f64| (rate / 2.0).ln() - rate * (v - m).abs();
    let bern = |y: f64, z: f64| {
        let p = 1.0 / (1.0 + (-z).exp());
        if y == 1.0 {
            p.ln()
        } else {
            (1.0 - p).ln()
        }
    };

    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let th: Vec<f64> = (0..spec.n_params()).map(|_| r.random_range(-1.5..1.5)).collect();
        let joint = post.log_posterior(&th).unwrap();
        let (b, e, g) = (&th[0..5], &th[5..7], &th[7..11]);
        let sigma = g[3].exp();
        let mut oracle = 0.0;
        for &(x0, x1, l1, w1, y) in &rows {
            oracle += bern(y, b[0] + b[1] * x0 + b[2] * x1 + b[3] * l1 + b[4] * w1);
            oracle += bern(l1, e[0] + e[1] * x0);
            let mu = g[0] + g[1] * x0 + g[2] * l1;
            oracle += normal(w1, mu, sigma * sigma);
        }
        oracle += normal(b[0], 0.5f64.ln(), 1000.0) + (1..5).map(|j| laplace(b[j], 0.0, 1.5)).sum::<f64>();
        oracle += normal(e[0], 0.5f64.ln(), 1000.0);
        oracle += normal(g[0], 0.5f64.ln(), 1000.0) + laplace(g[1], 0.0, 1.5) + laplace(g[2], 0.0, 1.5);
        oracle += normal(g[3], 0.0, 2.0);
        worst = worst.max((joint - oracle).abs() / oracle.abs().max(1.0));
    }
    Check::new("factorization", worst <= 1e-12, format!("max relative difference {worst:.2e} over 100 points"))
}
