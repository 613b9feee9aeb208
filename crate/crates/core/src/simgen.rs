//! Data-generating processes for the two simulation scenarios, plus a small
//! structural demo with a continuous outcome.
//!
//! Every subject draws from its own child stream of the dataset seed, so a
//! subject's data do not depend on how many subjects precede it.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::glm::expit;
use crate::model::{Family, ModelSpec};
use crate::panel::{ColumnKind, Panel, PanelBuilder};
use crate::rng::StreamKey;
use crate::terms::TermList;

/// Cell proportions `(ν₁, ν₂, ν₃, ν₄)` of the X–L cross-tabulation giving
/// correlation `rho` with both margins equal to 0.5.
pub fn nu_from_rho(rho: f64) -> Result<[f64; 4]> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho must lie in [0, 1), got {rho}")));
    }
    let a = 0.25 + rho / 4.0;
    let b = 0.25 - rho / 4.0;
    Ok([a, b, b, a])
}

/// Phi coefficient of a 2×2 table with cell proportions `nu`.
pub fn rho_from_nu(nu: [f64; 4]) -> f64 {
    let [n1, n2, n3, n4] = nu;
    (n1 * n4 - n2 * n3) / ((n1 + n3) * (n2 + n4) * (n1 + n2) * (n3 + n4)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeFixedDGP {
    pub n: usize,
    pub rho: f64,
    pub true_rd: f64,
}

impl TimeFixedDGP {
    pub fn nu(&self) -> Result<[f64; 4]> {
        nu_from_rho(self.rho)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        self.nu()?;
        // P(Y=1) = 0.4 + U/10 + rd·X ranges over [0.4 + min(rd,0), 0.5 + max(rd,0)].
        if !(-0.4..=0.5).contains(&self.true_rd) {
            return Err(Error::InvalidArgument(format!(
                "risk difference {} makes outcome probabilities leave [0, 1]",
                self.true_rd
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeVaryingDGP {
    pub n: usize,
    pub true_rd: f64,
}

/// Generated panel with the unmeasured `U` kept apart from the analysis data.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub panel: Panel,
    pub hidden_u: Vec<f64>,
}

/// Time-fixed exposure `x`, confounder `l`, binary outcome; horizon 0.
pub fn gen_time_fixed(dgp: &TimeFixedDGP, seed: u64) -> Result<Simulated> {
    dgp.validate()?;
    let [n1, n2, n3, n4] = dgp.nu()?;
    let root = StreamKey::new(seed);
    let mut b = PanelBuilder::new(ColumnKind::Binary, vec![("l".into(), ColumnKind::Binary)]);
    let mut hidden = Vec::with_capacity(dgp.n);
    for i in 0..dgp.n {
        let mut rng = root.child(i as u64).rng();
        let u: f64 = rng.random();
        let l = u < n1 + n2;
        let px = if l { n1 + n4 } else { n2 + n3 };
        let x = rng.random::<f64>() < px;
        let py = 0.4 + u / 10.0 + dgp.true_rd * x as u8 as f64;
        if !(0.0..=1.0).contains(&py) {
            return Err(Error::InvalidArgument(format!("outcome probability {py} outside [0, 1]")));
        }
        let y = rng.random::<f64>() < py;
        b.push(format!("{}", i + 1), 0, y as u8 as f64, x as u8 as f64, &[l as u8 as f64]);
        hidden.push(u);
    }
    Ok(Simulated { panel: b.build()?, hidden_u: hidden })
}

/// Two-period data: `x(0)`, then `l(1)` affected by `x(0)`, then `x(1)`, and
/// the outcome measured once at time 1. Row 0 carries `y = 0`, `l = 0`.
pub fn gen_time_varying(dgp: &TimeVaryingDGP, seed: u64) -> Result<Simulated> {
    if dgp.n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    // P(Y=1) = U + rd·(x0+x1)/2 with U ≤ 0.5.
    if !(0.0..=0.5).contains(&dgp.true_rd) {
        return Err(Error::InvalidArgument(format!("risk difference {} must lie in [0, 0.5]", dgp.true_rd)));
    }
    let root = StreamKey::new(seed);
    let mut b = PanelBuilder::new(ColumnKind::Binary, vec![("l".into(), ColumnKind::Binary)]);
    let mut hidden = Vec::with_capacity(dgp.n);
    for i in 0..dgp.n {
        let mut rng = root.child(i as u64).rng();
        let u = 0.4 + 0.1 * rng.random::<f64>();
        let x0 = (rng.random::<f64>() < 0.5) as u8 as f64;
        let l1 = (rng.random::<f64>() < expit(-1.0 + x0 + u)) as u8 as f64;
        let x1 = (rng.random::<f64>() < expit(-1.0 + x0 + l1)) as u8 as f64;
        let y = (rng.random::<f64>() < u + dgp.true_rd * (x0 + x1) / 2.0) as u8 as f64;
        let id = format!("{}", i + 1);
        b.push(id.clone(), 0, 0.0, x0, &[0.0]);
        b.push(id, 1, y, x1, &[l1]);
        hidden.push(u);
    }
    Ok(Simulated { panel: b.build()?, hidden_u: hidden })
}

/// Logistic outcome model in `x` and `l`.
pub fn time_fixed_analysis_spec() -> ModelSpec {
    ModelSpec::new(TermList::parse("1 + x + l").expect("static formula"), Family::BernoulliLogit)
}

/// Correct covariate model for `l(1)` (logistic in `x(0)`) and a logistic
/// outcome model in `x(0)`, `x(1)`, `l(1)`.
pub fn time_varying_analysis_spec() -> ModelSpec {
    ModelSpec::new(TermList::parse("1 + cumlag(x) + x + l").expect("static formula"), Family::BernoulliLogit)
        .with_covariate("l", TermList::parse("1 + cumlag(x)").expect("static formula"), Family::BernoulliLogit)
}

/// Synthetic cohort with a continuous outcome over three follow-up visits:
/// baseline `age` (real) and `smoke_preg` (binary), time-varying physical
/// activity `pa`, and exposure `x`. Coefficients are arbitrary; the data only
/// exercise a pooled-logistic covariate model and a pooled-linear outcome.
pub fn gen_structural_demo(n: usize, seed: u64) -> Result<Panel> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let root = StreamKey::new(seed);
    let mut b = PanelBuilder::new(
        ColumnKind::Real,
        vec![
            ("age".into(), ColumnKind::Real),
            ("smoke_preg".into(), ColumnKind::Binary),
            ("pa".into(), ColumnKind::Binary),
        ],
    );
    for i in 0..n {
        let mut rng = root.child(i as u64).rng();
        let age: f64 = rng.sample(StandardNormal);
        let smoke = (rng.random::<f64>() < 0.2) as u8 as f64;
        let id = format!("{}", i + 1);
        let mut cum_x = 0.0;
        let mut cum_pa = 0.0;
        let mut x = (rng.random::<f64>() < expit(-1.1 + 0.8 * smoke)) as u8 as f64;
        let mut pa = (rng.random::<f64>() < 0.5) as u8 as f64;
        b.push(id.clone(), 0, 0.0, x, &[age, smoke, pa]);
        for t in 1..=3usize {
            cum_x += x;
            cum_pa += pa;
            pa = (rng.random::<f64>() < expit(-0.2 + 0.5 * cum_pa - 0.3 * cum_x + 0.1 * age)) as u8 as f64;
            x = (rng.random::<f64>() < expit(-1.0 + 1.2 * x - 0.3 * pa + 0.5 * smoke)) as u8 as f64;
            let mean = 0.3 + 0.05 * t as f64 + 0.15 * x + 0.1 * (cum_x + x) - 0.2 * pa + 0.1 * age + 0.2 * smoke;
            let z: f64 = rng.sample(StandardNormal);
            b.push(id.clone(), t, mean + 0.9 * z, x, &[age, smoke, pa]);
        }
    }
    b.build()
}

/// Analysis model matching [`gen_structural_demo`]'s structure.
pub fn structural_demo_spec() -> ModelSpec {
    ModelSpec::new(
        TermList::parse("1 + t + x + cum(x) + pa + age + smoke_preg + sq(age)").expect("static formula"),
        Family::GaussianIdentity,
    )
    .with_covariate(
        "pa",
        TermList::parse("1 + t + cumlag(pa) + cumlag(x) + age + smoke_preg").expect("static formula"),
        Family::BernoulliLogit,
    )
}
