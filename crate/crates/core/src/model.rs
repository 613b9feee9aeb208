//! Model definitions, priors and static regimes.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::panel::{ColumnKind, Panel};
use crate::terms::{build_design, CompiledTerms, DesignMatrix, Role, TermList};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    BernoulliLogit,
    GaussianIdentity,
}

impl Family {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bernoulli" | "logit" | "binomial" | "logistic" => Ok(Family::BernoulliLogit),
            "gaussian" | "normal" | "linear" | "identity" => Ok(Family::GaussianIdentity),
            other => Err(Error::InvalidArgument(format!("unknown family `{other}`"))),
        }
    }

    pub fn column_kind(self) -> ColumnKind {
        match self {
            Family::BernoulliLogit => ColumnKind::Binary,
            Family::GaussianIdentity => ColumnKind::Real,
        }
    }
}

/// Static intervention: exposure fixed to `g` at every time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Regime(u8);

impl Regime {
    pub const ALWAYS: Regime = Regime(1);
    pub const NEVER: Regime = Regime(0);

    pub fn new(g: u8) -> Result<Self> {
        match g {
            0 | 1 => Ok(Regime(g)),
            _ => Err(Error::InvalidArgument(format!("regime value must be 0 or 1, got {g}"))),
        }
    }

    pub fn value(self) -> f64 {
        self.0 as f64
    }

    pub fn name(self) -> &'static str {
        if self.0 == 1 {
            "always"
        } else {
            "never"
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "always" | "1" => Ok(Regime::ALWAYS),
            "never" | "0" => Ok(Regime::NEVER),
            other => Err(Error::InvalidArgument(format!("unknown regime `{other}`"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One regression block: the outcome model or a covariate model.
#[derive(Debug, Clone, PartialEq)]
pub struct SubModel {
    /// `y` for the outcome, otherwise the covariate column being modelled.
    pub response: String,
    pub terms: TermList,
    pub family: Family,
    pub coefficients: Vec<f64>,
    /// Residual SD for the Gaussian family.
    pub sigma: Option<f64>,
}

impl SubModel {
    pub fn new(response: &str, terms: TermList, family: Family) -> Self {
        let p = terms.len();
        SubModel {
            response: response.to_string(),
            terms,
            family,
            coefficients: vec![0.0; p],
            sigma: (family == Family::GaussianIdentity).then_some(1.0),
        }
    }

    /// Coefficients followed by `log σ` for Gaussian blocks.
    pub fn n_params(&self) -> usize {
        self.terms.len() + usize::from(self.family == Family::GaussianIdentity)
    }

    fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.terms.names().into_iter().map(|t| format!("{}:{t}", self.response)).collect();
        if self.family == Family::GaussianIdentity {
            names.push(format!("{}:log_sigma", self.response));
        }
        names
    }
}

/// Exposure model carried for completeness; static regimes never fit it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureModel {
    pub terms: TermList,
    pub coefficients: Vec<f64>,
    pub fitted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub outcome: SubModel,
    /// In simulation order; each may use covariates modelled before it.
    pub covariates: Vec<SubModel>,
    pub exposure: Option<ExposureModel>,
}

impl ModelSpec {
    pub fn new(outcome_terms: TermList, family: Family) -> Self {
        ModelSpec { outcome: SubModel::new("y", outcome_terms, family), covariates: Vec::new(), exposure: None }
    }

    pub fn with_covariate(mut self, name: &str, terms: TermList, family: Family) -> Self {
        self.covariates.push(SubModel::new(name, terms, family));
        self
    }

    pub fn with_exposure_model(mut self, terms: TermList) -> Self {
        let p = terms.len();
        self.exposure = Some(ExposureModel { terms, coefficients: vec![0.0; p], fitted: false });
        self
    }

    /// Outcome block first, then covariate blocks in order.
    pub fn blocks(&self) -> impl Iterator<Item = &SubModel> {
        std::iter::once(&self.outcome).chain(self.covariates.iter())
    }

    fn blocks_mut(&mut self) -> impl Iterator<Item = &mut SubModel> {
        std::iter::once(&mut self.outcome).chain(self.covariates.iter_mut())
    }

    pub fn n_blocks(&self) -> usize {
        1 + self.covariates.len()
    }

    pub fn block_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.blocks()
            .map(|b| {
                let r = start..start + b.n_params();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.blocks().map(SubModel::n_params).sum()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.blocks().flat_map(SubModel::param_names).collect()
    }

    /// Current parameters in the sampler layout (`log σ` for Gaussian scales).
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for b in self.blocks() {
            out.extend_from_slice(&b.coefficients);
            if b.family == Family::GaussianIdentity {
                out.push(b.sigma.unwrap_or(1.0).ln());
            }
        }
        out
    }

    pub fn set_parameters(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::Dimension(format!("expected {} parameters, got {}", self.n_params(), theta.len())));
        }
        let mut pos = 0;
        for b in self.blocks_mut() {
            let p = b.terms.len();
            b.coefficients.copy_from_slice(&theta[pos..pos + p]);
            pos += p;
            if b.family == Family::GaussianIdentity {
                b.sigma = Some(theta[pos].exp());
                pos += 1;
            }
        }
        Ok(())
    }

    pub fn with_parameters(&self, theta: &[f64]) -> Result<ModelSpec> {
        let mut s = self.clone();
        s.set_parameters(theta)?;
        Ok(s)
    }

    /// Times at which the outcome model applies: 0 for time-fixed data,
    /// otherwise `1..=horizon` (time 0 is baseline).
    pub fn outcome_times(horizon: usize) -> Vec<usize> {
        if horizon == 0 {
            vec![0]
        } else {
            (1..=horizon).collect()
        }
    }

    /// Times at which covariate models apply; baseline covariates come from data.
    pub fn covariate_times(horizon: usize) -> Vec<usize> {
        (1..=horizon).collect()
    }

    /// Resolves every block against the panel's columns.
    pub fn compile(&self, panel: &Panel) -> Result<CompiledSpec> {
        let covs = panel.covariates();
        let outcome = CompiledTerms::compile(&self.outcome.terms, covs, &Role::Outcome)?;
        let mut targets = Vec::with_capacity(self.covariates.len());
        for m in &self.covariates {
            let idx = panel.covariate_index(&m.response).ok_or_else(|| Error::UnknownColumn(m.response.clone()))?;
            if targets.contains(&idx) {
                return Err(Error::InvalidArgument(format!("covariate `{}` modelled twice", m.response)));
            }
            targets.push(idx);
        }
        let mut covariates = Vec::with_capacity(self.covariates.len());
        for (pos, m) in self.covariates.iter().enumerate() {
            let role = self.covariate_role(pos, &targets);
            covariates.push((targets[pos], CompiledTerms::compile(&m.terms, covs, &role)?));
        }
        Ok(CompiledSpec { outcome, covariates })
    }

    fn covariate_role(&self, pos: usize, targets: &[usize]) -> Role {
        Role::Covariate { target: targets[pos], pending: targets[pos..].to_vec() }
    }

    /// Stacked (pooled over time) design and response for every block.
    pub fn block_data(&self, panel: &Panel) -> Result<Vec<BlockData>> {
        let horizon = panel.horizon();
        let compiled = self.compile(panel)?;
        let mut out = Vec::with_capacity(self.n_blocks());
        out.push(self.stack(panel, &self.outcome, &Role::Outcome, &Self::outcome_times(horizon), None)?);
        let targets: Vec<usize> = compiled.covariates.iter().map(|(i, _)| *i).collect();
        for (pos, m) in self.covariates.iter().enumerate() {
            let role = self.covariate_role(pos, &targets);
            out.push(self.stack(panel, m, &role, &Self::covariate_times(horizon), Some(targets[pos]))?);
        }
        Ok(out)
    }

    fn stack(
        &self,
        panel: &Panel,
        model: &SubModel,
        role: &Role,
        times: &[usize],
        covariate: Option<usize>,
    ) -> Result<BlockData> {
        let mut parts = Vec::with_capacity(times.len());
        let mut response = Vec::new();
        for &t in times {
            let (m, subjects) = build_design(panel, &model.terms, role, t, None)?;
            for &s in &subjects {
                let row = panel.row_at(s, t).expect("at-risk subject has a row");
                response.push(match covariate {
                    None => panel.outcome().values()[row],
                    Some(c) => panel.covariates()[c].values()[row],
                });
            }
            parts.push(m);
        }
        let design = if parts.is_empty() {
            DesignMatrix::zeros(0, model.terms.len())
        } else {
            DesignMatrix::vstack(&parts)?
        };
        if let Some(c) = covariate {
            let kind = panel.covariates()[c].kind();
            if kind != model.family.column_kind() {
                return Err(Error::InvalidArgument(format!(
                    "covariate `{}` is {:?} but modelled with {:?}",
                    model.response, kind, model.family
                )));
            }
        }
        Ok(BlockData { design, response, family: model.family, name: model.response.clone() })
    }
}

/// A [`ModelSpec`] with column names resolved.
#[derive(Debug, Clone)]
pub struct CompiledSpec {
    pub outcome: CompiledTerms,
    /// `(covariate column index, terms)` in simulation order.
    pub covariates: Vec<(usize, CompiledTerms)>,
}

/// Pooled design and response of one block.
#[derive(Debug, Clone)]
pub struct BlockData {
    pub name: String,
    pub design: DesignMatrix,
    pub response: Vec<f64>,
    pub family: Family,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    Normal { mean: f64, variance: f64 },
    /// Laplace prior, density `λ/2 · exp(-λ|v - mean|)`.
    DoubleExponential { mean: f64, rate: f64 },
    Flat,
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Prior::Normal { mean, variance } if !(variance > 0.0 && variance.is_finite() && mean.is_finite()) => {
                Err(Error::InvalidArgument(format!("normal prior needs finite mean and variance > 0, got {variance}")))
            }
            Prior::DoubleExponential { mean, rate } if !(rate > 0.0 && rate.is_finite() && mean.is_finite()) => {
                Err(Error::InvalidArgument(format!("double-exponential prior needs rate > 0, got {rate}")))
            }
            _ => Ok(()),
        }
    }

    pub fn log_density(&self, value: f64) -> f64 {
        match *self {
            Prior::Normal { mean, variance } => {
                let d = value - mean;
                -0.5 * (2.0 * PI * variance).ln() - d * d / (2.0 * variance)
            }
            Prior::DoubleExponential { mean, rate } => (rate / 2.0).ln() - rate * (value - mean).abs(),
            Prior::Flat => 0.0,
        }
    }

    /// Curvature `-d²/dv² log π`, zero where undefined.
    pub(crate) fn precision(&self) -> f64 {
        match *self {
            Prior::Normal { variance, .. } => 1.0 / variance,
            _ => 0.0,
        }
    }

    /// Parses `normal(m, v)`, `laplace(m, rate)` / `dexp(m, rate)`, or `flat`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("flat") {
            return Ok(Prior::Flat);
        }
        let open = s.find('(').ok_or_else(|| Error::InvalidArgument(format!("bad prior `{s}`")))?;
        if !s.ends_with(')') {
            return Err(Error::InvalidArgument(format!("bad prior `{s}`")));
        }
        let name = s[..open].trim().to_ascii_lowercase();
        let args: Vec<f64> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|a| parse_number(a.trim()))
            .collect::<Result<_>>()?;
        if args.len() != 2 {
            return Err(Error::InvalidArgument(format!("prior `{s}` needs two arguments")));
        }
        let p = match name.as_str() {
            "normal" | "n" => Prior::Normal { mean: args[0], variance: args[1] },
            "laplace" | "dexp" | "double_exponential" => Prior::DoubleExponential { mean: args[0], rate: args[1] },
            _ => return Err(Error::InvalidArgument(format!("unknown prior `{name}`"))),
        };
        p.validate()?;
        Ok(p)
    }
}

/// Accepts plain numbers and `ln(v)` / `log(v)`.
fn parse_number(s: &str) -> Result<f64> {
    let lower = s.to_ascii_lowercase();
    for f in ["ln(", "log("] {
        if let Some(rest) = lower.strip_prefix(f) {
            if let Some(inner) = rest.strip_suffix(')') {
                return Ok(parse_number(inner)?.ln());
            }
        }
    }
    s.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad number `{s}`: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockPrior {
    pub coefficients: Vec<Prior>,
    /// Prior on `log σ` (Gaussian blocks only).
    pub log_scale: Prior,
}

/// Priors for every sampled block, in [`ModelSpec::blocks`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub blocks: Vec<BlockPrior>,
}

impl PriorSpec {
    /// Same prior for every intercept and another for every other coefficient.
    pub fn uniform(spec: &ModelSpec, intercept: Prior, other: Prior) -> Self {
        let blocks = spec
            .blocks()
            .map(|b| BlockPrior {
                coefficients: (0..b.terms.len()).map(|j| if j == 0 { intercept } else { other }).collect(),
                log_scale: Prior::Flat,
            })
            .collect();
        PriorSpec { blocks }
    }

    pub fn flat(spec: &ModelSpec) -> Self {
        Self::uniform(spec, Prior::Flat, Prior::Flat)
    }

    /// Vague `N(ln 0.5, 1000)` intercepts and null-centred `N(0, 3)` slopes.
    pub fn vague_intercept_moderate_slopes(spec: &ModelSpec) -> Self {
        Self::uniform(
            spec,
            Prior::Normal { mean: 0.5f64.ln(), variance: 1000.0 },
            Prior::Normal { mean: 0.0, variance: 3.0 },
        )
    }

    /// Laplace(0, rate) on every slope, flat intercepts.
    pub fn lasso(spec: &ModelSpec, rate: f64) -> Self {
        Self::uniform(spec, Prior::Flat, Prior::DoubleExponential { mean: 0.0, rate })
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.blocks.len() != spec.n_blocks() {
            return Err(Error::Dimension(format!(
                "priors for {} blocks, model has {}",
                self.blocks.len(),
                spec.n_blocks()
            )));
        }
        for (bp, b) in self.blocks.iter().zip(spec.blocks()) {
            if bp.coefficients.len() != b.terms.len() {
                return Err(Error::Dimension(format!(
                    "block `{}`: {} priors for {} coefficients",
                    b.response,
                    bp.coefficients.len(),
                    b.terms.len()
                )));
            }
            for p in bp.coefficients.iter().chain(std::iter::once(&bp.log_scale)) {
                p.validate()?;
            }
        }
        Ok(())
    }

    /// Priors flattened in parameter order (scale priors included).
    pub fn flattened(&self, spec: &ModelSpec) -> Vec<Prior> {
        let mut out = Vec::with_capacity(spec.n_params());
        for (bp, b) in self.blocks.iter().zip(spec.blocks()) {
            out.extend_from_slice(&bp.coefficients);
            if b.family == Family::GaussianIdentity {
                out.push(bp.log_scale);
            }
        }
        out
    }
}
