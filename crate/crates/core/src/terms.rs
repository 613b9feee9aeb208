//! Model terms, their textual formula syntax, and design-matrix construction.
//!
//! Formulas are `+`-separated terms. A term is a product (`*`) of factors:
//! `1`, `t`, a column name, `cum(col)` (sum of the column over times
//! `0..=t`), `cumlag(col)` (sum over `0..t`), `sq(term)`, or a parenthesised
//! term. The intercept is always the first term.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::Regime;
use crate::panel::{Column, Panel};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Intercept,
    Time,
    Column(String),
    /// Sum of `column` over times `0..=t-lag`; empty (zero) when `t < lag`.
    CumSum { column: String, lag: u8 },
    Product(Box<Term>, Box<Term>),
    Square(Box<Term>),
}

impl Term {
    pub fn column(name: &str) -> Term {
        Term::Column(name.to_string())
    }

    pub fn cum(name: &str, lag: u8) -> Term {
        Term::CumSum { column: name.to_string(), lag }
    }

    pub fn product(a: Term, b: Term) -> Term {
        Term::Product(Box::new(a), Box::new(b))
    }

    pub fn square(a: Term) -> Term {
        Term::Square(Box::new(a))
    }

    fn columns<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Term::Intercept | Term::Time => {}
            Term::Column(c) | Term::CumSum { column: c, .. } => out.push(c),
            Term::Product(a, b) => {
                a.columns(out);
                b.columns(out);
            }
            Term::Square(a) => a.columns(out),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => write!(f, "1"),
            Term::Time => write!(f, "t"),
            Term::Column(c) => write!(f, "{c}"),
            Term::CumSum { column, lag: 0 } => write!(f, "cum({column})"),
            Term::CumSum { column, lag } if *lag == 1 => write!(f, "cumlag({column})"),
            Term::CumSum { column, lag } => write!(f, "cum{lag}({column})"),
            Term::Product(a, b) => write!(f, "{a}*{b}"),
            Term::Square(a) => write!(f, "sq({a})"),
        }
    }
}

/// Ordered list of terms whose first element is the intercept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermList(Vec<Term>);

impl TermList {
    /// Prepends the intercept if missing.
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        let mut terms = terms;
        if terms.first() != Some(&Term::Intercept) {
            terms.insert(0, Term::Intercept);
        }
        if terms.iter().skip(1).any(|t| *t == Term::Intercept) {
            return Err(Error::InvalidArgument("intercept listed more than once".into()));
        }
        for t in &terms {
            if let Term::CumSum { lag, .. } = t {
                if *lag > 1 {
                    return Err(Error::InvalidArgument(format!("lag {lag} not supported (0 or 1)")));
                }
            }
        }
        Ok(TermList(terms))
    }

    pub fn intercept_only() -> Self {
        TermList(vec![Term::Intercept])
    }

    pub fn terms(&self) -> &[Term] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(|t| t.to_string()).collect()
    }

    pub fn parse(formula: &str) -> Result<Self> {
        let mut p = Parser { chars: formula.chars().filter(|c| !c.is_whitespace()).collect(), pos: 0 };
        let mut terms = vec![p.term()?];
        while p.eat('+') {
            terms.push(p.term()?);
        }
        if p.pos != p.chars.len() {
            return Err(p.error("unexpected trailing input"));
        }
        TermList::new(terms)
    }
}

impl fmt::Display for TermList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = self.names();
        write!(f, "{}", names.join(" + "))
    }
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn error(&self, msg: &str) -> Error {
        let s: String = self.chars.iter().collect();
        Error::Parse { line: 0, message: format!("{msg} at offset {} in `{s}`", self.pos) }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.chars.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while let Some(c) = self.chars.get(self.pos) {
            if c.is_alphanumeric() || *c == '_' || *c == '.' {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn term(&mut self) -> Result<Term> {
        let mut t = self.factor()?;
        while self.eat('*') {
            let rhs = self.factor()?;
            t = Term::product(t, rhs);
        }
        Ok(t)
    }

    fn factor(&mut self) -> Result<Term> {
        let mut t = if self.eat('(') {
            let inner = self.term()?;
            if !self.eat(')') {
                return Err(self.error("expected `)`"));
            }
            inner
        } else {
            let name = self.ident();
            if name.is_empty() {
                return Err(self.error("expected a term"));
            }
            if self.eat('(') {
                let t = match name.as_str() {
                    "cum" | "cumlag" => {
                        let col = self.ident();
                        if col.is_empty() {
                            return Err(self.error("expected a column name"));
                        }
                        Term::cum(&col, if name == "cum" { 0 } else { 1 })
                    }
                    "sq" => Term::square(self.term()?),
                    _ => return Err(self.error(&format!("unknown function `{name}`"))),
                };
                if !self.eat(')') {
                    return Err(self.error("expected `)`"));
                }
                t
            } else {
                match name.as_str() {
                    "1" => Term::Intercept,
                    "t" => Term::Time,
                    _ => Term::Column(name),
                }
            }
        };
        if self.eat('^') {
            if !self.eat('2') {
                return Err(self.error("only `^2` is supported"));
            }
            t = Term::square(t);
        }
        Ok(t)
    }
}

/// Column a term reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnRef {
    Exposure,
    Covariate(usize),
}

/// What a term list is modelling; fixes which values are already known at
/// the current time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Role {
    Outcome,
    /// A covariate model. `pending` lists covariates (the target and those
    /// modelled after it) that are not yet realised at the current time.
    Covariate { target: usize, pending: Vec<usize> },
}

/// Read access to one subject's (possibly simulated) history.
pub trait History {
    fn value(&self, column: ColumnRef, t: usize) -> f64;
}

#[derive(Debug, Clone)]
enum Node {
    Intercept,
    Time,
    Col(ColumnRef),
    Cum(ColumnRef, usize),
    Product(Box<Node>, Box<Node>),
    Square(Box<Node>),
}

impl Node {
    fn eval<H: History + ?Sized>(&self, h: &H, t: usize) -> f64 {
        match self {
            Node::Intercept => 1.0,
            Node::Time => t as f64,
            Node::Col(c) => h.value(*c, t),
            Node::Cum(c, lag) => {
                if t < *lag {
                    0.0
                } else {
                    (0..=t - lag).map(|s| h.value(*c, s)).sum()
                }
            }
            Node::Product(a, b) => a.eval(h, t) * b.eval(h, t),
            Node::Square(a) => {
                let v = a.eval(h, t);
                v * v
            }
        }
    }

    fn involves_exposure(&self) -> bool {
        match self {
            Node::Intercept | Node::Time => false,
            Node::Col(c) | Node::Cum(c, _) => *c == ColumnRef::Exposure,
            Node::Product(a, b) => a.involves_exposure() || b.involves_exposure(),
            Node::Square(a) => a.involves_exposure(),
        }
    }
}

/// Term list with column names resolved against a panel's covariates.
#[derive(Debug, Clone)]
pub struct CompiledTerms {
    nodes: Vec<Node>,
}

impl CompiledTerms {
    pub fn compile(terms: &TermList, covariates: &[Column], role: &Role) -> Result<Self> {
        let target_name = match role {
            Role::Outcome => "y".to_string(),
            Role::Covariate { target, .. } => covariates
                .get(*target)
                .map(|c| c.name().to_string())
                .ok_or_else(|| Error::UnknownColumn(format!("covariate #{target}")))?,
        };
        let nodes = terms
            .terms()
            .iter()
            .map(|t| compile_term(t, covariates, role, &target_name))
            .collect::<Result<Vec<_>>>()?;
        Ok(CompiledTerms { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn eval_into<H: History + ?Sized>(&self, h: &H, t: usize, out: &mut [f64]) {
        for (o, n) in out.iter_mut().zip(&self.nodes) {
            *o = n.eval(h, t);
        }
    }

    /// Linear predictor `row · coefficients` without materialising the row.
    pub fn linear_predictor<H: History + ?Sized>(&self, h: &H, t: usize, coefficients: &[f64]) -> f64 {
        self.nodes.iter().zip(coefficients).map(|(n, b)| n.eval(h, t) * b).sum()
    }

    /// Flags, per term, whether it reads the exposure.
    pub fn exposure_terms(&self) -> Vec<bool> {
        self.nodes.iter().map(Node::involves_exposure).collect()
    }
}

fn resolve(name: &str, covariates: &[Column]) -> Result<ColumnRef> {
    if name == "x" {
        return Ok(ColumnRef::Exposure);
    }
    if name == "y" {
        return Err(Error::InvalidArgument("terms may not reference the outcome column `y`".into()));
    }
    covariates
        .iter()
        .position(|c| c.name() == name)
        .map(ColumnRef::Covariate)
        .ok_or_else(|| Error::UnknownColumn(name.to_string()))
}

fn compile_term(term: &Term, covariates: &[Column], role: &Role, target: &str) -> Result<Node> {
    let mut cols = Vec::new();
    term.columns(&mut cols);
    for c in cols {
        resolve(c, covariates)?;
    }
    let future = |col: ColumnRef| -> bool {
        match (role, col) {
            (Role::Outcome, _) => false,
            (Role::Covariate { .. }, ColumnRef::Exposure) => true,
            (Role::Covariate { pending, .. }, ColumnRef::Covariate(i)) => pending.contains(&i),
        }
    };
    let fail = || Error::FutureReference { term: term.to_string(), target: target.to_string(), time: 0 };
    fn build(
        term: &Term,
        covariates: &[Column],
        future: &dyn Fn(ColumnRef) -> bool,
        fail: &dyn Fn() -> Error,
    ) -> Result<Node> {
        Ok(match term {
            Term::Intercept => Node::Intercept,
            Term::Time => Node::Time,
            Term::Column(c) => {
                let r = resolve(c, covariates)?;
                if future(r) {
                    return Err(fail());
                }
                Node::Col(r)
            }
            Term::CumSum { column, lag } => {
                let r = resolve(column, covariates)?;
                if *lag == 0 && future(r) {
                    return Err(fail());
                }
                Node::Cum(r, *lag as usize)
            }
            Term::Product(a, b) => Node::Product(
                Box::new(build(a, covariates, future, fail)?),
                Box::new(build(b, covariates, future, fail)?),
            ),
            Term::Square(a) => Node::Square(Box::new(build(a, covariates, future, fail)?)),
        })
    }
    build(term, covariates, &future, &fail)
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DesignMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(DesignMatrix { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// `X · beta`.
    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), beta)).collect()
    }

    /// Stacks matrices with equal column counts.
    pub fn vstack(parts: &[DesignMatrix]) -> Result<Self> {
        let cols = parts.first().map_or(0, |m| m.cols);
        if parts.iter().any(|m| m.cols != cols) {
            return Err(Error::Dimension("vstack column mismatch".into()));
        }
        Ok(DesignMatrix {
            rows: parts.iter().map(|m| m.rows).sum(),
            cols,
            data: parts.iter().flat_map(|m| m.data.iter().copied()).collect(),
        })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DesignMatrix { rows: idx.len(), cols: self.cols, data }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A subject's observed history, optionally with exposure set by a regime.
pub struct PanelHistory<'a> {
    pub panel: &'a Panel,
    pub subject: usize,
    pub regime: Option<Regime>,
}

impl History for PanelHistory<'_> {
    fn value(&self, column: ColumnRef, t: usize) -> f64 {
        if let (ColumnRef::Exposure, Some(g)) = (column, self.regime) {
            return g.value();
        }
        let row = self
            .panel
            .row_at(self.subject, t)
            .expect("history queried at a time the subject was not observed");
        match column {
            ColumnRef::Exposure => self.panel.exposure().values()[row],
            ColumnRef::Covariate(i) => self.panel.covariates()[i].values()[row],
        }
    }
}

/// Design matrix at `time` over the subjects observed (at risk) then, plus the
/// subject index of each row.
pub fn build_design(
    panel: &Panel,
    terms: &TermList,
    role: &Role,
    time: usize,
    regime: Option<Regime>,
) -> Result<(DesignMatrix, Vec<usize>)> {
    let horizon = panel.horizon();
    if time > horizon {
        return Err(Error::TimeOutOfRange { time, horizon });
    }
    let compiled = CompiledTerms::compile(terms, panel.covariates(), role)
        .map_err(|e| with_time(e, time))?;
    let at_risk: Vec<usize> = (0..panel.n_subjects()).filter(|&s| panel.row_at(s, time).is_some()).collect();
    let mut m = DesignMatrix::zeros(at_risk.len(), compiled.len());
    for (i, &s) in at_risk.iter().enumerate() {
        let h = PanelHistory { panel, subject: s, regime };
        compiled.eval_into(&h, time, m.row_mut(i));
    }
    Ok((m, at_risk))
}

fn with_time(e: Error, time: usize) -> Error {
    match e {
        Error::FutureReference { term, target, .. } => Error::FutureReference { term, target, time },
        other => other,
    }
}
