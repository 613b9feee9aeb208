//! Subject-by-time panels in long format.
//!
//! Rows are grouped by subject (in order of first appearance) and sorted by
//! time within a subject. Construction only checks shape; every semantic
//! invariant is reported by [`Panel::validate`].

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Binary,
    Real,
}

#[derive(Debug, Clone)]
pub struct Column {
    name: String,
    kind: ColumnKind,
    values: Vec<f64>,
}

impl Column {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ColumnKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    NotBinary(f64),
    MissingValue,
    /// Times within a subject must be 0, 1, 2, ... without gaps or repeats.
    NonContiguous { expected: usize, found: usize },
    /// A row exists after the subject's first event on a binary outcome.
    RowAfterEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub subject: String,
    pub time: usize,
    pub column: Option<String>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "subject {} time {}", self.subject, self.time)?;
        if let Some(c) = &self.column {
            write!(f, " column {c}")?;
        }
        match &self.kind {
            ViolationKind::NotBinary(v) => write!(f, ": value {v} is not 0/1"),
            ViolationKind::MissingValue => write!(f, ": missing value"),
            ViolationKind::NonContiguous { expected, found } => {
                write!(f, ": expected time {expected}, found {found}")
            }
            ViolationKind::RowAfterEvent => write!(f, ": row after outcome event"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Panel {
    subject_ids: Vec<String>,
    subject_rows: Vec<Range<usize>>,
    times: Vec<usize>,
    y: Column,
    x: Column,
    covariates: Vec<Column>,
}

/// Accumulates rows for a [`Panel`].
#[derive(Debug, Clone)]
pub struct PanelBuilder {
    outcome_kind: ColumnKind,
    covariates: Vec<(String, ColumnKind)>,
    rows: Vec<(String, usize, f64, f64, Vec<f64>)>,
}

impl PanelBuilder {
    pub fn new(outcome_kind: ColumnKind, covariates: Vec<(String, ColumnKind)>) -> Self {
        PanelBuilder { outcome_kind, covariates, rows: Vec::new() }
    }

    pub fn push(&mut self, id: impl Into<String>, time: usize, y: f64, x: f64, covariates: &[f64]) -> &mut Self {
        self.rows.push((id.into(), time, y, x, covariates.to_vec()));
        self
    }

    pub fn build(self) -> Result<Panel> {
        let p = self.covariates.len();
        let mut order: Vec<String> = Vec::new();
        let mut grouped: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            if row.4.len() != p {
                return Err(Error::Dimension(format!(
                    "row for subject {} has {} covariates, expected {p}",
                    row.0,
                    row.4.len()
                )));
            }
            grouped
                .entry(row.0.clone())
                .or_insert_with(|| {
                    order.push(row.0.clone());
                    Vec::new()
                })
                .push(i);
        }
        if order.is_empty() {
            return Err(Error::Empty("panel".into()));
        }

        let n_rows = self.rows.len();
        let mut times = Vec::with_capacity(n_rows);
        let mut y = Vec::with_capacity(n_rows);
        let mut x = Vec::with_capacity(n_rows);
        let mut covs: Vec<Vec<f64>> = vec![Vec::with_capacity(n_rows); p];
        let mut subject_rows = Vec::with_capacity(order.len());
        for id in &order {
            let mut idx = grouped.remove(id).unwrap_or_default();
            idx.sort_by_key(|&i| self.rows[i].1);
            let start = times.len();
            for i in idx {
                let row = &self.rows[i];
                times.push(row.1);
                y.push(row.2);
                x.push(row.3);
                for (c, v) in covs.iter_mut().zip(&row.4) {
                    c.push(*v);
                }
            }
            subject_rows.push(start..times.len());
        }

        Ok(Panel {
            subject_ids: order,
            subject_rows,
            times,
            y: Column { name: "y".into(), kind: self.outcome_kind, values: y },
            x: Column { name: "x".into(), kind: ColumnKind::Binary, values: x },
            covariates: self
                .covariates
                .into_iter()
                .zip(covs)
                .map(|((name, kind), values)| Column { name, kind, values })
                .collect(),
        })
    }
}

impl Panel {
    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn n_rows(&self) -> usize {
        self.times.len()
    }

    /// Largest observed time (0 for time-fixed data).
    pub fn horizon(&self) -> usize {
        self.times.iter().copied().max().unwrap_or(0)
    }

    pub fn subject_id(&self, subject: usize) -> &str {
        &self.subject_ids[subject]
    }

    pub fn rows(&self, subject: usize) -> Range<usize> {
        self.subject_rows[subject].clone()
    }

    pub fn time(&self, row: usize) -> usize {
        self.times[row]
    }

    pub fn outcome(&self) -> &Column {
        &self.y
    }

    pub fn exposure(&self) -> &Column {
        &self.x
    }

    pub fn covariates(&self) -> &[Column] {
        &self.covariates
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    /// Row of `subject` at time `t`, if the subject is observed then.
    pub fn row_at(&self, subject: usize, t: usize) -> Option<usize> {
        let range = self.rows(subject);
        let guess = range.start + t;
        if guess < range.end && self.times[guess] == t {
            return Some(guess);
        }
        range.into_iter().find(|&r| self.times[r] == t)
    }

    /// Every invariant violation, in row order.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let binary_columns = std::iter::once(&self.y)
            .chain(std::iter::once(&self.x))
            .chain(self.covariates.iter());
        let columns: Vec<&Column> = binary_columns.collect();

        for (s, range) in self.subject_rows.iter().enumerate() {
            let id = &self.subject_ids[s];
            let mut event_seen = false;
            for (expected, row) in range.clone().enumerate() {
                let t = self.times[row];
                if t != expected {
                    out.push(Violation {
                        subject: id.clone(),
                        time: t,
                        column: None,
                        kind: ViolationKind::NonContiguous { expected, found: t },
                    });
                }
                if event_seen {
                    out.push(Violation {
                        subject: id.clone(),
                        time: t,
                        column: Some("y".into()),
                        kind: ViolationKind::RowAfterEvent,
                    });
                }
                for col in &columns {
                    let v = col.values[row];
                    if !v.is_finite() {
                        out.push(Violation {
                            subject: id.clone(),
                            time: t,
                            column: Some(col.name.clone()),
                            kind: ViolationKind::MissingValue,
                        });
                    } else if col.kind == ColumnKind::Binary && v != 0.0 && v != 1.0 {
                        out.push(Violation {
                            subject: id.clone(),
                            time: t,
                            column: Some(col.name.clone()),
                            kind: ViolationKind::NotBinary(v),
                        });
                    }
                }
                if self.y.kind == ColumnKind::Binary && self.y.values[row] == 1.0 {
                    event_seen = true;
                }
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidPanel(v))
        }
    }

    /// Panel made of the given subjects (repeats allowed), relabelled so that
    /// every copy is a distinct subject.
    pub fn resample(&self, subjects: &[usize]) -> Panel {
        let n_rows: usize = subjects.iter().map(|&s| self.subject_rows[s].len()).sum();
        let mut times = Vec::with_capacity(n_rows);
        let mut y = Vec::with_capacity(n_rows);
        let mut x = Vec::with_capacity(n_rows);
        let mut covs: Vec<Vec<f64>> = vec![Vec::with_capacity(n_rows); self.covariates.len()];
        let mut subject_rows = Vec::with_capacity(subjects.len());
        let mut subject_ids = Vec::with_capacity(subjects.len());
        for (k, &s) in subjects.iter().enumerate() {
            let start = times.len();
            for r in self.rows(s) {
                times.push(self.times[r]);
                y.push(self.y.values[r]);
                x.push(self.x.values[r]);
                for (c, col) in covs.iter_mut().zip(&self.covariates) {
                    c.push(col.values[r]);
                }
            }
            subject_rows.push(start..times.len());
            subject_ids.push(format!("{}#{k}", self.subject_ids[s]));
        }
        Panel {
            subject_ids,
            subject_rows,
            times,
            y: Column { values: y, ..self.y.clone_empty() },
            x: Column { values: x, ..self.x.clone_empty() },
            covariates: self
                .covariates
                .iter()
                .zip(covs)
                .map(|(c, values)| Column { values, ..c.clone_empty() })
                .collect(),
        }
    }

    /// Reads the long CSV layout `id,time,y,x,<covariates...>`; lines starting
    /// with `#` are skipped. Columns listed
    /// in `real_columns` are real-valued; every other covariate is binary.
    pub fn read_csv<R: Read>(reader: R, outcome_kind: ColumnKind, real_columns: &[String]) -> Result<Panel> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let fixed = ["id", "time", "y", "x"];
        for (i, name) in fixed.iter().enumerate() {
            if headers.get(i) != Some(*name) {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected column {} to be `{name}`", i + 1),
                });
            }
        }
        let covariates: Vec<(String, ColumnKind)> = headers
            .iter()
            .skip(4)
            .map(|h| {
                let kind = if real_columns.iter().any(|r| r == h) { ColumnKind::Real } else { ColumnKind::Binary };
                (h.to_string(), kind)
            })
            .collect();
        for r in real_columns {
            if r != "y" && !covariates.iter().any(|(n, _)| n == r) {
                return Err(Error::UnknownColumn(r.clone()));
            }
        }
        let mut builder = PanelBuilder::new(outcome_kind, covariates);
        let mut covs = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let num = |j: usize| -> Result<f64> {
                let field = rec.get(j).unwrap_or("");
                if field.is_empty() || field.eq_ignore_ascii_case("na") {
                    return Ok(f64::NAN);
                }
                field.parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("column {}: {e}", j + 1),
                })
            };
            let time: usize = rec.get(1).unwrap_or("").parse().map_err(|e| Error::Parse {
                line,
                message: format!("time: {e}"),
            })?;
            covs.clear();
            for j in 4..headers.len() {
                covs.push(num(j)?);
            }
            builder.push(rec.get(0).unwrap_or(""), time, num(2)?, num(3)?, &covs);
        }
        builder.build()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), "time".into(), "y".into(), "x".into()];
        header.extend(self.covariates.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for s in 0..self.n_subjects() {
            for r in self.rows(s) {
                record.clear();
                record.push(self.subject_ids[s].clone());
                record.push(self.times[r].to_string());
                record.push(format_value(self.y.values[r]));
                record.push(format_value(self.x.values[r]));
                for c in &self.covariates {
                    record.push(format_value(c.values[r]));
                }
                w.write_record(&record)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl Column {
    fn clone_empty(&self) -> Column {
        Column { name: self.name.clone(), kind: self.kind, values: Vec::new() }
    }
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_period() -> PanelBuilder {
        let mut b = PanelBuilder::new(ColumnKind::Binary, vec![("l".into(), ColumnKind::Binary)]);
        b.push("a", 0, 0.0, 1.0, &[0.0])
            .push("a", 1, 1.0, 1.0, &[1.0])
            .push("b", 0, 0.0, 0.0, &[1.0])
            .push("b", 1, 0.0, 0.0, &[1.0]);
        b
    }

    #[test]
    fn well_formed_panel_is_ok() {
        let p = two_period().build().unwrap();
        assert!(p.validate().is_empty());
        assert_eq!(p.n_subjects(), 2);
        assert_eq!(p.horizon(), 1);
    }

    #[test]
    fn non_binary_value_is_reported() {
        let mut b = two_period();
        b.push("c", 0, 0.0, 2.0, &[0.0]);
        let v = b.build().unwrap().validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].subject, "c");
        assert_eq!(v[0].time, 0);
        assert_eq!(v[0].column.as_deref(), Some("x"));
        assert_eq!(v[0].kind, ViolationKind::NotBinary(2.0));
    }

    #[test]
    fn gap_in_times_is_reported() {
        let mut b = two_period();
        b.push("c", 0, 0.0, 0.0, &[0.0]).push("c", 2, 0.0, 0.0, &[0.0]);
        let v = b.build().unwrap().validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::NonContiguous { expected: 1, found: 2 });
    }

    #[test]
    fn rows_after_event_are_reported() {
        let mut b = two_period();
        b.push("c", 0, 1.0, 0.0, &[0.0]).push("c", 1, 0.0, 0.0, &[0.0]);
        let v = b.build().unwrap().validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::RowAfterEvent);
    }

    #[test]
    fn real_outcome_never_exits() {
        let mut b = PanelBuilder::new(ColumnKind::Real, vec![]);
        b.push("a", 0, 1.0, 0.0, &[]).push("a", 1, 2.5, 0.0, &[]);
        assert!(b.build().unwrap().validate().is_empty());
    }

    #[test]
    fn rows_sorted_within_subject() {
        let mut b = PanelBuilder::new(ColumnKind::Binary, vec![]);
        b.push("a", 1, 0.0, 1.0, &[]).push("b", 0, 0.0, 0.0, &[]).push("a", 0, 0.0, 0.0, &[]);
        let p = b.build().unwrap();
        assert_eq!(p.subject_id(0), "a");
        assert_eq!(p.row_at(0, 1), Some(1));
        assert_eq!(p.exposure().values()[1], 1.0);
    }

    #[test]
    fn csv_round_trip() {
        let p = two_period().build().unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,time,y,x,l\n"));
        let q = Panel::read_csv(buf.as_slice(), ColumnKind::Binary, &[]).unwrap();
        assert_eq!(q.n_rows(), 4);
        assert_eq!(q.covariates()[0].values(), p.covariates()[0].values());
    }

    #[test]
    fn resample_relabels_copies() {
        let p = two_period().build().unwrap();
        let q = p.resample(&[1, 1, 0]);
        assert_eq!(q.n_subjects(), 3);
        assert_eq!(q.n_rows(), 6);
        assert_ne!(q.subject_id(0), q.subject_id(1));
        assert!(q.validate().is_empty());
    }
}
