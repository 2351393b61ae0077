//! Propensity scores: logistic fit, prediction and fit diagnostics.

mod diagnostics;
mod formula;
mod irls;
mod selection;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diagnostics::{auc, auc_pairs, common_support, log_likelihood, mcfadden_r2, HistBin, SupportMode, SupportReport};
pub use formula::{build_design, DesignMatrix, Formula, Term};
pub use irls::{fit_logistic, FitOptions};
pub use selection::{forward_select, Selection, SelectionStep};

use crate::panel::{Covariates, Panel};
use crate::time::format_date;

#[derive(Debug, Error, PartialEq)]
pub enum PropensityError {
    #[error("treatment has a single class; both disrupted and undisrupted units are required")]
    SingleClass,
    #[error("perfect separation: coefficients diverge or weights collapse")]
    Separation,
    #[error("design matrix is rank deficient; dependent columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("covariate `{0}` is missing")]
    MissingColumn(String),
    #[error("formula: {0}")]
    Formula(String),
    #[error("design columns and labels differ in length")]
    Shape,
    #[error("write failed: {0}")]
    Write(String),
    #[error("score file: {0}")]
    Read(String),
}

/// Fitted logistic propensity model, coefficients on the original scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub formula: Formula,
    pub intercept: f64,
    /// Design columns that entered the fit, aligned with `coef`.
    pub terms: Vec<String>,
    pub coef: Vec<f64>,
    /// Standardization used during fitting (mean 0 / sd 1 for binary columns).
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Constant or duplicated design columns removed before fitting.
    pub dropped: Vec<String>,
}

impl PropensityModel {
    /// Linear predictor for a single row given in `terms` order.
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    /// `1 / (1 + exp(-(a + b.x)))`, clamped away from exactly 0 and 1.
    pub fn score(&self, row: &[f64]) -> f64 {
        clamp_open(irls::logistic(self.linear_predictor(row)))
    }
}

pub(crate) fn clamp_open(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefRow {
    pub term: String,
    pub coef: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub auc: f64,
    pub mcfadden_r2: f64,
    pub deviance: f64,
    pub null_deviance: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Deviance at the start and after every accepted iteration.
    pub deviance_trace: Vec<f64>,
    pub mean_score: f64,
    pub treated_fraction: f64,
    pub coefficients: Vec<CoefRow>,
}

/// Fits the propensity model on every unit of the panel.
pub fn fit_propensity(
    panel: &Panel,
    formula: &Formula,
    opts: &FitOptions,
) -> Result<(PropensityModel, DiagnosticsReport), PropensityError> {
    let design = build_design(formula, &panel.covariates)?;
    fit_logistic(formula, &design, panel.labels(), opts)
}

/// Scores for every row of a covariate table.
pub fn predict_scores(model: &PropensityModel, cov: &Covariates) -> Result<Vec<f64>, PropensityError> {
    let design = build_design(&model.formula, cov)?;
    let cols: Vec<&[f64]> = model
        .terms
        .iter()
        .map(|t| design.column(t).ok_or_else(|| PropensityError::MissingColumn(t.clone())))
        .collect::<Result<_, _>>()?;
    let n = cov.columns().next().map_or(0, |(_, c)| c.len());
    let mut row = vec![0.0; cols.len()];
    Ok((0..n)
        .map(|i| {
            for (r, c) in row.iter_mut().zip(&cols) {
                *r = c[i];
            }
            model.score(&row)
        })
        .collect())
}

fn werr(e: impl std::fmt::Display) -> PropensityError {
    PropensityError::Write(e.to_string())
}

/// Coefficient table `term,coef,se`.
pub fn write_coefficients<W: Write>(out: W, report: &DiagnosticsReport) -> Result<(), PropensityError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["term", "coef", "se"]).map_err(werr)?;
    for r in &report.coefficients {
        w.write_record([r.term.clone(), r.coef.to_string(), r.se.to_string()]).map_err(werr)?;
    }
    w.flush().map_err(werr)
}

/// Score histogram `bin_lo,bin_hi,count_treated,count_control`.
pub fn write_histogram<W: Write>(out: W, report: &SupportReport) -> Result<(), PropensityError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_lo", "bin_hi", "count_treated", "count_control"]).map_err(werr)?;
    for b in &report.bins {
        w.write_record([b.lo.to_string(), b.hi.to_string(), b.treated.to_string(), b.control.to_string()])
            .map_err(werr)?;
    }
    w.flush().map_err(werr)
}

/// Per-unit score table `station,day,slot,W,score` in panel order.
pub fn write_scores<W: Write>(out: W, panel: &Panel, scores: &[f64]) -> Result<(), PropensityError> {
    if scores.len() != panel.n_units() {
        return Err(PropensityError::Shape);
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["station", "day", "slot", "W", "score"]).map_err(werr)?;
    for (u, s) in scores.iter().enumerate() {
        let (si, id) = panel.locate(u);
        w.write_record([
            panel.station_ids[si].clone(),
            format_date(&panel.window.days()[id.day]),
            id.slot.to_string(),
            panel.treatment[u].to_string(),
            s.to_string(),
        ])
        .map_err(werr)?;
    }
    w.flush().map_err(werr)
}

/// Reads a score table and checks that it lines up with `panel` row by row.
pub fn read_scores<R: Read>(input: R, panel: &Panel) -> Result<Vec<f64>, PropensityError> {
    let rerr = |m: String| PropensityError::Read(m);
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| rerr(e.to_string()))?.clone();
    if header.iter().ne(["station", "day", "slot", "W", "score"]) {
        return Err(rerr("unexpected header".into()));
    }
    let mut out = Vec::with_capacity(panel.n_units());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| rerr(e.to_string()))?;
        let u = out.len();
        if u >= panel.n_units() {
            return Err(rerr(format!("more rows than the {} panel units", panel.n_units())));
        }
        let (si, id) = panel.locate(u);
        let day = format_date(&panel.window.days()[id.day]);
        if rec[0] != panel.station_ids[si] || rec[1] != day || rec[2] != id.slot.to_string() {
            return Err(rerr(format!("row {} is {},{},{} but the panel expects {},{day},{}", u + 1, &rec[0], &rec[1], &rec[2], panel.station_ids[si], id.slot)));
        }
        if rec[3] != panel.treatment[u].to_string() {
            return Err(rerr(format!("row {} treatment differs from the panel", u + 1)));
        }
        out.push(rec[4].parse::<f64>().map_err(|e| rerr(format!("row {}: {e}", u + 1)))?);
    }
    if out.len() != panel.n_units() {
        return Err(rerr(format!("{} rows for {} panel units", out.len(), panel.n_units())));
    }
    Ok(out)
}
