//! Imputation of vulnerability metrics for stations that were never
//! disrupted, from station-level features.

mod forest;
mod linear;

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{fit_forest, ForestModel, ForestParams, Tree};
pub use linear::{fit_linear, LinearModel};

use crate::ingest::StationAttrs;
use crate::metrics::{Metric, VulnerabilityRecord};
use crate::network::NetworkGraph;
use crate::panel::DailyStats;

#[derive(Debug, Error, PartialEq)]
pub enum ImputeError {
    #[error("{rows} feature rows for {targets} targets")]
    Shape { rows: usize, targets: usize },
    #[error("expected {expected} features, got {got}")]
    FeatureCount { expected: usize, got: usize },
    #[error("mtry {mtry} exceeds the {features} available features")]
    Mtry { mtry: usize, features: usize },
    #[error("forest needs at least one tree and min_node >= 1")]
    BadParams,
    #[error("features or targets contain non-finite values")]
    NonFinite,
    #[error("linear system is singular")]
    Singular,
    #[error("need at least 2 observations to score a regression")]
    TooFew,
    #[error("write failed: {0}")]
    Write(String),
}

/// Error measures of a set of predictions. The relative measures are `None`
/// when the truth is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionScores {
    pub mae: f64,
    pub rmse: f64,
    pub rae: Option<f64>,
    pub rse: Option<f64>,
}

pub fn eval_regression(y_true: &[f64], y_pred: &[f64]) -> Result<RegressionScores, ImputeError> {
    let n = y_true.len();
    if n != y_pred.len() {
        return Err(ImputeError::Shape { rows: y_pred.len(), targets: n });
    }
    if n < 2 {
        return Err(ImputeError::TooFew);
    }
    let m = y_true.iter().sum::<f64>() / n as f64;
    let abs_err: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).abs()).sum();
    let sq_err: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).powi(2)).sum();
    let abs_dev: f64 = y_true.iter().map(|t| (t - m).abs()).sum();
    let sq_dev: f64 = y_true.iter().map(|t| (t - m).powi(2)).sum();
    Ok(RegressionScores {
        mae: abs_err / n as f64,
        rmse: (sq_err / n as f64).sqrt(),
        rae: (abs_dev > 0.0).then(|| abs_err / abs_dev),
        rse: (sq_dev > 0.0).then(|| sq_err / sq_dev),
    })
}

/// Station-level feature table, one row per station.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn flag(b: bool) -> f64 {
    f64::from(u8::from(b))
}

/// Study-period demand and speed, engineering design, one-hot zone and the
/// socio-economic, land-use and accessibility attributes of each station.
pub fn station_features(stations: &[StationAttrs], daily: &[DailyStats], graph: &NetworkGraph) -> FeatureTable {
    let zones: Vec<u32> = stations.iter().map(|s| s.zone).collect::<BTreeSet<_>>().into_iter().collect();
    let mut names: Vec<String> = [
        "daily_entry",
        "daily_exit",
        "daily_speed",
        "rail_connect",
        "overground",
        "terminal",
        "screen_door",
        "n_lines",
        "avg_adj_km",
        "station_age",
        "rolling_stock_age",
        "population",
        "employment",
        "imd",
        "domestic_area",
        "non_domestic_area",
        "other_area",
        "bus_stops",
        "biking",
        "parking",
        "road_area",
        "path_area",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend(zones.iter().map(|z| format!("zone_{z}")));
    let rows = stations
        .iter()
        .zip(daily)
        .map(|(s, d)| {
            let adj = graph.index_of(&s.id).map_or(0.0, |g| graph.avg_adjacent_km(g));
            let mut r = vec![
                d.entry_per_day,
                d.exit_per_day,
                d.speed,
                flag(s.rail_connect),
                flag(s.overground),
                flag(s.terminal),
                flag(s.screen_door),
                s.n_lines as f64,
                adj,
                s.station_age,
                s.rolling_stock_age,
                s.population,
                s.employment,
                s.imd,
                s.domestic_area,
                s.non_domestic_area,
                s.other_area,
                s.bus_stops,
                flag(s.biking),
                flag(s.parking),
                s.road_area,
                s.path_area,
            ];
            r.extend(zones.iter().map(|&z| flag(s.zone == z)));
            r
        })
        .collect();
    FeatureTable { names, rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputeConfig {
    pub forest: ForestParams,
    pub folds: usize,
    /// Fewer stations with estimates than this and imputation is refused.
    pub min_train: usize,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        Self { forest: ForestParams::default(), folds: 5, min_train: 10 }
    }
}

/// Cross-validated comparison and imputation outcome for one metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricImputation {
    pub metric: Metric,
    pub n_train: usize,
    pub n_imputed: usize,
    pub forest: RegressionScores,
    pub linear: RegressionScores,
    /// Out-of-bag R^2 of the forest fitted on all training stations.
    pub oob_r2: Option<f64>,
    /// Out-of-fold forest residuals `truth - prediction`, in station order.
    pub forest_residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ImputationReport {
    pub metrics: Vec<MetricImputation>,
    /// Set when imputation was refused for lack of training stations.
    pub refused: Option<String>,
}

/// Out-of-fold predictions of forest and linear model under k-fold CV.
fn cross_validate(
    x: &[Vec<f64>],
    y: &[f64],
    params: &ForestParams,
    folds: usize,
) -> Result<(Vec<f64>, Vec<f64>), ImputeError> {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed));
    let mut fold = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    let mut pf = vec![0.0; n];
    let mut pl = vec![0.0; n];
    for k in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != k).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == k).collect();
        if test.is_empty() {
            continue;
        }
        let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let f = fit_forest(&xt, &yt, params)?;
        let l = fit_linear(&xt, &yt)?;
        for &i in &test {
            pf[i] = f.predict(&x[i])?;
            pl[i] = l.predict(&x[i])?;
        }
    }
    Ok((pf, pl))
}

/// Fills every missing absolute metric with a forest trained on the stations
/// that have an estimate, marking those records as imputed.
pub fn impute_missing(
    records: &mut [VulnerabilityRecord],
    features: &FeatureTable,
    cfg: &ImputeConfig,
) -> Result<ImputationReport, ImputeError> {
    if features.rows.len() != records.len() {
        return Err(ImputeError::Shape { rows: features.rows.len(), targets: records.len() });
    }
    let observed: Vec<usize> = (0..records.len()).filter(|&i| records[i].has_estimate() && !records[i].imputed).collect();
    if observed.len() < cfg.min_train {
        return Ok(ImputationReport {
            metrics: Vec::new(),
            refused: Some(format!(
                "{} stations with estimates, at least {} are needed to train the imputation model",
                observed.len(),
                cfg.min_train
            )),
        });
    }
    let p = features.names.len();
    let params = ForestParams { mtry: cfg.forest.mtry.min(p), ..cfg.forest };
    let mut report = ImputationReport::default();
    let mut filled: Vec<bool> = vec![false; records.len()];
    for metric in Metric::ABSOLUTE {
        let train: Vec<usize> = (0..records.len()).filter(|&i| !records[i].imputed && metric.get(&records[i]).is_some()).collect();
        if train.len() < cfg.min_train {
            continue;
        }
        let x: Vec<Vec<f64>> = train.iter().map(|&i| features.rows[i].clone()).collect();
        let y: Vec<f64> = train.iter().map(|&i| metric.get(&records[i]).expect("filtered")).collect();
        let (pf, pl) = cross_validate(&x, &y, &params, cfg.folds.clamp(2, train.len()))?;
        let model = fit_forest(&x, &y, &params)?;
        let mut n_imputed = 0;
        for (i, r) in records.iter_mut().enumerate() {
            if metric.get(r).is_none() {
                metric.set(r, model.predict(&features.rows[i])?);
                filled[i] = true;
                n_imputed += 1;
            }
        }
        report.metrics.push(MetricImputation {
            metric,
            n_train: train.len(),
            n_imputed,
            forest: eval_regression(&y, &pf)?,
            linear: eval_regression(&y, &pl)?,
            oob_r2: model.oob_r2,
            forest_residuals: y.iter().zip(&pf).map(|(t, p)| t - p).collect(),
        });
    }
    for (r, f) in records.iter_mut().zip(filled) {
        if f {
            r.imputed = true;
            r.refresh_normalized();
        }
    }
    Ok(report)
}

fn werr(e: impl std::fmt::Display) -> ImputeError {
    ImputeError::Write(e.to_string())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "undefined".into())
}

/// Benchmark table `metric,MAE,RMSE,RAE,RSE,method`.
pub fn write_report<W: Write>(out: W, report: &ImputationReport) -> Result<(), ImputeError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "MAE", "RMSE", "RAE", "RSE", "method"]).map_err(werr)?;
    for m in &report.metrics {
        for (s, method) in [(&m.forest, "random_forest"), (&m.linear, "linear_regression")] {
            w.write_record([
                m.metric.name().to_string(),
                s.mae.to_string(),
                s.rmse.to_string(),
                cell(s.rae),
                cell(s.rse),
                method.to_string(),
            ])
            .map_err(werr)?;
        }
    }
    w.flush().map_err(werr)
}
