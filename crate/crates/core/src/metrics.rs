//! Vulnerability metrics derived from station effects, and rankings.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effects::{Direction, Distance, EffectEstimate, OutcomeKind};
use crate::panel::StationBaseline;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no baseline for station `{0}`")]
    MissingBaseline(String),
    #[error("unknown metric `{name}`; valid metrics: {}", valid.join(", "))]
    UnknownMetric { name: String, valid: Vec<&'static str> },
    #[error("unknown ridership source `{0}` (expected disrupted or baseline)")]
    UnknownRidership(String),
    #[error("write failed: {0}")]
    Write(String),
    #[error("vulnerability file line {line}: {message}")]
    Read { line: u64, message: String },
}

/// Which entry ridership scales the average speed loss into gross loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ridership {
    /// Mean entry over the station's disrupted intervals.
    #[default]
    Disrupted,
    /// Mean entry over the station's undisrupted intervals.
    Baseline,
}

impl FromStr for Ridership {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "disrupted" => Ok(Self::Disrupted),
            "baseline" => Ok(Self::Baseline),
            other => Err(MetricError::UnknownRidership(other.to_string())),
        }
    }
}

/// Flow-irregularity variants in a fixed order.
pub const FLOW_VARIANTS: [(Distance, Direction); 6] = [
    (Distance::Euclidean, Direction::Outward),
    (Distance::Euclidean, Direction::Inward),
    (Distance::Hellinger, Direction::Outward),
    (Distance::Hellinger, Direction::Inward),
    (Distance::KullbackLeibler, Direction::Outward),
    (Distance::KullbackLeibler, Direction::Inward),
];

/// Per-station metrics, all as losses (positive = worse). `None` marks a
/// value that could not be estimated and has not been imputed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VulnerabilityRecord {
    pub station: String,
    /// Demand loss, passengers per interval.
    pub d: Option<f64>,
    /// Average speed loss, km/h.
    pub s_avg: Option<f64>,
    /// Gross speed loss, passenger-km/h.
    pub s_gross: Option<f64>,
    /// Aligned with [`FLOW_VARIANTS`].
    pub flow: [Option<f64>; 6],
    pub d_pct: Option<f64>,
    pub s_avg_pct: Option<f64>,
    pub s_gross_pct: Option<f64>,
    /// Raw effects for audit.
    pub tau_entry: Option<f64>,
    pub tau_speed: Option<f64>,
    /// Ridership used for the gross loss.
    pub ridership: Option<f64>,
    pub baseline_entry: f64,
    pub baseline_speed: Option<f64>,
    pub t_d: usize,
    pub imputed: bool,
}

fn pct(value: Option<f64>, base: Option<f64>) -> Option<f64> {
    match (value, base) {
        (Some(v), Some(b)) if b != 0.0 => Some(v / b * 100.0),
        _ => None,
    }
}

impl VulnerabilityRecord {
    fn empty(b: &StationBaseline) -> Self {
        Self {
            station: b.station.clone(),
            d: None,
            s_avg: None,
            s_gross: None,
            flow: [None; 6],
            d_pct: None,
            s_avg_pct: None,
            s_gross_pct: None,
            tau_entry: None,
            tau_speed: None,
            ridership: None,
            baseline_entry: b.mean_entry,
            baseline_speed: b.mean_speed,
            t_d: 0,
            imputed: false,
        }
    }

    /// Recomputes the percentage columns from the absolute values.
    pub fn refresh_normalized(&mut self) {
        self.d_pct = pct(self.d, Some(self.baseline_entry));
        self.s_avg_pct = pct(self.s_avg, self.baseline_speed);
        self.s_gross_pct = pct(self.s_gross, self.baseline_speed.map(|v| v * self.baseline_entry));
    }

    pub fn has_estimate(&self) -> bool {
        self.d.is_some()
    }
}

/// One record per station in baseline order. Stations without effects keep
/// empty metrics for the imputation stage.
pub fn compute_metrics(
    effects: &[EffectEstimate],
    baselines: &[StationBaseline],
    ridership: Ridership,
) -> Result<Vec<VulnerabilityRecord>, MetricError> {
    let index: HashMap<&str, usize> = baselines.iter().enumerate().map(|(i, b)| (b.station.as_str(), i)).collect();
    let mut out: Vec<VulnerabilityRecord> = baselines.iter().map(VulnerabilityRecord::empty).collect();
    for e in effects {
        let i = *index.get(e.station.as_str()).ok_or_else(|| MetricError::MissingBaseline(e.station.clone()))?;
        let r = &mut out[i];
        match e.outcome {
            OutcomeKind::Entry => {
                r.tau_entry = Some(e.tau);
                r.d = Some(-e.tau);
                r.t_d = e.t_d;
            }
            OutcomeKind::Speed => {
                r.tau_speed = Some(e.tau);
                r.s_avg = Some(-e.tau);
            }
            OutcomeKind::Flow(d, dir) => {
                r.flow[flow_slot(d, dir)] = Some(e.tau);
            }
        }
    }
    for (r, b) in out.iter_mut().zip(baselines) {
        r.ridership = match ridership {
            Ridership::Disrupted => b.disrupted_entry,
            Ridership::Baseline => Some(b.mean_entry),
        };
        r.s_gross = r.s_avg.zip(r.ridership).map(|(s, n)| s * n);
        r.refresh_normalized();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    D,
    DPct,
    SAvg,
    SAvgPct,
    SGross,
    SGrossPct,
    Flow(Distance, Direction),
}

impl Metric {
    pub const ALL: [Metric; 12] = [
        Metric::D,
        Metric::DPct,
        Metric::SAvg,
        Metric::SAvgPct,
        Metric::SGross,
        Metric::SGrossPct,
        Metric::Flow(Distance::Euclidean, Direction::Outward),
        Metric::Flow(Distance::Euclidean, Direction::Inward),
        Metric::Flow(Distance::Hellinger, Direction::Outward),
        Metric::Flow(Distance::Hellinger, Direction::Inward),
        Metric::Flow(Distance::KullbackLeibler, Direction::Outward),
        Metric::Flow(Distance::KullbackLeibler, Direction::Inward),
    ];

    /// Absolute metrics, the ones imputed and written to `vulnerability.csv`.
    pub const ABSOLUTE: [Metric; 9] = [
        Metric::D,
        Metric::SAvg,
        Metric::SGross,
        Metric::Flow(Distance::Euclidean, Direction::Outward),
        Metric::Flow(Distance::Euclidean, Direction::Inward),
        Metric::Flow(Distance::Hellinger, Direction::Outward),
        Metric::Flow(Distance::Hellinger, Direction::Inward),
        Metric::Flow(Distance::KullbackLeibler, Direction::Outward),
        Metric::Flow(Distance::KullbackLeibler, Direction::Inward),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::D => "d",
            Metric::DPct => "d_pct",
            Metric::SAvg => "s_avg",
            Metric::SAvgPct => "s_avg_pct",
            Metric::SGross => "s_gross",
            Metric::SGrossPct => "s_gross_pct",
            Metric::Flow(d, dir) => match (d, dir) {
                (Distance::Euclidean, Direction::Outward) => "f_ED_out",
                (Distance::Euclidean, Direction::Inward) => "f_ED_in",
                (Distance::Hellinger, Direction::Outward) => "f_HD_out",
                (Distance::Hellinger, Direction::Inward) => "f_HD_in",
                (Distance::KullbackLeibler, Direction::Outward) => "f_KL_out",
                (Distance::KullbackLeibler, Direction::Inward) => "f_KL_in",
            },
        }
    }

    pub fn get(self, r: &VulnerabilityRecord) -> Option<f64> {
        match self {
            Metric::D => r.d,
            Metric::DPct => r.d_pct,
            Metric::SAvg => r.s_avg,
            Metric::SAvgPct => r.s_avg_pct,
            Metric::SGross => r.s_gross,
            Metric::SGrossPct => r.s_gross_pct,
            Metric::Flow(d, dir) => r.flow[flow_slot(d, dir)],
        }
    }

    pub fn set(self, r: &mut VulnerabilityRecord, v: f64) {
        match self {
            Metric::D => r.d = Some(v),
            Metric::SAvg => r.s_avg = Some(v),
            Metric::SGross => r.s_gross = Some(v),
            Metric::Flow(d, dir) => r.flow[flow_slot(d, dir)] = Some(v),
            Metric::DPct | Metric::SAvgPct | Metric::SGrossPct => {
                unreachable!("normalized metrics are derived, not set")
            }
        }
    }

    /// The percentage counterpart of an absolute metric, if defined.
    pub fn normalized(self) -> Option<Metric> {
        match self {
            Metric::D => Some(Metric::DPct),
            Metric::SAvg => Some(Metric::SAvgPct),
            Metric::SGross => Some(Metric::SGrossPct),
            _ => None,
        }
    }
}

fn flow_slot(d: Distance, dir: Direction) -> usize {
    FLOW_VARIANTS.iter().position(|&v| v == (d, dir)).expect("all variants listed")
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| MetricError::UnknownMetric {
            name: s.to_string(),
            valid: Self::ALL.iter().map(|m| m.name()).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub rank: usize,
    pub station: String,
    pub value: f64,
    pub normalized: Option<f64>,
    pub imputed: bool,
}

/// Top `k` stations by `metric`, descending, ties broken by station id.
/// Stations without a value are left out.
pub fn rank_stations(records: &[VulnerabilityRecord], metric: Metric, k: usize) -> Vec<RankRow> {
    let mut rows: Vec<(&VulnerabilityRecord, f64)> =
        records.iter().filter_map(|r| metric.get(r).map(|v| (r, v))).collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.station.cmp(&b.0.station)));
    rows.into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (r, v))| RankRow {
            rank: i + 1,
            station: r.station.clone(),
            value: v,
            normalized: metric.normalized().and_then(|n| n.get(r)),
            imputed: r.imputed,
        })
        .collect()
}

fn werr(e: impl fmt::Display) -> MetricError {
    MetricError::Write(e.to_string())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn vulnerability_header() -> Vec<String> {
    let mut h: Vec<String> = ["station", "d", "d_pct", "s_avg", "s_avg_pct", "s_gross", "s_gross_pct"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(FLOW_VARIANTS.iter().map(|&(d, dir)| Metric::Flow(d, dir).name().to_string()));
    h.extend(["tau_entry", "tau_speed", "ridership", "baseline_entry", "baseline_speed", "T_d", "imputed"].map(String::from));
    h
}

/// One row per station with every metric, the percentages and the imputed flag.
pub fn write_vulnerability<W: Write>(out: W, records: &[VulnerabilityRecord]) -> Result<(), MetricError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(vulnerability_header()).map_err(werr)?;
    for r in records {
        let mut row = vec![
            r.station.clone(),
            cell(r.d),
            cell(r.d_pct),
            cell(r.s_avg),
            cell(r.s_avg_pct),
            cell(r.s_gross),
            cell(r.s_gross_pct),
        ];
        row.extend(r.flow.iter().map(|&v| cell(v)));
        row.extend([
            cell(r.tau_entry),
            cell(r.tau_speed),
            cell(r.ridership),
            r.baseline_entry.to_string(),
            cell(r.baseline_speed),
            r.t_d.to_string(),
            u8::from(r.imputed).to_string(),
        ]);
        w.write_record(&row).map_err(werr)?;
    }
    w.flush().map_err(werr)
}

/// Reads a table written by [`write_vulnerability`].
pub fn read_vulnerability<R: Read>(input: R) -> Result<Vec<VulnerabilityRecord>, MetricError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| MetricError::Read { line: 1, message: e.to_string() })?.clone();
    if header.iter().ne(vulnerability_header().iter().map(String::as_str)) {
        return Err(MetricError::Read { line: 1, message: "unexpected header".into() });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| MetricError::Read { line: 0, message: e.to_string() })?;
        let line = rec.position().map_or(0, |p| p.line());
        let opt = |i: usize| -> Result<Option<f64>, MetricError> {
            match &rec[i] {
                "" => Ok(None),
                v => v.parse().map(Some).map_err(|e| MetricError::Read { line, message: format!("{}: {e}", &header[i]) }),
            }
        };
        let req = |i: usize| opt(i)?.ok_or_else(|| MetricError::Read { line, message: format!("{} is empty", &header[i]) });
        let mut flow = [None; 6];
        for (k, f) in flow.iter_mut().enumerate() {
            *f = opt(7 + k)?;
        }
        out.push(VulnerabilityRecord {
            station: rec[0].to_string(),
            d: opt(1)?,
            d_pct: opt(2)?,
            s_avg: opt(3)?,
            s_avg_pct: opt(4)?,
            s_gross: opt(5)?,
            s_gross_pct: opt(6)?,
            flow,
            tau_entry: opt(13)?,
            tau_speed: opt(14)?,
            ridership: opt(15)?,
            baseline_entry: req(16)?,
            baseline_speed: opt(17)?,
            t_d: req(18)? as usize,
            imputed: match &rec[19] {
                "0" => false,
                "1" => true,
                v => return Err(MetricError::Read { line, message: format!("imputed must be 0 or 1, got `{v}`") }),
            },
        });
    }
    Ok(out)
}

/// Ranking table `rank,station,value,normalized,imputed`.
pub fn write_ranking<W: Write>(out: W, rows: &[RankRow]) -> Result<(), MetricError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "station", "value", "normalized", "imputed"]).map_err(werr)?;
    for r in rows {
        w.write_record([
            r.rank.to_string(),
            r.station.clone(),
            r.value.to_string(),
            cell(r.normalized),
            u8::from(r.imputed).to_string(),
        ])
        .map_err(werr)?;
    }
    w.flush().map_err(werr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline(id: &str, entry: f64, speed: f64, disrupted: Option<f64>) -> StationBaseline {
        StationBaseline {
            station: id.into(),
            n_undisrupted: 100,
            n_disrupted: 5,
            mean_entry: entry,
            mean_speed: Some(speed),
            mean_outward: vec![],
            mean_inward: vec![],
            disrupted_entry: disrupted,
        }
    }

    fn effect(id: &str, outcome: OutcomeKind, tau: f64) -> EffectEstimate {
        EffectEstimate { station: id.into(), outcome, tau, t_d: 3, n_unmatched: 0, n_skipped: 0, n_smoothed: 0 }
    }

    #[test]
    fn demand_loss_is_negated_entry_effect() {
        let b = [baseline("V", 795.4, 30.0, Some(700.0))];
        let r = compute_metrics(&[effect("V", OutcomeKind::Entry, -103.4)], &b, Ridership::Disrupted).unwrap();
        assert_eq!(r[0].d, Some(103.4));
        assert!((r[0].d_pct.unwrap() - 13.0).abs() < 0.01);
        assert!((r[0].d_pct.unwrap() - r[0].d.unwrap() / 795.4 * 100.0).abs() < 1e-9);
    }

    #[test]
    fn gross_speed_loss_scales_by_ridership() {
        let b = [baseline("A", 50.0, 25.0, Some(10.0))];
        let r = compute_metrics(&[effect("A", OutcomeKind::Speed, -2.0)], &b, Ridership::Disrupted).unwrap();
        assert_eq!(r[0].s_avg, Some(2.0));
        assert_eq!(r[0].s_gross, Some(20.0));
        let r = compute_metrics(&[effect("A", OutcomeKind::Speed, 0.0)], &b, Ridership::Disrupted).unwrap();
        assert_eq!(r[0].s_avg.map(f64::abs), Some(0.0));
        assert_eq!(r[0].s_gross.map(f64::abs), Some(0.0));
        let r = compute_metrics(&[effect("A", OutcomeKind::Speed, -2.0)], &b, Ridership::Baseline).unwrap();
        assert_eq!(r[0].s_gross, Some(100.0));
    }

    #[test]
    fn missing_baseline_is_an_error() {
        let err = compute_metrics(&[effect("Z", OutcomeKind::Entry, 1.0)], &[], Ridership::Disrupted).unwrap_err();
        assert_eq!(err, MetricError::MissingBaseline("Z".into()));
    }

    fn records(d: &[(&str, f64)]) -> Vec<VulnerabilityRecord> {
        let b: Vec<_> = d.iter().map(|(id, _)| baseline(id, 10.0, 20.0, Some(10.0))).collect();
        let e: Vec<_> = d.iter().map(|&(id, v)| effect(id, OutcomeKind::Entry, -v)).collect();
        compute_metrics(&e, &b, Ridership::Disrupted).unwrap()
    }

    #[test]
    fn ranking_sorts_descending_with_id_ties() {
        let r = records(&[("A", 5.0), ("B", 9.0), ("C", 1.0)]);
        let top: Vec<_> = rank_stations(&r, Metric::D, 2).into_iter().map(|x| x.station).collect();
        assert_eq!(top, vec!["B", "A"]);
        assert_eq!(rank_stations(&r, Metric::D, 10).len(), 3);
        let r = records(&[("B", 2.0), ("A", 2.0)]);
        let top: Vec<_> = rank_stations(&r, Metric::D, 2).into_iter().map(|x| x.station).collect();
        assert_eq!(top, vec!["A", "B"]);
    }

    #[test]
    fn unknown_metric_lists_valid_names() {
        let err = "speed".parse::<Metric>().unwrap_err().to_string();
        assert!(err.contains("d_pct") && err.contains("f_KL_in"));
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
    }

    #[test]
    fn vulnerability_table_round_trips() {
        let mut r = records(&[("A", 5.0), ("B", 0.1 + 0.2)]);
        r[1].imputed = true;
        r[0].flow[3] = Some(0.25);
        let mut buf = Vec::new();
        write_vulnerability(&mut buf, &r).unwrap();
        assert_eq!(read_vulnerability(buf.as_slice()).unwrap(), r);
    }
}
