//! Average treatment effects per station for scalar outcomes and for flow
//! distributions.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::MatchSet;
use crate::panel::{flow_to_dense, Panel, StationBaseline};

#[derive(Debug, Error, PartialEq)]
pub enum EffectError {
    #[error("vectors differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("not a probability vector: {0}")]
    NotDistribution(String),
    #[error("undefined divergence: reference is zero where the distribution is positive")]
    UndefinedDivergence,
    #[error("smoothing must be non-negative, got {0}")]
    BadEpsilon(f64),
    #[error("unknown outcome `{0}`")]
    UnknownOutcome(String),
    #[error("write failed: {0}")]
    Write(String),
    #[error("effects file line {line}: {message}")]
    Read { line: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Outward,
    Inward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Distance {
    Euclidean,
    Hellinger,
    KullbackLeibler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeKind {
    Entry,
    Speed,
    Flow(Distance, Direction),
}

impl OutcomeKind {
    pub const ALL: [OutcomeKind; 8] = [
        OutcomeKind::Entry,
        OutcomeKind::Speed,
        OutcomeKind::Flow(Distance::Euclidean, Direction::Outward),
        OutcomeKind::Flow(Distance::Euclidean, Direction::Inward),
        OutcomeKind::Flow(Distance::Hellinger, Direction::Outward),
        OutcomeKind::Flow(Distance::Hellinger, Direction::Inward),
        OutcomeKind::Flow(Distance::KullbackLeibler, Direction::Outward),
        OutcomeKind::Flow(Distance::KullbackLeibler, Direction::Inward),
    ];

    pub fn name(self) -> &'static str {
        use Direction::*;
        use Distance::*;
        match self {
            OutcomeKind::Entry => "entry",
            OutcomeKind::Speed => "speed",
            OutcomeKind::Flow(Euclidean, Outward) => "flow_ED_out",
            OutcomeKind::Flow(Euclidean, Inward) => "flow_ED_in",
            OutcomeKind::Flow(Hellinger, Outward) => "flow_HD_out",
            OutcomeKind::Flow(Hellinger, Inward) => "flow_HD_in",
            OutcomeKind::Flow(KullbackLeibler, Outward) => "flow_KL_out",
            OutcomeKind::Flow(KullbackLeibler, Inward) => "flow_KL_in",
        }
    }
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OutcomeKind {
    type Err = EffectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| EffectError::UnknownOutcome(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub station: String,
    pub outcome: OutcomeKind,
    pub tau: f64,
    /// Treated units averaged over.
    pub t_d: usize,
    /// Treated units of the station without any matched control.
    pub n_unmatched: usize,
    /// Flow units skipped because both vectors were empty (HD/KL only).
    pub n_skipped: usize,
    /// Flow units where one empty side had to be smoothed.
    pub n_smoothed: usize,
}

pub fn dist_euclidean(a: &[f64], b: &[f64]) -> Result<f64, EffectError> {
    if a.len() != b.len() {
        return Err(EffectError::Length(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

fn check_distribution(p: &[f64]) -> Result<(), EffectError> {
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(EffectError::NotDistribution(format!("entry {v}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(EffectError::NotDistribution(format!("sums to {s}")));
    }
    Ok(())
}

/// Hellinger distance with the `1/sqrt(2)` prefactor, so it lies in `[0, 1]`.
pub fn dist_hellinger(p1: &[f64], p0: &[f64]) -> Result<f64, EffectError> {
    if p1.len() != p0.len() {
        return Err(EffectError::Length(p1.len(), p0.len()));
    }
    check_distribution(p1)?;
    check_distribution(p0)?;
    let s: f64 = p1.iter().zip(p0).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    Ok((s.sqrt() / std::f64::consts::SQRT_2).min(1.0))
}

/// Relative entropy `sum p1 ln(p1 / p0)` in nats.
pub fn dist_kl(p1: &[f64], p0: &[f64]) -> Result<f64, EffectError> {
    if p1.len() != p0.len() {
        return Err(EffectError::Length(p1.len(), p0.len()));
    }
    check_distribution(p1)?;
    check_distribution(p0)?;
    let mut d = 0.0;
    for (&a, &b) in p1.iter().zip(p0) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Err(EffectError::UndefinedDivergence);
        }
        d += a * (a / b).ln();
    }
    Ok(d.max(0.0))
}

/// Adds `eps` to every cell and rescales to sum 1; `None` if the total is 0.
pub fn normalize(counts: &[f64], eps: f64) -> Option<Vec<f64>> {
    let total: f64 = counts.iter().map(|c| c + eps).sum();
    (total > 0.0).then(|| counts.iter().map(|c| (c + eps) / total).collect())
}

/// Outcome of comparing one treated flow vector with its composite control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowDistance {
    Value(f64),
    /// One side was empty and was smoothed before comparison.
    Smoothed(f64),
    /// Both sides empty; no distribution to compare.
    Skipped,
}

/// Smoothing applied to empty flow vectors under Hellinger distance.
pub const EMPTY_FLOW_EPS: f64 = 1e-6;

/// Distance between raw count vectors. KL smooths both sides by `kl_eps`
/// before normalising; Hellinger smooths only an empty side.
pub fn flow_distance(kind: Distance, r1: &[f64], r0: &[f64], kl_eps: f64) -> Result<FlowDistance, EffectError> {
    if r1.len() != r0.len() {
        return Err(EffectError::Length(r1.len(), r0.len()));
    }
    let empty1 = r1.iter().all(|&v| v == 0.0);
    let empty0 = r0.iter().all(|&v| v == 0.0);
    match kind {
        Distance::Euclidean => Ok(FlowDistance::Value(dist_euclidean(r1, r0)?)),
        _ if empty1 && empty0 => Ok(FlowDistance::Skipped),
        Distance::Hellinger => {
            let p1 = normalize(r1, if empty1 { EMPTY_FLOW_EPS } else { 0.0 }).expect("non-empty");
            let p0 = normalize(r0, if empty0 { EMPTY_FLOW_EPS } else { 0.0 }).expect("non-empty");
            let d = dist_hellinger(&p1, &p0)?;
            Ok(if empty1 || empty0 { FlowDistance::Smoothed(d) } else { FlowDistance::Value(d) })
        }
        Distance::KullbackLeibler => {
            if !(kl_eps >= 0.0) {
                return Err(EffectError::BadEpsilon(kl_eps));
            }
            let (Some(p1), Some(p0)) = (normalize(r1, kl_eps), normalize(r0, kl_eps)) else {
                return Err(EffectError::UndefinedDivergence);
            };
            Ok(FlowDistance::Value(dist_kl(&p1, &p0)?))
        }
    }
}

fn per_station<F>(panel: &Panel, set: &MatchSet, outcome: OutcomeKind, unit_effect: F) -> Result<Vec<EffectEstimate>, EffectError>
where
    F: Fn(usize, &[usize]) -> Result<Option<FlowDistance>, EffectError> + Sync,
{
    let n = panel.n_stations();
    let mut by_station: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, m) in set.matched.iter().enumerate() {
        by_station[panel.station_of(m.treated)].push(i);
    }
    let mut unmatched = vec![0usize; n];
    for &u in &set.unmatchable {
        unmatched[panel.station_of(u)] += 1;
    }
    let rows: Vec<Option<EffectEstimate>> = (0..n)
        .into_par_iter()
        .map(|si| {
            let (mut sum, mut t_d, mut skipped, mut smoothed) = (0.0, 0usize, 0usize, 0usize);
            for &i in &by_station[si] {
                let m = &set.matched[i];
                match unit_effect(m.treated, &m.controls)? {
                    Some(FlowDistance::Value(v)) => {
                        sum += v;
                        t_d += 1;
                    }
                    Some(FlowDistance::Smoothed(v)) => {
                        sum += v;
                        t_d += 1;
                        smoothed += 1;
                    }
                    Some(FlowDistance::Skipped) => skipped += 1,
                    None => {}
                }
            }
            Ok((t_d > 0).then(|| EffectEstimate {
                station: panel.station_ids[si].clone(),
                outcome,
                tau: sum / t_d as f64,
                t_d,
                n_unmatched: unmatched[si],
                n_skipped: skipped,
                n_smoothed: smoothed,
            }))
        })
        .collect::<Result<_, EffectError>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn scalar(panel: &Panel, outcome: OutcomeKind, u: usize) -> Option<f64> {
    match outcome {
        OutcomeKind::Entry => Some(panel.entry[u] as f64),
        OutcomeKind::Speed => panel.speed[u],
        OutcomeKind::Flow(..) => None,
    }
}

/// Treated outcome minus the mean of its matched controls, for one unit.
pub fn unit_effect(panel: &Panel, outcome: OutcomeKind, treated: usize, controls: &[usize]) -> Option<f64> {
    let y1 = scalar(panel, outcome, treated)?;
    let ys: Vec<f64> = controls.iter().map(|&c| scalar(panel, outcome, c)).collect::<Option<_>>()?;
    if ys.is_empty() {
        return None;
    }
    Some(y1 - ys.iter().sum::<f64>() / ys.len() as f64)
}

/// Station ATE for entry or speed; stations without a matched treated unit
/// get no estimate.
pub fn ate_scalar(panel: &Panel, set: &MatchSet, outcome: OutcomeKind) -> Result<Vec<EffectEstimate>, EffectError> {
    if matches!(outcome, OutcomeKind::Flow(..)) {
        return Err(EffectError::UnknownOutcome(format!("{outcome} is not scalar")));
    }
    per_station(panel, set, outcome, |t, c| Ok(unit_effect(panel, outcome, t, c).map(FlowDistance::Value)))
}

/// Elementwise mean of the controls' dense flow vectors.
pub fn composite_flow(panel: &Panel, direction: Direction, controls: &[usize]) -> Vec<f64> {
    let n = panel.n_stations();
    let mut v = vec![0.0; n];
    for &c in controls {
        let f = match direction {
            Direction::Outward => &panel.outward[c],
            Direction::Inward => &panel.inward[c],
        };
        for &(k, cnt) in f {
            v[k as usize] += cnt as f64;
        }
    }
    let m = controls.len() as f64;
    v.iter_mut().for_each(|x| *x /= m);
    v
}

/// Station ATE on flow distributions: mean distance between each treated
/// flow vector and its composite control.
pub fn ate_flow(
    panel: &Panel,
    set: &MatchSet,
    direction: Direction,
    distance: Distance,
    kl_eps: f64,
) -> Result<Vec<EffectEstimate>, EffectError> {
    let n = panel.n_stations();
    per_station(panel, set, OutcomeKind::Flow(distance, direction), |t, c| {
        let r1 = match direction {
            Direction::Outward => flow_to_dense(&panel.outward[t], n),
            Direction::Inward => flow_to_dense(&panel.inward[t], n),
        };
        let r0 = composite_flow(panel, direction, c);
        flow_distance(distance, &r1, &r0, kl_eps).map(Some)
    })
}

/// Every outcome: entry on `entry_set`, speed on `speed_set`, all six flow
/// variants on `entry_set`.
pub fn estimate_all(
    panel: &Panel,
    entry_set: &MatchSet,
    speed_set: &MatchSet,
    kl_eps: f64,
) -> Result<Vec<EffectEstimate>, EffectError> {
    let mut out = ate_scalar(panel, entry_set, OutcomeKind::Entry)?;
    out.extend(ate_scalar(panel, speed_set, OutcomeKind::Speed)?);
    for kind in &OutcomeKind::ALL[2..] {
        if let OutcomeKind::Flow(d, dir) = *kind {
            out.extend(ate_flow(panel, entry_set, dir, d, kl_eps)?);
        }
    }
    Ok(out)
}

/// A pooled mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pooled {
    pub tau: f64,
    pub se: f64,
    pub n: usize,
}

fn pooled(values: &[f64]) -> Pooled {
    let n = values.len();
    if n == 0 {
        return Pooled { tau: f64::NAN, se: f64::NAN, n: 0 };
    }
    let m = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    Pooled { tau: m, se: (var / n as f64).sqrt(), n }
}

/// Mean unit effect over every matched treated unit, all stations pooled.
pub fn pooled_effect(panel: &Panel, set: &MatchSet, outcome: OutcomeKind) -> Pooled {
    let v: Vec<f64> = set.matched.iter().filter_map(|m| unit_effect(panel, outcome, m.treated, &m.controls)).collect();
    pooled(&v)
}

/// Pre-post comparison without matching: each treated unit's entry minus the
/// undisrupted mean entry of its station, pooled over all treated units.
pub fn naive_difference(panel: &Panel, baselines: &[StationBaseline]) -> Pooled {
    let v: Vec<f64> = panel
        .treated_units()
        .into_iter()
        .map(|u| panel.entry[u] as f64 - baselines[panel.station_of(u)].mean_entry)
        .collect();
    pooled(&v)
}

fn werr(e: impl fmt::Display) -> EffectError {
    EffectError::Write(e.to_string())
}

/// Effects table `station,outcome,tau,T_d,n_unmatched`.
pub fn write_effects<W: Write>(out: W, effects: &[EffectEstimate]) -> Result<(), EffectError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["station", "outcome", "tau", "T_d", "n_unmatched"]).map_err(werr)?;
    for e in effects {
        w.write_record([
            e.station.clone(),
            e.outcome.to_string(),
            e.tau.to_string(),
            e.t_d.to_string(),
            e.n_unmatched.to_string(),
        ])
        .map_err(werr)?;
    }
    w.flush().map_err(werr)
}

/// Reads a table written by [`write_effects`]; skip and smoothing counts are
/// not stored and come back as 0.
pub fn read_effects<R: Read>(input: R) -> Result<Vec<EffectEstimate>, EffectError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| EffectError::Read { line: 1, message: e.to_string() })?.clone();
    if header.iter().ne(["station", "outcome", "tau", "T_d", "n_unmatched"]) {
        return Err(EffectError::Read { line: 1, message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()) });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| EffectError::Read { line: 0, message: e.to_string() })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |m: String| EffectError::Read { line, message: m };
        let num = |i: usize| rec[i].parse::<usize>().map_err(|e| bad(format!("column {i}: {e}")));
        out.push(EffectEstimate {
            station: rec[0].to_string(),
            outcome: rec[1].parse()?,
            tau: rec[2].parse().map_err(|e| bad(format!("tau: {e}")))?,
            t_d: num(3)?,
            n_unmatched: num(4)?,
            n_skipped: 0,
            n_smoothed: 0,
        });
    }
    Ok(out)
}
