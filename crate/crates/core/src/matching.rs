//! Propensity-score matching within a station and interval across days.
//!
//! A control candidate for treated unit `(station, day, slot)` is any
//! undisrupted unit `(station, day', slot)` with `day' != day` whose required
//! outcome is observed.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::Panel;
use crate::time::{format_date, SlotId};

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("M must be at least 1")]
    BadCount,
    #[error("caliper must be positive, got {0}")]
    BadCaliper(f64),
    #[error("subclass count must be at least 1")]
    BadSubclassCount,
    #[error("{0} scores for {1} units")]
    ScoreLength(usize, usize),
    #[error("unknown matching method `{0}` (expected nearest_neighbour or subclassification)")]
    UnknownMethod(String),
    #[error("audit file: {0}")]
    Audit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    #[default]
    NearestNeighbour,
    Subclassification,
}

impl FromStr for MatchMethod {
    type Err = MatchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nearest_neighbour" | "nn" => Ok(Self::NearestNeighbour),
            "subclassification" | "subclass" => Ok(Self::Subclassification),
            other => Err(MatchError::UnknownMethod(other.to_string())),
        }
    }
}

/// Which outcome the matched controls must have observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeRequirement {
    Any,
    /// Controls without a measurable trip speed are skipped.
    Speed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub method: MatchMethod,
    pub m: usize,
    pub with_replacement: bool,
    pub caliper: Option<f64>,
    pub subclass_count: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { method: MatchMethod::NearestNeighbour, m: 2, with_replacement: true, caliper: None, subclass_count: 10 }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        if self.m == 0 {
            return Err(MatchError::BadCount);
        }
        if let Some(c) = self.caliper {
            if !(c > 0.0) {
                return Err(MatchError::BadCaliper(c));
            }
        }
        if self.subclass_count == 0 {
            return Err(MatchError::BadSubclassCount);
        }
        Ok(())
    }
}

/// One treated unit and its matched controls, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedUnit {
    pub treated: usize,
    pub controls: Vec<usize>,
    /// `|score(treated) - score(control)|`, aligned with `controls`.
    pub gaps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    /// Requested controls per treated unit (nearest neighbour); 0 for
    /// subclassification, where list lengths vary.
    pub m: usize,
    pub matched: Vec<MatchedUnit>,
    /// Treated units with an empty candidate pool.
    pub unmatchable: Vec<usize>,
    /// Treated units that got fewer than `m` controls.
    pub short: Vec<usize>,
    /// Subclassification strata holding treated units but no usable control.
    pub empty_strata: Vec<usize>,
}

impl MatchSet {
    /// Drops the listed treated units (e.g. outside common support).
    pub fn drop_treated(&mut self, units: &BTreeSet<usize>) -> usize {
        let before = self.matched.len();
        self.matched.retain(|m| !units.contains(&m.treated));
        self.short.retain(|u| !units.contains(u));
        before - self.matched.len()
    }

    pub fn max_controls(&self) -> usize {
        self.matched.iter().map(|m| m.controls.len()).max().unwrap_or(0)
    }

    pub fn mean_gap(&self) -> f64 {
        let (s, n) = self
            .matched
            .iter()
            .flat_map(|m| m.gaps.iter())
            .fold((0.0, 0usize), |(s, n), g| (s + g, n + 1));
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }
}

/// The candidate-pool predicate.
pub fn is_eligible(panel: &Panel, treated: usize, control: usize, need: OutcomeRequirement) -> bool {
    let (st, t) = panel.locate(treated);
    let (sc, c) = panel.locate(control);
    st == sc
        && t.slot == c.slot
        && t.day != c.day
        && !panel.is_treated(control)
        && (need == OutcomeRequirement::Any || panel.speed[control].is_some())
}

fn pool(panel: &Panel, treated: usize, need: OutcomeRequirement) -> Vec<usize> {
    let (station, id) = panel.locate(treated);
    (0..panel.window.n_days())
        .filter(|&d| d != id.day)
        .map(|d| panel.unit(station, SlotId { day: d, slot: id.slot }))
        .filter(|&u| !panel.is_treated(u) && (need == OutcomeRequirement::Any || panel.speed[u].is_some()))
        .collect()
}

fn check_scores(panel: &Panel, scores: &[f64]) -> Result<(), MatchError> {
    if scores.len() != panel.n_units() {
        return Err(MatchError::ScoreLength(scores.len(), panel.n_units()));
    }
    Ok(())
}

/// Orders candidates by score gap, then day distance, then earlier day.
fn rank_candidates(panel: &Panel, scores: &[f64], treated: usize, cands: &mut [usize]) {
    let day = panel.locate(treated).1.day;
    let key = |u: usize| {
        let d = panel.locate(u).1.day;
        ((scores[treated] - scores[u]).abs(), d.abs_diff(day), d)
    };
    cands.sort_by(|&a, &b| {
        let (ga, da, xa) = key(a);
        let (gb, db, xb) = key(b);
        ga.total_cmp(&gb).then(da.cmp(&db)).then(xa.cmp(&xb))
    });
}

fn within_caliper(scores: &[f64], treated: usize, caliper: Option<f64>) -> impl Fn(&usize) -> bool + '_ {
    move |&u| caliper.is_none_or(|c| (scores[treated] - scores[u]).abs() <= c)
}

fn finish(treated: usize, controls: Vec<usize>, scores: &[f64]) -> MatchedUnit {
    let gaps = controls.iter().map(|&c| (scores[treated] - scores[c]).abs()).collect();
    MatchedUnit { treated, controls, gaps }
}

/// Nearest-neighbour matching on the propensity score.
pub fn nn_match(
    panel: &Panel,
    scores: &[f64],
    cfg: &MatchConfig,
    need: OutcomeRequirement,
) -> Result<MatchSet, MatchError> {
    cfg.validate()?;
    check_scores(panel, scores)?;
    let treated = panel.treated_units();
    let picks: Vec<(usize, Vec<usize>)> = if cfg.with_replacement {
        treated
            .par_iter()
            .map(|&t| {
                let mut c: Vec<usize> =
                    pool(panel, t, need).into_iter().filter(within_caliper(scores, t, cfg.caliper)).collect();
                rank_candidates(panel, scores, t, &mut c);
                c.truncate(cfg.m);
                (t, c)
            })
            .collect()
    } else {
        without_replacement(panel, scores, cfg, need, &treated)
    };

    let mut set = MatchSet { m: cfg.m, ..MatchSet::default() };
    for (t, controls) in picks {
        if controls.is_empty() {
            set.unmatchable.push(t);
            continue;
        }
        if controls.len() < cfg.m {
            set.short.push(t);
        }
        set.matched.push(finish(t, controls, scores));
    }
    Ok(set)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn without_replacement(
    panel: &Panel,
    scores: &[f64],
    cfg: &MatchConfig,
    need: OutcomeRequirement,
    treated: &[usize],
) -> Vec<(usize, Vec<usize>)> {
    let pools: Vec<Vec<usize>> = treated.iter().map(|&t| pool(panel, t, need)).collect();
    let mut order: Vec<(f64, usize)> = treated
        .iter()
        .zip(&pools)
        .enumerate()
        .map(|(i, (&t, p))| {
            let mut s: Vec<f64> = p.iter().map(|&u| scores[u]).collect();
            let key = if s.is_empty() { f64::INFINITY } else { (scores[t] - median(&mut s)).abs() };
            (key, i)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(treated[a.1].cmp(&treated[b.1])));

    let mut used = BTreeSet::new();
    let mut out: Vec<(usize, Vec<usize>)> = treated.iter().map(|&t| (t, Vec::new())).collect();
    for (_, i) in order {
        let t = treated[i];
        let mut c: Vec<usize> = pools[i]
            .iter()
            .copied()
            .filter(|u| !used.contains(u))
            .filter(within_caliper(scores, t, cfg.caliper))
            .collect();
        rank_candidates(panel, scores, t, &mut c);
        c.truncate(cfg.m);
        used.extend(c.iter().copied());
        out[i].1 = c;
    }
    out
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Stratum boundaries at the treated-score quantiles `k / K`, `k = 1..K`.
pub fn stratum_bounds(scores: &[f64], labels: &[u8], k: usize) -> Vec<f64> {
    let mut t: Vec<f64> = scores.iter().zip(labels).filter(|(_, &w)| w == 1).map(|(&s, _)| s).collect();
    if t.is_empty() {
        return Vec::new();
    }
    t.sort_by(f64::total_cmp);
    (1..k).map(|j| quantile(&t, j as f64 / k as f64)).collect()
}

/// Index of the stratum holding `score`: the number of bounds strictly below it.
pub fn stratum_of(bounds: &[f64], score: f64) -> usize {
    bounds.partition_point(|&b| b < score)
}

/// Subclassification: each treated unit is paired with every eligible
/// control in its score stratum. Averaging unit effects then weights the
/// strata by their treated counts.
pub fn subclass_match(
    panel: &Panel,
    scores: &[f64],
    cfg: &MatchConfig,
    need: OutcomeRequirement,
) -> Result<MatchSet, MatchError> {
    cfg.validate()?;
    check_scores(panel, scores)?;
    let bounds = stratum_bounds(scores, panel.labels(), cfg.subclass_count);
    let mut set = MatchSet::default();
    let mut treated_in: BTreeMap<usize, usize> = BTreeMap::new();
    let mut matched_in: BTreeMap<usize, usize> = BTreeMap::new();
    for t in panel.treated_units() {
        let k = stratum_of(&bounds, scores[t]);
        *treated_in.entry(k).or_default() += 1;
        let mut c: Vec<usize> = pool(panel, t, need)
            .into_iter()
            .filter(|&u| stratum_of(&bounds, scores[u]) == k)
            .filter(within_caliper(scores, t, cfg.caliper))
            .collect();
        if c.is_empty() {
            set.unmatchable.push(t);
            continue;
        }
        *matched_in.entry(k).or_default() += 1;
        rank_candidates(panel, scores, t, &mut c);
        set.matched.push(finish(t, c, scores));
    }
    set.empty_strata = treated_in.keys().copied().filter(|k| !matched_in.contains_key(k)).collect();
    Ok(set)
}

/// Dispatches on the configured method.
pub fn match_units(
    panel: &Panel,
    scores: &[f64],
    cfg: &MatchConfig,
    need: OutcomeRequirement,
) -> Result<MatchSet, MatchError> {
    match cfg.method {
        MatchMethod::NearestNeighbour => nn_match(panel, scores, cfg, need),
        MatchMethod::Subclassification => subclass_match(panel, scores, cfg, need),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub mean_treated: f64,
    pub mean_control_before: f64,
    pub mean_control_after: f64,
    pub smd_before: Option<f64>,
    pub smd_after: Option<f64>,
    /// Zero pooled sd with unequal means.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub rows: Vec<BalanceRow>,
    /// `1 - sum|post diff| / sum|pre diff|`, as a fraction.
    pub improvement: f64,
}

fn mean_var(xs: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let v: Vec<f64> = xs.collect();
    let n = v.len();
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let m = v.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    (m, var, n)
}

/// Covariate balance before and after matching, with the score appended as
/// a covariate named `propensity_score`.
///
/// Both SMDs use the pre-match pooled sd `sqrt((var_T + var_C) / 2)`. After
/// matching, each treated unit's controls are averaged first, so every
/// matched treated unit carries equal weight.
pub fn balance_report(panel: &Panel, scores: &[f64], set: &MatchSet) -> Result<BalanceReport, MatchError> {
    check_scores(panel, scores)?;
    let mut columns: Vec<(&str, &[f64])> = panel.covariates.columns().collect();
    columns.push(("propensity_score", scores));
    let mut rows = Vec::with_capacity(columns.len());
    let (mut pre_sum, mut post_sum) = (0.0, 0.0);
    for (name, col) in columns {
        let (mt, vt, _) = mean_var(panel.treatment.iter().zip(col).filter(|(&w, _)| w == 1).map(|(_, &x)| x));
        let (mc, vc, _) = mean_var(panel.treatment.iter().zip(col).filter(|(&w, _)| w == 0).map(|(_, &x)| x));
        let (mt_after, mc_after) = if set.matched.is_empty() {
            (mt, mc)
        } else {
            let k = set.matched.len() as f64;
            let t = set.matched.iter().map(|m| col[m.treated]).sum::<f64>() / k;
            let c = set
                .matched
                .iter()
                .map(|m| m.controls.iter().map(|&u| col[u]).sum::<f64>() / m.controls.len() as f64)
                .sum::<f64>()
                / k;
            (t, c)
        };
        let sd = ((vt + vc) / 2.0).sqrt();
        let smd = |a: f64, b: f64| -> Option<f64> {
            if sd > 0.0 {
                Some((a - b).abs() / sd)
            } else if a == b {
                Some(0.0)
            } else {
                None
            }
        };
        let smd_before = smd(mt, mc);
        let smd_after = smd(mt_after, mc_after);
        pre_sum += (mt - mc).abs();
        post_sum += (mt_after - mc_after).abs();
        rows.push(BalanceRow {
            covariate: name.to_string(),
            mean_treated: mt,
            mean_control_before: mc,
            mean_control_after: mc_after,
            smd_before,
            smd_after,
            degenerate: smd_before.is_none() || smd_after.is_none(),
        });
    }
    let improvement = if pre_sum > 0.0 { 1.0 - post_sum / pre_sum } else { 0.0 };
    Ok(BalanceReport { rows, improvement })
}

fn aerr(e: impl std::fmt::Display) -> MatchError {
    MatchError::Audit(e.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "degenerate".into())
}

/// Balance table `covariate,smd_before,smd_after`.
pub fn write_balance<W: Write>(out: W, report: &BalanceReport) -> Result<(), MatchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["covariate", "smd_before", "smd_after"]).map_err(aerr)?;
    for r in &report.rows {
        w.write_record([r.covariate.clone(), opt(r.smd_before), opt(r.smd_after)]).map_err(aerr)?;
    }
    w.flush().map_err(aerr)
}

/// Match audit: `treated_station,treated_day,slot,control_day_1..M,score_gap_1..M`.
/// Rows with fewer controls leave trailing cells empty.
pub fn write_audit<W: Write>(out: W, panel: &Panel, set: &MatchSet) -> Result<(), MatchError> {
    let width = set.m.max(set.max_controls());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["treated_station".to_string(), "treated_day".into(), "slot".into()];
    header.extend((1..=width).map(|k| format!("control_day_{k}")));
    header.extend((1..=width).map(|k| format!("score_gap_{k}")));
    w.write_record(&header).map_err(aerr)?;
    let days = panel.window.days();
    for m in &set.matched {
        let (si, id) = panel.locate(m.treated);
        let mut row = vec![panel.station_ids[si].clone(), format_date(&days[id.day]), id.slot.to_string()];
        let mut control_days: Vec<String> =
            m.controls.iter().map(|&c| format_date(&days[panel.locate(c).1.day])).collect();
        control_days.resize(width, String::new());
        let mut gaps: Vec<String> = m.gaps.iter().map(f64::to_string).collect();
        gaps.resize(width, String::new());
        row.extend(control_days);
        row.extend(gaps);
        w.write_record(&row).map_err(aerr)?;
    }
    w.flush().map_err(aerr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub station: String,
    pub day: String,
    pub slot: usize,
    pub control_days: Vec<String>,
    pub gaps: Vec<f64>,
}

pub fn read_audit<R: Read>(input: R) -> Result<Vec<AuditRow>, MatchError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(aerr)?.clone();
    if header.len() < 3 || (header.len() - 3) % 2 != 0 {
        return Err(MatchError::Audit(format!("unexpected header with {} columns", header.len())));
    }
    let width = (header.len() - 3) / 2;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(aerr)?;
        let control_days: Vec<String> =
            (0..width).map(|k| rec[3 + k].to_string()).filter(|s| !s.is_empty()).collect();
        let gaps = (0..width)
            .map(|k| &rec[3 + width + k])
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(aerr))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(AuditRow {
            station: rec[0].to_string(),
            day: rec[1].to_string(),
            slot: rec[2].parse().map_err(aerr)?,
            control_days,
            gaps,
        });
    }
    Ok(out)
}

/// Restores a match set from audit rows against the same panel.
pub fn match_set_from_audit(panel: &Panel, rows: &[AuditRow], m: usize) -> Result<MatchSet, MatchError> {
    let day_of = |s: &str| -> Result<usize, MatchError> {
        let d = crate::time::parse_date(s).map_err(aerr)?;
        panel.window.day_index(d).ok_or_else(|| MatchError::Audit(format!("day {s} outside the study window")))
    };
    let mut set = MatchSet { m, ..MatchSet::default() };
    for r in rows {
        let si = panel.station_index(&r.station).ok_or_else(|| MatchError::Audit(format!("unknown station {}", r.station)))?;
        let treated = panel.unit(si, SlotId { day: day_of(&r.day)?, slot: r.slot });
        let controls = r
            .control_days
            .iter()
            .map(|d| Ok(panel.unit(si, SlotId { day: day_of(d)?, slot: r.slot })))
            .collect::<Result<Vec<_>, MatchError>>()?;
        if controls.len() < m {
            set.short.push(treated);
        }
        set.matched.push(MatchedUnit { treated, controls, gaps: r.gaps.clone() });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::fixtures::*;
    use crate::panel::{assign_treatment, build_study_units};
    use crate::IncidentRecord;
    use crate::time::parse_ts;

    /// One station, `n_days` days; unit (day, slot 16) treated on day 0.
    fn panel(n_days: u32, treated_days: &[u32]) -> Panel {
        let ids = vec!["A".to_string(), "B".to_string()];
        let stations: Vec<_> = ids.iter().map(|s| station(s)).collect();
        let w = window(n_days);
        let incidents: Vec<IncidentRecord> = treated_days
            .iter()
            .map(|d| IncidentRecord {
                station: "A".into(),
                start_ts: parse_ts(&format!("2013-10-{:02}T10:01", d + 1)).unwrap(),
                end_ts: parse_ts(&format!("2013-10-{:02}T10:12", d + 1)).unwrap(),
            })
            .collect();
        let t = assign_treatment(&incidents, &ids, &w).unwrap();
        build_study_units(&[], &t, &flat_weather(&ids, &w), &stations, &line_graph(&ids), &w).unwrap()
    }

    fn unit(p: &Panel, day: usize) -> usize {
        p.unit(0, SlotId { day, slot: 16 })
    }

    #[test]
    fn picks_two_nearest_scores() {
        let p = panel(4, &[0]);
        let mut s = vec![0.9; p.n_units()];
        s[unit(&p, 0)] = 0.50;
        s[unit(&p, 1)] = 0.48;
        s[unit(&p, 2)] = 0.55;
        s[unit(&p, 3)] = 0.10;
        let set = nn_match(&p, &s, &MatchConfig::default(), OutcomeRequirement::Any).unwrap();
        assert_eq!(set.matched.len(), 1);
        assert_eq!(set.matched[0].controls, vec![unit(&p, 1), unit(&p, 2)]);
    }

    #[test]
    fn equal_gaps_prefer_closer_day() {
        let p = panel(8, &[1]);
        let mut s = vec![0.9; p.n_units()];
        s[unit(&p, 1)] = 0.50;
        s[unit(&p, 7)] = 0.53125;
        s[unit(&p, 2)] = 0.46875;
        let cfg = MatchConfig { m: 1, ..MatchConfig::default() };
        let set = nn_match(&p, &s, &cfg, OutcomeRequirement::Any).unwrap();
        assert_eq!(set.matched[0].controls, vec![unit(&p, 2)]);
    }

    #[test]
    fn every_control_satisfies_the_pool_predicate() {
        let p = panel(6, &[0, 2, 3]);
        let s: Vec<f64> = (0..p.n_units()).map(|u| ((u * 7919) % 1000) as f64 / 1000.0).collect();
        for cfg in [
            MatchConfig::default(),
            MatchConfig { with_replacement: false, ..MatchConfig::default() },
            MatchConfig { method: MatchMethod::Subclassification, subclass_count: 2, ..MatchConfig::default() },
        ] {
            let set = match_units(&p, &s, &cfg, OutcomeRequirement::Any).unwrap();
            for m in &set.matched {
                assert!(m.controls.iter().all(|&c| is_eligible(&p, m.treated, c, OutcomeRequirement::Any)));
            }
        }
    }

    #[test]
    fn without_replacement_never_reuses_controls() {
        let p = panel(5, &[0, 1, 2]);
        let s = vec![0.5; p.n_units()];
        let cfg = MatchConfig { with_replacement: false, ..MatchConfig::default() };
        let set = nn_match(&p, &s, &cfg, OutcomeRequirement::Any).unwrap();
        let all: Vec<usize> = set.matched.iter().flat_map(|m| m.controls.iter().copied()).collect();
        let uniq: BTreeSet<usize> = all.iter().copied().collect();
        assert_eq!(all.len(), uniq.len());
        // two controls (days 3, 4) for three treated units
        assert_eq!(all.len(), 2);
        assert_eq!(set.unmatchable.len() + set.short.len(), 2);
    }

    #[test]
    fn speed_requirement_leaves_unit_unmatchable() {
        let p = panel(3, &[0]);
        let s = vec![0.5; p.n_units()];
        let set = nn_match(&p, &s, &MatchConfig::default(), OutcomeRequirement::Speed).unwrap();
        assert!(set.matched.is_empty());
        assert_eq!(set.unmatchable, vec![unit(&p, 0)]);
    }

    #[test]
    fn caliper_excludes_distant_controls() {
        let p = panel(3, &[0]);
        let mut s = vec![0.9; p.n_units()];
        s[unit(&p, 0)] = 0.1;
        let cfg = MatchConfig { caliper: Some(0.05), ..MatchConfig::default() };
        let set = nn_match(&p, &s, &cfg, OutcomeRequirement::Any).unwrap();
        assert_eq!(set.unmatchable.len(), 1);
        assert!(MatchConfig { caliper: Some(0.0), ..cfg }.validate().is_err());
        assert!(MatchConfig { m: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn equal_scores_form_one_stratum() {
        let labels = [1, 0, 1, 0, 1];
        let s = [0.3; 5];
        let b = stratum_bounds(&s, &labels, 10);
        assert!(s.iter().all(|&x| stratum_of(&b, x) == 0));
    }

    #[test]
    fn strata_bounds_are_treated_deciles() {
        let s: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let labels = vec![1u8; 101];
        let b = stratum_bounds(&s, &labels, 10);
        assert_eq!(b.len(), 9);
        for (k, v) in b.iter().enumerate() {
            assert!((v - (k + 1) as f64 / 10.0).abs() < 1e-12);
        }
        assert_eq!(stratum_of(&b, 0.05), 0);
        assert_eq!(stratum_of(&b, 0.95), 9);
    }

    #[test]
    fn identical_controls_give_full_improvement() {
        let p = panel(4, &[0]);
        let s = vec![0.5; p.n_units()];
        let set = nn_match(&p, &s, &MatchConfig::default(), OutcomeRequirement::Any).unwrap();
        let r = balance_report(&p, &s, &set).unwrap();
        // covariates of the flat fixture only differ through time of day and station
        assert!(r.improvement > 0.999, "{}", r.improvement);
        assert!(r.rows.iter().all(|row| row.smd_after.unwrap_or(0.0) < 1e-12));
    }

    #[test]
    fn full_pool_match_changes_nothing() {
        // a single station observed in a single slot: treated vs all controls
        let p = panel(4, &[0]);
        let mut s: Vec<f64> = vec![0.2; p.n_units()];
        for d in 0..4 {
            s[unit(&p, d)] = 0.1 * (d + 1) as f64;
        }
        let controls: Vec<usize> = (0..p.n_units()).filter(|&u| !p.is_treated(u)).collect();
        let set = MatchSet {
            m: controls.len(),
            matched: vec![finish(unit(&p, 0), controls, &s)],
            ..MatchSet::default()
        };
        let r = balance_report(&p, &s, &set).unwrap();
        assert!(r.improvement.abs() < 1e-12);
    }

    #[test]
    fn audit_round_trips() {
        let p = panel(5, &[0, 3]);
        let s: Vec<f64> = (0..p.n_units()).map(|u| (u % 17) as f64 / 17.0).collect();
        let set = nn_match(&p, &s, &MatchConfig::default(), OutcomeRequirement::Any).unwrap();
        let mut buf = Vec::new();
        write_audit(&mut buf, &p, &set).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("treated_station,treated_day,slot,control_day_1,control_day_2,score_gap_1,score_gap_2\n"));
        let back = match_set_from_audit(&p, &read_audit(buf.as_slice()).unwrap(), 2).unwrap();
        assert_eq!(back.matched, set.matched);
    }

    #[test]
    fn score_length_is_checked() {
        let p = panel(2, &[0]);
        assert_eq!(
            nn_match(&p, &[0.5], &MatchConfig::default(), OutcomeRequirement::Any).unwrap_err(),
            MatchError::ScoreLength(1, p.n_units())
        );
    }
}
