//! Pipeline stages. Each stage reads what the previous stage wrote, so a
//! stage run alone behaves the same as inside `all`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use chrono::NaiveDate;
use metrovuln_core::effects::{estimate_all, naive_difference, pooled_effect, read_effects, write_effects};
use metrovuln_core::imputation::{impute_missing, station_features, write_report};
use metrovuln_core::ingest::{parse_incidents, parse_static, parse_trips, WeatherGrid};
use metrovuln_core::matching::{
    balance_report, match_set_from_audit, match_units, read_audit, write_audit, write_balance, OutcomeRequirement,
};
use metrovuln_core::metrics::{compute_metrics, rank_stations, read_vulnerability, write_ranking, write_vulnerability};
use metrovuln_core::panel::{
    assign_treatment, baseline_stats, build_study_units, daily_stats, write_flows_csv, write_panel_csv,
};
use metrovuln_core::propensity::{
    common_support, fit_propensity, forward_select, predict_scores, read_scores, write_coefficients, write_histogram, write_scores,
    SupportMode,
};
use metrovuln_core::synthgen::{generate_scenario, write_scenario};
use metrovuln_core::{Formula, Metric, NetworkGraph, OutcomeKind, Panel, StationAttrs, StudyWindow};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::geojson::feature_collection;

pub const PANEL_CSV: &str = "panel.csv";
pub const FLOWS_CSV: &str = "flows.csv";
pub const REJECTS_CSV: &str = "rejects.csv";
pub const PANEL_SUMMARY: &str = "panel_summary.json";
pub const SCORES_CSV: &str = "propensity_scores.csv";
pub const COEF_CSV: &str = "propensity_coefficients.csv";
pub const HIST_CSV: &str = "score_histogram.csv";
pub const DIAGNOSTICS_JSON: &str = "propensity_diagnostics.json";
pub const AUDIT_CSV: &str = "match_audit.csv";
pub const AUDIT_SPEED_CSV: &str = "match_audit_speed.csv";
pub const BALANCE_CSV: &str = "balance.csv";
pub const EFFECTS_CSV: &str = "effects.csv";
pub const EFFECTS_SUMMARY: &str = "effects_summary.json";
pub const VULNERABILITY_CSV: &str = "vulnerability.csv";
pub const IMPUTATION_CSV: &str = "imputation_report.csv";
pub const GEOJSON: &str = "vulnerability.geojson";
pub const RUN_LOG: &str = "run.log";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Panel,
    Propensity,
    Match,
    Estimate,
    Impute,
    Report,
}

impl Stage {
    pub const PIPELINE: [Stage; 6] =
        [Stage::Panel, Stage::Propensity, Stage::Match, Stage::Estimate, Stage::Impute, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Panel => "panel",
            Stage::Propensity => "propensity",
            Stage::Match => "match",
            Stage::Estimate => "estimate",
            Stage::Impute => "impute",
            Stage::Report => "report",
        }
    }
}

/// An input or upstream artifact that is not there; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("missing {path}; run `{producer}` first")]
pub struct MissingArtifact {
    pub path: PathBuf,
    pub producer: &'static str,
}

/// Counts and warnings a stage reports to the run log.
#[derive(Debug, Default, Serialize)]
pub struct StageReport {
    pub counts: BTreeMap<String, Value>,
    pub warnings: Vec<String>,
}

impl StageReport {
    fn count(&mut self, key: &str, v: impl Into<Value>) {
        self.counts.insert(key.to_string(), v.into());
    }
}

/// Everything derived from the raw inputs.
pub struct Loaded {
    pub stations: Vec<StationAttrs>,
    pub graph: NetworkGraph,
    pub panel: Panel,
    pub counts: BTreeMap<String, Value>,
    pub rejects: Vec<(&'static str, u64, String)>,
}

/// Holds the config and the panel once built, so `all` parses inputs once.
pub struct Session {
    pub cfg: PipelineConfig,
    loaded: Option<Loaded>,
}

fn require(path: &Path, producer: &'static str) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(MissingArtifact { path: path.to_path_buf(), producer }.into())
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).with_context(|| format!("cannot create {}", path.display()))
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    File::open(path).map(BufReader::new).with_context(|| format!("cannot open {}", path.display()))
}

fn write_json(path: &Path, v: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        v.into()
    } else {
        Value::Null
    }
}

impl Session {
    pub fn new(cfg: PipelineConfig) -> Self {
        Self { cfg, loaded: None }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    /// Runs one stage and appends its record to the run log.
    pub fn run(&mut self, stage: Stage) -> anyhow::Result<StageReport> {
        std::fs::create_dir_all(&self.cfg.out).with_context(|| format!("cannot create {}", self.cfg.out.display()))?;
        let start = Instant::now();
        let report = match stage {
            Stage::Generate => self.generate(),
            Stage::Panel => self.panel(),
            Stage::Propensity => self.propensity(),
            Stage::Match => self.matching(),
            Stage::Estimate => self.estimate(),
            Stage::Impute => self.impute(),
            Stage::Report => self.report(),
        }
        .with_context(|| format!("stage `{}` failed", stage.name()))?;
        let line = json!({
            "stage": stage.name(),
            "duration_ms": start.elapsed().as_millis() as u64,
            "counts": report.counts,
            "warnings": report.warnings,
        });
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.out(RUN_LOG))
            .with_context(|| format!("cannot open {}", self.out(RUN_LOG).display()))?;
        writeln!(log, "{line}")?;
        Ok(report)
    }

    /// The analysis stages in order; `generate` is not included.
    pub fn run_all(&mut self) -> anyhow::Result<()> {
        for stage in Stage::PIPELINE {
            self.run(stage)?;
        }
        Ok(())
    }

    fn generate(&mut self) -> anyhow::Result<StageReport> {
        let scenario = generate_scenario(&self.cfg.scenario_config())?;
        write_scenario(&scenario, &self.cfg.inputs.dir)?;
        self.loaded = None;
        let m = &scenario.manifest;
        let mut r = StageReport::default();
        r.count("stations", m.stations.len());
        r.count("trips", m.trips);
        r.count("incidents", m.incidents.len());
        r.count("short_incidents", m.short_incidents);
        r.count("treated_units", m.treated_units);
        r.count("treatment_rate", m.treatment_rate());
        Ok(r)
    }

    /// Parses the inputs and builds the panel, once per session.
    pub fn load(&mut self) -> anyhow::Result<&Loaded> {
        if self.loaded.is_none() {
            self.loaded = Some(self.build()?);
        }
        Ok(self.loaded.as_ref().expect("just built"))
    }

    fn build(&self) -> anyhow::Result<Loaded> {
        let inp = &self.cfg.inputs;
        let paths = [inp.stations(), inp.edges(), inp.weather(), inp.incidents(), inp.trips()];
        for p in &paths {
            require(p, "generate` or supply the input table")?;
        }
        let stat = parse_static(&paths[0], &paths[1], &paths[2])?;
        let stations = stat.stations.records;
        let ids: Vec<String> = stations.iter().map(|s| s.id.clone()).collect();
        let id_set: HashSet<String> = ids.iter().cloned().collect();
        let trips = parse_trips(&paths[4], &id_set)?;
        let incidents = parse_incidents(&paths[3], &id_set, self.cfg.threshold_min)?;

        let days: Vec<NaiveDate> = stat
            .weather
            .records
            .iter()
            .map(|w| w.slot_start.date())
            .chain(trips.records.iter().map(|t| t.entry_ts.date()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if days.is_empty() {
            bail!("no service days found in weather or trips");
        }
        let window = StudyWindow::new(days, self.cfg.interval_min)?;
        let graph = NetworkGraph::new(&ids, &stat.edges)?;
        let weather = WeatherGrid::build(&stat.weather.records, &ids, &window)?;
        let treatment = assign_treatment(&incidents.records, &ids, &window)?;
        let panel = build_study_units(&trips.records, &treatment, &weather, &stations, &graph, &window)?;

        let mut counts = BTreeMap::new();
        let mut put = |k: &str, v: Value| {
            counts.insert(k.to_string(), v);
        };
        put("stations", stations.len().into());
        put("days", window.n_days().into());
        put("slots_per_day", window.slots_per_day().into());
        put("units", panel.n_units().into());
        put("treated_units", panel.treated_units().len().into());
        put("trips_accepted", trips.records.len().into());
        put("trips_rejected", trips.rejects.len().into());
        put("trips_counted", panel.stats.trips_counted.into());
        put("trips_outside_window", panel.stats.trips_outside_window.into());
        put("entries_total", panel.entry.iter().map(|&e| e as u64).sum::<u64>().into());
        put("incidents_accepted", incidents.records.len().into());
        put("incidents_filtered", incidents.filtered.into());
        put("incidents_rejected", incidents.rejects.len().into());
        put("weather_gaps_filled", weather.gaps.into());
        put("disconnected_pairs", graph.disconnected_pairs().into());
        let mut rejects = Vec::new();
        for (file, list) in [
            ("stations", &stat.stations.rejects),
            ("weather", &stat.weather.rejects),
            ("incidents", &incidents.rejects),
            ("trips", &trips.rejects),
        ] {
            rejects.extend(list.iter().map(|r| (file, r.line, r.reason.clone())));
        }
        Ok(Loaded { stations, graph, panel, counts, rejects })
    }

    fn panel(&mut self) -> anyhow::Result<StageReport> {
        let (panel_path, flows_path, rej_path, sum_path) =
            (self.out(PANEL_CSV), self.out(FLOWS_CSV), self.out(REJECTS_CSV), self.out(PANEL_SUMMARY));
        let l = self.load()?;
        write_panel_csv(create(&panel_path)?, &l.panel)?;
        write_flows_csv(create(&flows_path)?, &l.panel)?;
        let mut w = csv::Writer::from_writer(create(&rej_path)?);
        w.write_record(["file", "line", "reason"])?;
        for (f, line, reason) in &l.rejects {
            w.write_record([f, &line.to_string().as_str(), &reason.as_str()])?;
        }
        w.flush()?;
        write_json(&sum_path, &l.counts)?;
        let mut r = StageReport { counts: l.counts.clone(), warnings: Vec::new() };
        if !l.rejects.is_empty() {
            r.warnings.push(format!("{} input rows rejected, see {REJECTS_CSV}", l.rejects.len()));
        }
        let dis = l.graph.disconnected_pairs();
        if dis > 0 {
            r.warnings.push(format!("{dis} station pairs are not connected"));
        }
        Ok(r)
    }

    fn propensity(&mut self) -> anyhow::Result<StageReport> {
        require(&self.out(PANEL_CSV), "panel")?;
        let (mut formula, irls, select) = (self.cfg.formula.clone(), self.cfg.irls, self.cfg.select);
        let paths = (self.out(SCORES_CSV), self.out(COEF_CSV), self.out(HIST_CSV), self.out(DIAGNOSTICS_JSON));
        let l = self.load()?;
        let mut selection_steps = Vec::new();
        if select.enabled {
            let labels = l.panel.labels();
            let chosen = forward_select(
                &l.panel.covariates,
                labels,
                &Formula::intercept_only(),
                &formula.terms,
                select.alpha,
                &irls,
            )?;
            formula = chosen.formula;
            selection_steps = chosen.steps;
        }
        let (model, diag) = fit_propensity(&l.panel, &formula, &irls)?;
        let scores = predict_scores(&model, &l.panel.covariates)?;
        let support = common_support(&scores, l.panel.labels(), 20);
        write_scores(create(&paths.0)?, &l.panel, &scores)?;
        write_coefficients(create(&paths.1)?, &diag)?;
        write_histogram(create(&paths.2)?, &support)?;
        write_json(
            &paths.3,
            &json!({
                "formula": formula.to_string(),
                "selection": selection_steps,
                "dropped_columns": model.dropped,
                "diagnostics": diag,
                "control_score_min": support.control_min,
                "control_score_max": support.control_max,
                "out_of_support": support.out_of_support.len(),
            }),
        )?;
        let mut r = StageReport::default();
        r.count("auc", finite(diag.auc));
        r.count("mcfadden_r2", finite(diag.mcfadden_r2));
        r.count("iterations", diag.iterations);
        r.count("converged", diag.converged);
        r.count("out_of_support", support.out_of_support.len());
        if !support.out_of_support.is_empty() {
            r.warnings.push(format!(
                "{} treated units ({:.1}%) lie outside the control score range",
                support.out_of_support.len(),
                100.0 * support.out_of_support_fraction()
            ));
        }
        if !model.dropped.is_empty() {
            r.warnings.push(format!("dropped constant or duplicate columns: {}", model.dropped.join(", ")));
        }
        Ok(r)
    }

    fn matching(&mut self) -> anyhow::Result<StageReport> {
        let scores_path = self.out(SCORES_CSV);
        require(&scores_path, "propensity")?;
        let (mcfg, support_mode) = (self.cfg.matching, self.cfg.support);
        let paths = (self.out(AUDIT_CSV), self.out(AUDIT_SPEED_CSV), self.out(BALANCE_CSV));
        let l = self.load()?;
        let panel = &l.panel;
        let scores = read_scores(open(&scores_path)?, panel)?;
        let mut entry_set = match_units(panel, &scores, &mcfg, OutcomeRequirement::Any)?;
        let mut speed_set = match_units(panel, &scores, &mcfg, OutcomeRequirement::Speed)?;
        let mut r = StageReport::default();
        if support_mode == SupportMode::Trim {
            let out: BTreeSet<usize> = common_support(&scores, panel.labels(), 20).out_of_support.into_iter().collect();
            let dropped = entry_set.drop_treated(&out);
            speed_set.drop_treated(&out);
            r.count("trimmed", dropped);
        }
        write_audit(create(&paths.0)?, panel, &entry_set)?;
        write_audit(create(&paths.1)?, panel, &speed_set)?;
        let balance = balance_report(panel, &scores, &entry_set)?;
        write_balance(create(&paths.2)?, &balance)?;
        let max_smd = balance.rows.iter().filter_map(|b| b.smd_after).fold(0.0f64, |a, v| a.max(v.abs()));
        r.count("matched", entry_set.matched.len());
        r.count("matched_speed", speed_set.matched.len());
        r.count("unmatchable", entry_set.unmatchable.len());
        r.count("unmatchable_speed", speed_set.unmatchable.len());
        r.count("short", entry_set.short.len());
        r.count("balance_improvement", finite(balance.improvement));
        r.count("max_smd_after", finite(max_smd));
        for b in balance.rows.iter().filter(|b| b.degenerate) {
            r.warnings.push(format!("covariate `{}` has zero variance before matching", b.covariate));
        }
        if !entry_set.unmatchable.is_empty() {
            r.warnings.push(format!("{} treated units have no eligible control", entry_set.unmatchable.len()));
        }
        Ok(r)
    }

    fn estimate(&mut self) -> anyhow::Result<StageReport> {
        let (a, b) = (self.out(AUDIT_CSV), self.out(AUDIT_SPEED_CSV));
        require(&a, "match")?;
        require(&b, "match")?;
        let (m, kl_eps) = (self.cfg.matching.m, self.cfg.kl_eps);
        let (eff_path, sum_path) = (self.out(EFFECTS_CSV), self.out(EFFECTS_SUMMARY));
        let l = self.load()?;
        let panel = &l.panel;
        let restore = |path: &Path| -> anyhow::Result<_> {
            let mut set = match_set_from_audit(panel, &read_audit(open(path)?)?, m)?;
            let matched: HashSet<usize> = set.matched.iter().map(|u| u.treated).collect();
            set.unmatchable = panel.treated_units().into_iter().filter(|u| !matched.contains(u)).collect();
            Ok(set)
        };
        let entry_set = restore(&a)?;
        let speed_set = restore(&b)?;
        let effects = estimate_all(panel, &entry_set, &speed_set, kl_eps)?;
        write_effects(create(&eff_path)?, &effects)?;
        let baselines = baseline_stats(panel)?;
        let pooled_entry = pooled_effect(panel, &entry_set, OutcomeKind::Entry);
        let pooled_speed = pooled_effect(panel, &speed_set, OutcomeKind::Speed);
        let naive = naive_difference(panel, &baselines);
        write_json(
            &sum_path,
            &json!({ "pooled_entry": pooled_entry, "pooled_speed": pooled_speed, "naive_entry": naive }),
        )?;
        let mut r = StageReport::default();
        r.count("estimates", effects.len());
        r.count("pooled_entry", finite(pooled_entry.tau));
        r.count("pooled_speed", finite(pooled_speed.tau));
        r.count("naive_entry", finite(naive.tau));
        r.count("flow_units_skipped", effects.iter().map(|e| e.n_skipped).sum::<usize>());
        let smoothed: usize = effects.iter().map(|e| e.n_smoothed).sum();
        if smoothed > 0 {
            r.warnings.push(format!("{smoothed} flow units needed smoothing of an empty distribution"));
        }
        Ok(r)
    }

    fn impute(&mut self) -> anyhow::Result<StageReport> {
        let eff_path = self.out(EFFECTS_CSV);
        require(&eff_path, "estimate")?;
        let (ridership, icfg) = (self.cfg.ridership, self.cfg.impute_config());
        let (vul_path, rep_path) = (self.out(VULNERABILITY_CSV), self.out(IMPUTATION_CSV));
        let l = self.load()?;
        let effects = read_effects(open(&eff_path)?)?;
        let baselines = baseline_stats(&l.panel)?;
        let mut records = compute_metrics(&effects, &baselines, ridership)?;
        let features = station_features(&l.stations, &daily_stats(&l.panel), &l.graph);
        let report = impute_missing(&mut records, &features, &icfg)?;
        write_vulnerability(create(&vul_path)?, &records)?;
        write_report(create(&rep_path)?, &report)?;
        let mut r = StageReport::default();
        r.count("stations", records.len());
        r.count("imputed", records.iter().filter(|x| x.imputed).count());
        r.count("missing", records.iter().filter(|x| x.d.is_none()).count());
        for m in &report.metrics {
            if let Some(oob) = m.oob_r2 {
                r.count(&format!("oob_r2_{}", m.metric.name()), finite(oob));
            }
        }
        if let Some(why) = report.refused {
            r.warnings.push(format!("imputation refused: {why}"));
        }
        Ok(r)
    }

    fn report(&mut self) -> anyhow::Result<StageReport> {
        let vul_path = self.out(VULNERABILITY_CSV);
        require(&vul_path, "impute")?;
        let stations_path = self.cfg.inputs.stations();
        require(&stations_path, "generate` or supply the input table")?;
        let records = read_vulnerability(open(&vul_path)?)?;
        let stations = metrovuln_core::ingest::read_stations(open(&stations_path)?)?.records;
        let mut r = StageReport::default();
        for metric in Metric::ALL {
            let rows = rank_stations(&records, metric, self.cfg.top_k);
            write_ranking(create(&self.out(&format!("topk_{}.csv", metric.name())))?, &rows)?;
        }
        let (fc, skipped) = feature_collection(&records, &stations);
        let mut text = serde_json::to_string(&fc)?;
        text.push('\n');
        std::fs::write(self.out(GEOJSON), text).context("cannot write geojson")?;
        r.count("features", fc["features"].as_array().map_or(0, Vec::len));
        r.count("rankings", Metric::ALL.len());
        if skipped > 0 {
            r.count("features_skipped", skipped);
            r.warnings.push(format!("{skipped} stations lack coordinates and were left out of the map"));
        }
        Ok(r)
    }
}
