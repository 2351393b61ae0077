//! Contracts checked on generated scenarios, read back through ingest.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use metrovuln_core::effects::{estimate_all, Direction, Distance};
use metrovuln_core::ingest::{parse_incidents, parse_static, parse_trips, WeatherGrid, DEFAULT_THRESHOLD_MIN};
use metrovuln_core::matching::{balance_report, match_units, OutcomeRequirement};
use metrovuln_core::metrics::{compute_metrics, rank_stations, Ridership};
use metrovuln_core::panel::{assign_treatment, baseline_stats, build_study_units, flow_to_dense};
use metrovuln_core::propensity::{fit_propensity, predict_scores};
use metrovuln_core::synthgen::{generate_scenario, write_scenario, SCENARIO_FILES};
use metrovuln_core::{
    Formula, MatchConfig, Metric, NetworkGraph, Panel, ScenarioConfig, StudyWindow, TripRecord,
};
use sha2::{Digest, Sha256};

struct Loaded {
    trips: Vec<TripRecord>,
    panel: Panel,
    rejects: usize,
    rate: f64,
}

fn load(dir: &Path, cfg: &ScenarioConfig) -> Loaded {
    let st = parse_static(&dir.join("stations.csv"), &dir.join("edges.csv"), &dir.join("weather.csv")).unwrap();
    let ids: Vec<String> = st.stations.records.iter().map(|s| s.id.clone()).collect();
    let set: HashSet<String> = ids.iter().cloned().collect();
    let trips = parse_trips(&dir.join("trips.csv"), &set).unwrap();
    let incidents = parse_incidents(&dir.join("incidents.csv"), &set, DEFAULT_THRESHOLD_MIN).unwrap();
    let rejects = st.stations.rejects.len()
        + st.weather.rejects.len()
        + trips.rejects.len()
        + incidents.rejects.len();
    let days = (0..cfg.n_days).map(|d| cfg.start_date + chrono::Duration::days(d as i64)).collect();
    let window = StudyWindow::new(days, cfg.interval_min).unwrap();
    let graph = NetworkGraph::new(&ids, &st.edges).unwrap();
    let grid = WeatherGrid::build(&st.weather.records, &ids, &window).unwrap();
    let treatment = assign_treatment(&incidents.records, &ids, &window).unwrap();
    assert_eq!(treatment, assign_treatment(&incidents.records, &ids, &window).unwrap());
    let rate = treatment.treated_count() as f64 / treatment.w.len() as f64;
    let panel =
        build_study_units(&trips.records, &treatment, &grid, &st.stations.records, &graph, &window).unwrap();
    Loaded { trips: trips.records, panel, rejects, rate }
}

fn digests(dir: &Path) -> Vec<String> {
    SCENARIO_FILES
        .iter()
        .map(|f| Sha256::digest(std::fs::read(dir.join(f)).unwrap()).iter().map(|b| format!("{b:02x}")).collect())
        .collect()
}

fn small() -> ScenarioConfig {
    ScenarioConfig { n_days: 8, seed: 77, ..ScenarioConfig::default() }
}

#[test]
fn same_seed_writes_identical_files() {
    let cfg = small();
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_scenario(&generate_scenario(&cfg).unwrap(), a.path()).unwrap();
    write_scenario(&generate_scenario(&cfg).unwrap(), b.path()).unwrap();
    let other = ScenarioConfig { seed: 78, ..cfg };
    write_scenario(&generate_scenario(&other).unwrap(), c.path()).unwrap();
    assert_eq!(digests(a.path()), digests(b.path()));
    let (da, dc) = (digests(a.path()), digests(c.path()));
    let trips = SCENARIO_FILES.iter().position(|f| *f == "trips.csv").unwrap();
    assert_ne!(da[trips], dc[trips]);
}

#[test]
fn default_scenario_ingests_cleanly_at_a_realistic_treatment_rate() {
    let cfg = ScenarioConfig::default();
    let scenario = generate_scenario(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scenario(&scenario, dir.path()).unwrap();
    let l = load(dir.path(), &cfg);
    assert_eq!(l.rejects, 0);
    assert_eq!(l.trips.len(), scenario.trips.len());
    assert!((0.03..=0.10).contains(&l.rate), "treatment rate {}", l.rate);
    assert!((0.03..=0.10).contains(&scenario.manifest.treatment_rate()));
}

#[test]
fn panel_conserves_trips_and_flows() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    write_scenario(&generate_scenario(&cfg).unwrap(), dir.path()).unwrap();
    let Loaded { trips, panel, .. } = load(dir.path(), &cfg);
    let n = panel.n_stations();
    let total: u64 = panel.entry.iter().map(|&e| u64::from(e)).sum();
    assert_eq!(total, trips.len() as u64);

    // expected outward/inward totals per unit, straight from the trip list
    let station = |id: &str| panel.station_index(id).unwrap();
    let mut out_count: HashMap<usize, u32> = HashMap::new();
    let mut in_count: HashMap<usize, u32> = HashMap::new();
    for t in trips.iter().filter(|t| t.entry_station != t.exit_station) {
        let entry = panel.unit(station(&t.entry_station), panel.window.slot_of(&t.entry_ts).unwrap());
        let exit = panel.unit(station(&t.exit_station), panel.window.slot_of(&t.exit_ts).unwrap());
        *out_count.entry(entry).or_default() += 1;
        *in_count.entry(exit).or_default() += 1;
    }
    for u in 0..panel.n_units() {
        let out = flow_to_dense(&panel.outward[u], n);
        let inw = flow_to_dense(&panel.inward[u], n);
        let own = panel.station_of(u);
        assert_eq!(out[own], 0.0);
        assert_eq!(inw[own], 0.0);
        assert_eq!(out.iter().sum::<f64>(), f64::from(out_count.get(&u).copied().unwrap_or(0)));
        assert_eq!(inw.iter().sum::<f64>(), f64::from(in_count.get(&u).copied().unwrap_or(0)));
    }
}

#[test]
fn matching_and_metrics_hold_their_contracts() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    write_scenario(&generate_scenario(&cfg).unwrap(), dir.path()).unwrap();
    let panel = load(dir.path(), &cfg).panel;
    let (model, _) = fit_propensity(&panel, &Formula::standard(), &Default::default()).unwrap();
    let scores = predict_scores(&model, &panel.covariates).unwrap();
    let mc = MatchConfig::default();
    let entry = match_units(&panel, &scores, &mc, OutcomeRequirement::Any).unwrap();
    assert_eq!(entry, match_units(&panel, &scores, &mc, OutcomeRequirement::Any).unwrap());
    let speed = match_units(&panel, &scores, &mc, OutcomeRequirement::Speed).unwrap();

    let balance = balance_report(&panel, &scores, &entry).unwrap();
    let score_row = balance.rows.iter().find(|r| r.covariate == "propensity_score").unwrap();
    assert!(score_row.smd_after.unwrap().abs() <= score_row.smd_before.unwrap().abs());

    let effects = estimate_all(&panel, &entry, &speed, 1e-6).unwrap();
    let records = compute_metrics(&effects, &baseline_stats(&panel).unwrap(), Ridership::Disrupted).unwrap();
    for r in records.iter().filter(|r| r.d.is_some()) {
        let expected = r.d.unwrap() / r.baseline_entry * 100.0;
        assert!((r.d_pct.unwrap() - expected).abs() <= 1e-9 * expected.abs().max(1.0));
    }
    for metric in [Metric::D, Metric::SAvg, Metric::Flow(Distance::Hellinger, Direction::Outward)] {
        let top = rank_stations(&records, metric, 1);
        let mut scaled = records.clone();
        for r in &mut scaled {
            if let Some(v) = metric.get(r) {
                metric.set(r, v * 3.5);
            }
        }
        assert_eq!(top[0].station, rank_stations(&scaled, metric, 1)[0].station);
    }
}
