//! Seeded synthetic scenarios with known disruption effects.
//!
//! Disruption probability rises with current demand (entries in the previous
//! interval of the same day), rain and wind, so a
//! naive disrupted-versus-normal comparison is confounded while a
//! same-station, same-interval comparison across days is not. All draws come
//! from one ChaCha8 stream in a fixed order, so a seed fixes every byte of
//! output.
//!
//! Entry counts are Poisson with mean `scale_i * profile(slot)`, times
//! `rain_demand_factor` while it rains, plus `delta_demand` (scaled per
//! station) in disrupted intervals.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effects::dist_hellinger;
use crate::ingest::{
    write_edges, write_incidents, write_stations, write_trips, write_weather, Edge, IncidentRecord, IngestError,
    StationAttrs, TripRecord, WeatherSlot,
};
use crate::network::NetworkGraph;
use crate::time::{format_ts, SlotId, StudyWindow};

pub const GENERATOR_VERSION: &str = concat!("metrovuln-synthgen/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("station {station}: expected entries {rate} would be non-positive in a disrupted interval")]
    NegativeDemand { station: String, rate: f64 },
    #[error(transparent)]
    Write(#[from] IngestError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Logit coefficients of the disruption model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Gamma {
    pub intercept: f64,
    /// Per unit of `previous-interval entries / network mean rate - 1`.
    pub demand: f64,
    pub rain: f64,
    /// Per standard deviation of wind speed.
    pub wind: f64,
}

impl Default for Gamma {
    fn default() -> Self {
        Self { intercept: -3.4, demand: 1.6, rain: 0.4, wind: 0.15 }
    }
}

impl Gamma {
    /// Random assignment at the given rate.
    pub fn random(rate: f64) -> Self {
        Self { intercept: (rate / (1.0 - rate)).ln(), demand: 0.0, rain: 0.0, wind: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n_stations: usize,
    pub n_days: usize,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub interval_min: u32,
    /// Station demand scale range, entries per interval at the profile minimum.
    pub rate_min: f64,
    pub rate_max: f64,
    pub rain_demand_factor: f64,
    /// Per-interval chance that rain starts, and that it stops.
    pub rain_start_prob: f64,
    pub rain_stop_prob: f64,
    pub gamma: Gamma,
    /// Entry change per disrupted interval.
    pub delta_demand: f64,
    /// Speed change of trips started in a disrupted interval, km/h.
    pub delta_speed: f64,
    /// Share of outward trips sent to the nearest alternative destination.
    pub phi_flow: f64,
    /// Per-station spread of `delta_demand`, proportional to standardized
    /// population; 0 gives every station the same effect.
    pub effect_heterogeneity: f64,
    pub base_speed_kmh: f64,
    /// Journey time noise, minutes (sd).
    pub journey_noise_min: f64,
    /// Stations that are never disrupted.
    pub n_undisrupted: usize,
    /// Per-interval probability of an extra incident below the 10-minute threshold.
    pub short_incident_prob: f64,
}

const RAIN_START: f64 = 0.1;
const RAIN_STOP: f64 = 0.25;

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_stations: 20,
            n_days: 30,
            seed: 20131028,
            start_date: NaiveDate::from_ymd_opt(2013, 10, 28).expect("valid date"),
            interval_min: 15,
            rate_min: 30.0,
            rate_max: 50.0,
            rain_demand_factor: 0.85,
            rain_start_prob: RAIN_START,
            rain_stop_prob: RAIN_STOP,
            gamma: Gamma::default(),
            delta_demand: -20.0,
            delta_speed: -5.0,
            phi_flow: 0.3,
            effect_heterogeneity: 0.0,
            base_speed_kmh: 30.0,
            journey_noise_min: 1.0,
            n_undisrupted: 3,
            short_incident_prob: 0.002,
        }
    }
}

/// Relative demand over the day, minimum 1 in the early morning and late
/// evening, with AM and PM peaks.
pub fn demand_profile(minute: u32) -> f64 {
    let m = minute as f64;
    1.0 + 1.5 * (-((m - 495.0) / 60.0).powi(2)).exp() + 1.2 * (-((m - 1050.0) / 75.0).powi(2)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationTruth {
    pub station: String,
    pub scale: f64,
    pub delta_demand: f64,
    pub delta_speed: f64,
    pub never_disrupted: bool,
    /// Destination probabilities over all stations (own cell 0).
    pub destinations: Vec<f64>,
    /// Alternative destination used when a trip to `k` is redirected.
    pub redirect: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedIncident {
    pub station: String,
    pub start_ts: String,
    pub end_ts: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthManifest {
    pub generator: String,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub stations: Vec<StationTruth>,
    pub incidents: Vec<InjectedIncident>,
    pub short_incidents: usize,
    pub treated_units: usize,
    pub total_units: usize,
    pub trips: usize,
}

impl GroundTruthManifest {
    pub fn treatment_rate(&self) -> f64 {
        self.treated_units as f64 / self.total_units as f64
    }
}

/// Generated tables plus the truth behind them.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub stations: Vec<StationAttrs>,
    pub edges: Vec<Edge>,
    pub weather: Vec<WeatherSlot>,
    pub incidents: Vec<IncidentRecord>,
    pub trips: Vec<TripRecord>,
    pub manifest: GroundTruthManifest,
}

/// Rounds to `places` decimals, giving the double nearest that decimal.
fn round_dp(v: f64, places: i32) -> f64 {
    let k = 10f64.powi(places);
    (v * k).round() / k
}

fn validate(cfg: &ScenarioConfig) -> Result<(), SynthError> {
    let bad = |m: &str| Err(SynthError::Config(m.to_string()));
    if cfg.n_stations < 3 {
        return bad("need at least 3 stations");
    }
    if cfg.n_days < 2 {
        return bad("need at least 2 days");
    }
    if cfg.n_undisrupted >= cfg.n_stations {
        return bad("n_undisrupted must leave at least one station that can be disrupted");
    }
    if cfg.interval_min < 10 || 1080 % cfg.interval_min != 0 {
        return bad("interval must divide the 18-hour service day and be at least 10 minutes");
    }
    if !(cfg.rate_min > 0.0 && cfg.rate_max >= cfg.rate_min) {
        return bad("rates must be positive with rate_min <= rate_max");
    }
    if !(cfg.rain_demand_factor > 0.0) {
        return bad("rain_demand_factor must be positive");
    }
    if !(0.0..=1.0).contains(&cfg.rain_start_prob) || !(0.0..=1.0).contains(&cfg.rain_stop_prob) {
        return bad("rain probabilities must lie in [0, 1]");
    }
    if !(0.0..=1.0).contains(&cfg.phi_flow) {
        return bad("phi_flow must lie in [0, 1]");
    }
    if !(cfg.base_speed_kmh + cfg.delta_speed > 0.0) {
        return bad("disrupted speed must stay positive");
    }
    if !(0.0..1.0).contains(&cfg.short_incident_prob) {
        return bad("short_incident_prob must lie in [0, 1)");
    }
    Ok(())
}

struct Layout {
    xy: Vec<(f64, f64)>,
    edges: Vec<(usize, usize, f64)>,
}

fn layout(rng: &mut ChaCha8Rng, n: usize) -> Layout {
    let xy: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0))).collect();
    let d = |a: usize, b: usize| ((xy[a].0 - xy[b].0).powi(2) + (xy[a].1 - xy[b].1).powi(2)).sqrt();
    let km = |a: usize, b: usize| round_dp(1.15 * d(a, b), 2).max(0.3);
    let mut edges = Vec::new();
    for i in 1..n {
        let j = (0..i).min_by(|&a, &b| d(i, a).total_cmp(&d(i, b))).expect("i >= 1");
        edges.push((j, i, km(j, i)));
    }
    for a in 0..n {
        for b in (a + 1)..n {
            let linked = edges.iter().any(|&(x, y, _)| (x, y) == (a, b));
            if !linked && d(a, b) < 4.0 && rng.random_bool(0.3) {
                edges.push((a, b, km(a, b)));
            }
        }
    }
    Layout { xy, edges }
}

fn station_table(rng: &mut ChaCha8Rng, lay: &Layout, graph: &NetworkGraph) -> Vec<StationAttrs> {
    lay.xy
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let r = (x * x + y * y).sqrt();
            let zone = 1 + (r / 3.0).floor().min(5.0) as u32;
            let degree = graph.neighbours(i).count();
            StationAttrs {
                id: format!("S{:02}", i + 1),
                name: format!("Station {:02}", i + 1),
                lat: round_dp(51.5 + y / 111.0, 5),
                lon: round_dp(-0.12 + x / 69.1, 5),
                zone,
                n_lines: rng.random_range(1..=3),
                terminal: degree == 1,
                overground: zone >= 3 && rng.random_bool(0.5),
                screen_door: rng.random_bool(0.2),
                rail_connect: rng.random_bool(0.3),
                station_age: rng.random_range(20..150) as f64,
                rolling_stock_age: rng.random_range(5..45) as f64,
                population: round_dp(rng.random_range(3000.0..20000.0), 0),
                employment: round_dp(rng.random_range(1000.0..30000.0), 0),
                imd: round_dp(rng.random_range(5.0..45.0), 2),
                domestic_area: round_dp(rng.random_range(50.0..400.0), 1),
                non_domestic_area: round_dp(rng.random_range(20.0..500.0), 1),
                other_area: round_dp(rng.random_range(10.0..200.0), 1),
                bus_stops: rng.random_range(2..40) as f64,
                biking: rng.random_bool(0.4),
                parking: rng.random_bool(0.3),
                road_area: round_dp(rng.random_range(1000.0..20000.0), 0),
                path_area: round_dp(rng.random_range(500.0..10000.0), 0),
            }
        })
        .collect()
}

/// Nearest other station to `k` by track distance, excluding `origin`;
/// ties go to the lower index. Falls back to `k` when no alternative exists.
fn nearest_alternative(graph: &NetworkGraph, origin: usize, k: usize) -> usize {
    (0..graph.len())
        .filter(|&j| j != origin && j != k)
        .filter_map(|j| graph.distance(k, j).map(|d| (d, j)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map_or(k, |(_, j)| j)
}

/// Categorical after moving a share `phi` of each destination's mass to its
/// redirect target.
pub fn shift_categorical(p: &[f64], redirect: &[usize], phi: f64) -> Vec<f64> {
    let mut q: Vec<f64> = p.iter().map(|v| v * (1.0 - phi)).collect();
    for (k, &v) in p.iter().enumerate() {
        q[redirect[k]] += v * phi;
    }
    q
}

fn sample_categorical(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draws a full scenario.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario, SynthError> {
    validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_stations;
    let days: Vec<NaiveDate> = (0..cfg.n_days).map(|d| cfg.start_date + Duration::days(d as i64)).collect();
    let window = StudyWindow::new(days, cfg.interval_min).map_err(|e| SynthError::Config(e.to_string()))?;
    let n_slots = window.slots_per_day();

    // topology and stations
    let lay = layout(&mut rng, n);
    let ids: Vec<String> = (0..n).map(|i| format!("S{:02}", i + 1)).collect();
    let edges: Vec<Edge> =
        lay.edges.iter().map(|&(a, b, km)| Edge { from: ids[a].clone(), to: ids[b].clone(), track_km: km }).collect();
    let graph = NetworkGraph::new(&ids, &edges).map_err(|e| SynthError::Config(e.to_string()))?;
    let stations = station_table(&mut rng, &lay, &graph);

    // demand scales, effects, destination choice
    let per_15 = cfg.interval_min as f64 / 15.0;
    let scale: Vec<f64> = (0..n).map(|_| round_dp(rng.random_range(cfg.rate_min..=cfg.rate_max), 2)).collect();
    let pop: Vec<f64> = stations.iter().map(|s| s.population).collect();
    let pop_mean = pop.iter().sum::<f64>() / n as f64;
    let pop_sd = (pop.iter().map(|p| (p - pop_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let never: Vec<bool> = (0..n).map(|i| i >= n - cfg.n_undisrupted).collect();
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let z = if pop_sd > 0.0 { (pop[i] - pop_mean) / pop_sd } else { 0.0 };
        let delta = cfg.delta_demand * (1.0 + cfg.effect_heterogeneity * z);
        let floor = scale[i] * per_15 * cfg.rain_demand_factor.min(1.0);
        if !never[i] && floor + delta * per_15 <= 0.0 {
            return Err(SynthError::NegativeDemand { station: ids[i].clone(), rate: floor + delta * per_15 });
        }
        let w: Vec<f64> = (0..n)
            .map(|k| match graph.distance(i, k) {
                Some(d) if k != i => scale[k] * (-d / 6.0).exp(),
                _ => 0.0,
            })
            .collect();
        let total: f64 = w.iter().sum();
        truth.push(StationTruth {
            station: ids[i].clone(),
            scale: scale[i],
            delta_demand: delta,
            delta_speed: cfg.delta_speed,
            never_disrupted: never[i],
            destinations: w.iter().map(|v| v / total).collect(),
            redirect: (0..n).map(|k| nearest_alternative(&graph, i, k)).collect(),
        });
    }
    let cum: Vec<Vec<f64>> = truth
        .iter()
        .map(|t| {
            t.destinations
                .iter()
                .scan(0.0, |s, p| {
                    *s += p;
                    Some(*s)
                })
                .collect()
        })
        .collect();
    let profile: Vec<f64> = (0..n_slots).map(|s| demand_profile(window.slot_start_minute(s))).collect();
    let mean_rate = scale.iter().sum::<f64>() / n as f64 * profile.iter().sum::<f64>() / n_slots as f64;

    // weather: city-wide rain chain and wind process, station-level noise
    let wind_mean = 15.0;
    let wind_sd = 8.0;
    let unit_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut weather = Vec::with_capacity(n * cfg.n_days * n_slots);
    let mut rain_grid = vec![false; cfg.n_days * n_slots];
    let mut wind_grid = vec![vec![0.0; n]; cfg.n_days * n_slots];
    let mut raining = false;
    let mut city_wind = wind_mean;
    for day in 0..cfg.n_days {
        let day_temp = 10.0 + 3.0 * unit_normal.sample(&mut rng);
        for slot in 0..n_slots {
            raining = if raining { !rng.random_bool(cfg.rain_stop_prob) } else { rng.random_bool(cfg.rain_start_prob) };
            city_wind = wind_mean + 0.9 * (city_wind - wind_mean) + wind_sd * 0.19f64.sqrt() * unit_normal.sample(&mut rng);
            let g = day * n_slots + slot;
            rain_grid[g] = raining;
            let minute = window.slot_start_minute(slot) as f64;
            let diurnal = 4.0 * ((minute - 540.0) / 1440.0 * std::f64::consts::TAU).sin();
            for i in 0..n {
                let wind = round_dp((city_wind + 2.0 * unit_normal.sample(&mut rng)).max(0.0), 1);
                let temp = round_dp(day_temp + diurnal + 0.5 * unit_normal.sample(&mut rng), 1);
                wind_grid[g][i] = wind;
                weather.push(WeatherSlot {
                    station: ids[i].clone(),
                    slot_start: window.slot_start(SlotId { day, slot }),
                    temp_c: temp,
                    wind_kmh: wind,
                    rain: raining,
                });
            }
        }
    }

    // disruptions, then trips, in chronological order
    let mut incidents = Vec::new();
    let mut injected = Vec::new();
    let mut short_incidents = 0;
    let mut trips = Vec::new();
    let mut treated_units = 0;
    let noise = Normal::new(0.0, cfg.journey_noise_min.max(0.0)).map_err(|e| SynthError::Config(e.to_string()))?;
    for day in 0..cfg.n_days {
        let mut prev_entries = vec![0usize; n];
        for (slot, &level) in profile.iter().enumerate() {
            let g = day * n_slots + slot;
            let start = window.slot_start(SlotId { day, slot });
            for i in 0..n {
                let rate = scale[i] * per_15 * level;
                let wind_z = (wind_grid[g][i] - wind_mean) / wind_sd;
                let eta = cfg.gamma.intercept
                    + cfg.gamma.demand * (prev_entries[i] as f64 / (mean_rate * per_15) - 1.0)
                    + cfg.gamma.rain * f64::from(u8::from(rain_grid[g]))
                    + cfg.gamma.wind * wind_z;
                let p = logistic(eta);
                let u: f64 = rng.random();
                let treated = !never[i] && u < p;
                let interval = cfg.interval_min as i64;
                if treated {
                    treated_units += 1;
                    let offset = rng.random_range(0..=interval - 10);
                    let len = rng.random_range(10..=interval - offset);
                    let inc = IncidentRecord {
                        station: ids[i].clone(),
                        start_ts: start + Duration::minutes(offset),
                        end_ts: start + Duration::minutes(offset + len),
                    };
                    injected.push(InjectedIncident {
                        station: inc.station.clone(),
                        start_ts: format_ts(&inc.start_ts),
                        end_ts: format_ts(&inc.end_ts),
                    });
                    incidents.push(inc);
                } else if rng.random_bool(cfg.short_incident_prob) {
                    short_incidents += 1;
                    let offset = rng.random_range(0..interval - 9);
                    let len = rng.random_range(1..=9);
                    incidents.push(IncidentRecord {
                        station: ids[i].clone(),
                        start_ts: start + Duration::minutes(offset),
                        end_ts: start + Duration::minutes(offset + len),
                    });
                }

                let mut mean = rate * if rain_grid[g] { cfg.rain_demand_factor } else { 1.0 };
                if treated {
                    mean += truth[i].delta_demand * per_15;
                }
                let count = Poisson::new(mean).map_err(|e| SynthError::Config(format!("{}: {e}", ids[i])))?.sample(&mut rng) as usize;
                prev_entries[i] = count;
                let speed = cfg.base_speed_kmh + if treated { cfg.delta_speed } else { 0.0 };
                let last_minute = (24 * 60 - 2) as i64 - window.slot_start_minute(slot) as i64;
                for _ in 0..count {
                    let mut k = sample_categorical(&cum[i], rng.random());
                    if treated && cfg.phi_flow > 0.0 && rng.random_bool(cfg.phi_flow) {
                        k = truth[i].redirect[k];
                    }
                    let entry_off = rng.random_range(0..interval).min(last_minute);
                    let km = graph.distance(i, k).expect("connected layout");
                    let minutes = (km / speed * 60.0 + noise.sample(&mut rng)).round().max(1.0) as i64;
                    let entry_ts = start + Duration::minutes(entry_off);
                    let exit_ts = (entry_ts + Duration::minutes(minutes)).min(day_end(&window, day));
                    trips.push(TripRecord {
                        card_id: format!("C{:08}", trips.len() + 1),
                        entry_station: ids[i].clone(),
                        entry_ts,
                        exit_station: ids[k].clone(),
                        exit_ts,
                    });
                }
            }
        }
    }

    let manifest = GroundTruthManifest {
        generator: GENERATOR_VERSION.to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        stations: truth,
        incidents: injected,
        short_incidents,
        treated_units,
        total_units: n * cfg.n_days * n_slots,
        trips: trips.len(),
    };
    Ok(Scenario { stations, edges, weather, incidents, trips, manifest })
}

/// Last minute of the service day, 23:59.
fn day_end(window: &StudyWindow, day: usize) -> chrono::NaiveDateTime {
    window.days()[day].and_hms_opt(23, 59, 0).expect("valid time")
}

/// Per-station expectations implied by the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedEffect {
    pub station: String,
    /// Demand loss per disrupted interval.
    pub d: f64,
    /// Nominal loss of travel speed.
    pub s_avg: f64,
    /// Hellinger distance between the shifted and the normal destination mix.
    pub hd_out: f64,
}

pub fn expected_effects(manifest: &GroundTruthManifest) -> Vec<ExpectedEffect> {
    let per_15 = manifest.config.interval_min as f64 / 15.0;
    manifest
        .stations
        .iter()
        .filter(|s| !s.never_disrupted)
        .map(|s| {
            let shifted = shift_categorical(&s.destinations, &s.redirect, manifest.config.phi_flow);
            ExpectedEffect {
                station: s.station.clone(),
                d: -s.delta_demand * per_15,
                s_avg: -s.delta_speed,
                hd_out: dist_hellinger(&shifted, &s.destinations).unwrap_or(f64::NAN),
            }
        })
        .collect()
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, SynthError> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|source| SynthError::Io { path: path.display().to_string(), source })
}

pub const SCENARIO_FILES: [&str; 6] =
    ["stations.csv", "edges.csv", "weather.csv", "incidents.csv", "trips.csv", "manifest.json"];

/// Writes the five input tables and `manifest.json` into `dir`.
pub fn write_scenario(scenario: &Scenario, dir: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir).map_err(|source| SynthError::Io { path: dir.display().to_string(), source })?;
    write_stations(create(dir, "stations.csv")?, &scenario.stations)?;
    write_edges(create(dir, "edges.csv")?, &scenario.edges)?;
    write_weather(create(dir, "weather.csv")?, &scenario.weather)?;
    write_incidents(create(dir, "incidents.csv")?, &scenario.incidents)?;
    write_trips(create(dir, "trips.csv")?, &scenario.trips)?;
    let mut text = serde_json::to_string_pretty(&scenario.manifest).map_err(|e| SynthError::Config(e.to_string()))?;
    text.push('\n');
    let path = dir.join("manifest.json");
    std::fs::write(&path, text).map_err(|source| SynthError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig { n_stations: 6, n_days: 3, n_undisrupted: 1, seed: 5, ..ScenarioConfig::default() }
    }

    #[test]
    fn same_seed_same_scenario() {
        let a = generate_scenario(&small()).unwrap();
        let b = generate_scenario(&small()).unwrap();
        assert_eq!(a.trips, b.trips);
        assert_eq!(a.manifest, b.manifest);
        let c = generate_scenario(&ScenarioConfig { seed: 6, ..small() }).unwrap();
        assert_ne!(a.trips, c.trips);
    }

    #[test]
    fn never_disrupted_stations_have_no_incidents() {
        let s = generate_scenario(&small()).unwrap();
        assert!(s.manifest.incidents.iter().all(|i| i.station != "S06"));
        assert_eq!(s.manifest.incidents.len(), s.manifest.treated_units);
    }

    #[test]
    fn trips_stay_within_the_service_day() {
        let s = generate_scenario(&small()).unwrap();
        for t in &s.trips {
            assert!(t.exit_ts > t.entry_ts);
            assert_eq!(t.exit_ts.date(), t.entry_ts.date());
            assert_ne!(t.entry_station, t.exit_station);
        }
    }

    #[test]
    fn injected_incidents_fit_inside_one_interval() {
        let s = generate_scenario(&small()).unwrap();
        let w = StudyWindow::new((0..3).map(|d| small().start_date + Duration::days(d)).collect(), 15).unwrap();
        for inc in s.incidents.iter().filter(|i| i.duration_min() >= 10) {
            let a = w.slot_of(&inc.start_ts).unwrap();
            let b = w.slot_of(&(inc.end_ts - Duration::minutes(1))).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn excessive_demand_cut_is_rejected() {
        let cfg = ScenarioConfig { delta_demand: -40.0, ..small() };
        assert!(matches!(generate_scenario(&cfg), Err(SynthError::NegativeDemand { .. })));
    }

    #[test]
    fn expected_effects_follow_the_config() {
        let s = generate_scenario(&small()).unwrap();
        let e = expected_effects(&s.manifest);
        assert_eq!(e.len(), 5);
        assert!(e.iter().all(|x| x.d == 20.0 && x.s_avg == 5.0 && x.hd_out > 0.0));
        let s = generate_scenario(&ScenarioConfig { phi_flow: 0.0, ..small() }).unwrap();
        assert!(expected_effects(&s.manifest).iter().all(|x| x.hd_out == 0.0));
    }

    #[test]
    fn shifted_three_way_categorical() {
        // each destination sends 30% of its mass to the next one
        let p = [0.5, 0.3, 0.2];
        let q = shift_categorical(&p, &[1, 2, 0], 0.3);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let expect = [0.35 + 0.06, 0.21 + 0.15, 0.14 + 0.09];
        for (a, b) in q.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let hd = dist_hellinger(&q, &p).unwrap();
        let by_hand = (p.iter().zip(expect).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert!((hd - by_hand).abs() < 1e-12);
    }
}
