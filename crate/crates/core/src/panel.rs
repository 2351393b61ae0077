//! Study-unit panel: one row per station, service day and interval.
//!
//! Unit index layout is station-major, then day, then slot:
//! `unit = (station * n_days + day) * slots_per_day + slot`.

use std::collections::HashMap;
use std::io::Write;

use thiserror::Error;

use crate::ingest::{IncidentRecord, StationAttrs, TripRecord, WeatherGrid};
use crate::network::{trip_speed, NetworkGraph, TripSpeed};
use crate::time::{format_date, SlotId, StudyWindow};

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("station `{0}` appears in trips or incidents but not in the station table")]
    UnknownStation(String),
    #[error("station `{0}` has no undisrupted units, cannot form a baseline")]
    NoBaseline(String),
    #[error("write failed: {0}")]
    Write(String),
}

/// Names of the per-unit covariates, in column order.
pub const COVARIATE_NAMES: &[&str] = &[
    "pre_entry",
    "pre_exit",
    "temp_c",
    "wind_kmh",
    "rain",
    "time_band",
    "past_disruptions",
    "rail_connect",
    "overground",
    "terminal",
    "screen_door",
    "n_lines",
    "avg_adj_km",
    "station_age",
    "rolling_stock_age",
    "zone",
];

/// Columnar covariate table aligned with panel unit indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Covariates {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Self {
        assert_eq!(names.len(), columns.len());
        Self { names, columns }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names.iter().map(String::as_str).zip(self.columns.iter().map(Vec::as_slice))
    }
}

/// Sparse trip counts to (outward) or from (inward) other stations, sorted by
/// station index. The station's own cell is always zero.
pub type FlowVec = Vec<(u32, u32)>;

pub fn flow_to_dense(flow: &FlowVec, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for &(k, c) in flow {
        v[k as usize] = c as f64;
    }
    v
}

/// Treatment indicator and same-day disruption history per unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Treatment {
    pub w: Vec<u8>,
    /// Incidents at the station that started earlier the same service day.
    pub past_disruptions: Vec<u32>,
}

impl Treatment {
    pub fn treated_count(&self) -> usize {
        self.w.iter().filter(|&&w| w == 1).count()
    }
}

fn station_index(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
}

/// A unit is treated when any incident at its station overlaps the interval
/// by at least one minute.
pub fn assign_treatment(
    incidents: &[IncidentRecord],
    station_ids: &[String],
    window: &StudyWindow,
) -> Result<Treatment, PanelError> {
    let index = station_index(station_ids);
    let n_days = window.n_days();
    let n_slots = window.slots_per_day();
    let n_units = station_ids.len() * n_days * n_slots;
    let mut w = vec![0u8; n_units];
    // (station, day) -> incident start minutes
    let mut starts: HashMap<(usize, usize), Vec<chrono::NaiveDateTime>> = HashMap::new();
    for inc in incidents {
        let si = *index.get(inc.station.as_str()).ok_or_else(|| PanelError::UnknownStation(inc.station.clone()))?;
        let mut date = inc.start_ts.date();
        while date <= inc.end_ts.date() {
            if let Some(day) = window.day_index(date) {
                for slot in 0..n_slots {
                    let id = SlotId { day, slot };
                    if inc.start_ts < window.slot_end(id) && inc.end_ts > window.slot_start(id) {
                        w[(si * n_days + day) * n_slots + slot] = 1;
                    }
                }
            }
            date = date.succ_opt().expect("date in range");
        }
        if let Some(day) = window.day_index(inc.start_ts.date()) {
            if window.slot_of(&inc.start_ts).is_some() {
                starts.entry((si, day)).or_default().push(inc.start_ts);
            }
        }
    }
    let mut past_disruptions = vec![0u32; n_units];
    for ((si, day), mut s) in starts {
        s.sort_unstable();
        let mut k = 0;
        for slot in 0..n_slots {
            let begin = window.slot_start(SlotId { day, slot });
            while k < s.len() && s[k] < begin {
                k += 1;
            }
            past_disruptions[(si * n_days + day) * n_slots + slot] = k as u32;
        }
    }
    Ok(Treatment { w, past_disruptions })
}

/// Trip accounting collected while building the panel.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct PanelStats {
    pub trips_counted: usize,
    pub trips_outside_window: usize,
    pub same_station_trips: usize,
    pub no_path_trips: usize,
    pub zero_duration_trips: usize,
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub window: StudyWindow,
    pub station_ids: Vec<String>,
    pub treatment: Vec<u8>,
    pub entry: Vec<u32>,
    pub exit: Vec<u32>,
    /// Mean trip speed in km/h; `None` for undisrupted units without a
    /// measurable trip.
    pub speed: Vec<Option<f64>>,
    /// Number of trips behind each speed value.
    pub speed_trips: Vec<u32>,
    pub outward: Vec<FlowVec>,
    pub inward: Vec<FlowVec>,
    pub covariates: Covariates,
    pub stats: PanelStats,
}

impl Panel {
    pub fn n_stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn n_units(&self) -> usize {
        self.treatment.len()
    }

    pub fn slots_per_day(&self) -> usize {
        self.window.slots_per_day()
    }

    pub fn unit(&self, station: usize, id: SlotId) -> usize {
        (station * self.window.n_days() + id.day) * self.slots_per_day() + id.slot
    }

    pub fn locate(&self, unit: usize) -> (usize, SlotId) {
        let n_slots = self.slots_per_day();
        let n_days = self.window.n_days();
        let slot = unit % n_slots;
        let rest = unit / n_slots;
        (rest / n_days, SlotId { day: rest % n_days, slot })
    }

    pub fn station_of(&self, unit: usize) -> usize {
        unit / (self.window.n_days() * self.slots_per_day())
    }

    pub fn is_treated(&self, unit: usize) -> bool {
        self.treatment[unit] == 1
    }

    pub fn treated_units(&self) -> Vec<usize> {
        (0..self.n_units()).filter(|&u| self.is_treated(u)).collect()
    }

    pub fn labels(&self) -> &[u8] {
        &self.treatment
    }

    pub fn station_index(&self, id: &str) -> Option<usize> {
        self.station_ids.iter().position(|s| s == id)
    }

    /// Units of one station, in day-then-slot order.
    pub fn station_units(&self, station: usize) -> std::ops::Range<usize> {
        let per = self.window.n_days() * self.slots_per_day();
        station * per..(station + 1) * per
    }
}

/// Builds the panel. `stations` must cover every station seen in trips and
/// is taken in the order given, which fixes the unit layout.
pub fn build_study_units(
    trips: &[TripRecord],
    treatment: &Treatment,
    weather: &WeatherGrid,
    stations: &[StationAttrs],
    graph: &NetworkGraph,
    window: &StudyWindow,
) -> Result<Panel, PanelError> {
    let station_ids: Vec<String> = stations.iter().map(|s| s.id.clone()).collect();
    let index = station_index(&station_ids);
    let n = station_ids.len();
    let n_days = window.n_days();
    let n_slots = window.slots_per_day();
    let n_units = n * n_days * n_slots;
    assert_eq!(treatment.w.len(), n_units, "treatment matrix does not match the window");

    let mut entry = vec![0u32; n_units];
    let mut exit = vec![0u32; n_units];
    let mut speed_sum = vec![0.0f64; n_units];
    let mut speed_n = vec![0u32; n_units];
    let mut outward: Vec<HashMap<u32, u32>> = vec![HashMap::new(); n_units];
    let mut inward: Vec<HashMap<u32, u32>> = vec![HashMap::new(); n_units];
    let mut stats = PanelStats::default();
    let unit_of = |s: usize, id: SlotId| (s * n_days + id.day) * n_slots + id.slot;

    for t in trips {
        let a = *index.get(t.entry_station.as_str()).ok_or_else(|| PanelError::UnknownStation(t.entry_station.clone()))?;
        let b = *index.get(t.exit_station.as_str()).ok_or_else(|| PanelError::UnknownStation(t.exit_station.clone()))?;
        let (Some(in_slot), Some(out_slot)) = (window.slot_of(&t.entry_ts), window.slot_of(&t.exit_ts)) else {
            stats.trips_outside_window += 1;
            continue;
        };
        stats.trips_counted += 1;
        let ue = unit_of(a, in_slot);
        let ux = unit_of(b, out_slot);
        entry[ue] += 1;
        exit[ux] += 1;
        if a == b {
            stats.same_station_trips += 1;
            continue;
        }
        *outward[ue].entry(b as u32).or_insert(0) += 1;
        *inward[ux].entry(a as u32).or_insert(0) += 1;
        match trip_speed(t, graph).map_err(|e| PanelError::UnknownStation(e.to_string()))? {
            TripSpeed::Speed(v) => {
                speed_sum[ue] += v;
                speed_n[ue] += 1;
            }
            TripSpeed::NoPath => stats.no_path_trips += 1,
            TripSpeed::ZeroDuration => stats.zero_duration_trips += 1,
            TripSpeed::Degenerate => {}
        }
    }

    let speed: Vec<Option<f64>> = (0..n_units)
        .map(|u| match (speed_n[u], treatment.w[u]) {
            (0, 1) => Some(0.0),
            (0, _) => None,
            (k, _) => Some(speed_sum[u] / k as f64),
        })
        .collect();
    let sort_flows = |v: Vec<HashMap<u32, u32>>| -> Vec<FlowVec> {
        v.into_iter()
            .map(|m| {
                let mut f: FlowVec = m.into_iter().collect();
                f.sort_unstable();
                f
            })
            .collect()
    };

    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n_units); COVARIATE_NAMES.len()];
    for (si, st) in stations.iter().enumerate() {
        let adj = graph.index_of(&st.id).map_or(0.0, |g| graph.avg_adjacent_km(g));
        for day in 0..n_days {
            for slot in 0..n_slots {
                let u = unit_of(si, SlotId { day, slot });
                let (pre_entry, pre_exit) = if slot == 0 { (0.0, 0.0) } else { (entry[u - 1] as f64, exit[u - 1] as f64) };
                let wx = weather.get(si, SlotId { day, slot });
                let values = [
                    pre_entry,
                    pre_exit,
                    wx.temp_c,
                    wx.wind_kmh,
                    f64::from(u8::from(wx.rain)),
                    window.band_of_slot(slot) as f64,
                    treatment.past_disruptions[u] as f64,
                    f64::from(u8::from(st.rail_connect)),
                    f64::from(u8::from(st.overground)),
                    f64::from(u8::from(st.terminal)),
                    f64::from(u8::from(st.screen_door)),
                    st.n_lines as f64,
                    adj,
                    st.station_age,
                    st.rolling_stock_age,
                    st.zone as f64,
                ];
                for (c, v) in cols.iter_mut().zip(values) {
                    c.push(v);
                }
            }
        }
    }

    Ok(Panel {
        window: window.clone(),
        station_ids,
        treatment: treatment.w.clone(),
        entry,
        exit,
        speed,
        speed_trips: speed_n,
        outward: sort_flows(outward),
        inward: sort_flows(inward),
        covariates: Covariates::new(COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(), cols),
        stats,
    })
}

/// Undisrupted reference levels of one station.
#[derive(Debug, Clone, PartialEq)]
pub struct StationBaseline {
    pub station: String,
    pub n_undisrupted: usize,
    pub n_disrupted: usize,
    pub mean_entry: f64,
    pub mean_speed: Option<f64>,
    pub mean_outward: Vec<f64>,
    pub mean_inward: Vec<f64>,
    /// Mean entry ridership over the station's disrupted units; `None` for a
    /// station that was never disrupted.
    pub disrupted_entry: Option<f64>,
}

pub fn baseline_stats(panel: &Panel) -> Result<Vec<StationBaseline>, PanelError> {
    let n = panel.n_stations();
    (0..n)
        .map(|si| {
            let mut n0 = 0usize;
            let mut n1 = 0usize;
            let mut entry0 = 0.0;
            let mut entry1 = 0.0;
            let mut speed_sum = 0.0;
            let mut speed_n = 0usize;
            let mut out = vec![0.0; n];
            let mut inw = vec![0.0; n];
            for u in panel.station_units(si) {
                if panel.is_treated(u) {
                    n1 += 1;
                    entry1 += panel.entry[u] as f64;
                    continue;
                }
                n0 += 1;
                entry0 += panel.entry[u] as f64;
                if let Some(v) = panel.speed[u] {
                    speed_sum += v;
                    speed_n += 1;
                }
                for &(k, c) in &panel.outward[u] {
                    out[k as usize] += c as f64;
                }
                for &(k, c) in &panel.inward[u] {
                    inw[k as usize] += c as f64;
                }
            }
            if n0 == 0 {
                return Err(PanelError::NoBaseline(panel.station_ids[si].clone()));
            }
            out.iter_mut().chain(inw.iter_mut()).for_each(|v| *v /= n0 as f64);
            Ok(StationBaseline {
                station: panel.station_ids[si].clone(),
                n_undisrupted: n0,
                n_disrupted: n1,
                mean_entry: entry0 / n0 as f64,
                mean_speed: (speed_n > 0).then(|| speed_sum / speed_n as f64),
                mean_outward: out,
                mean_inward: inw,
                disrupted_entry: (n1 > 0).then(|| entry1 / n1 as f64),
            })
        })
        .collect()
}

/// Station-level averages over the whole study period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyStats {
    pub entry_per_day: f64,
    pub exit_per_day: f64,
    /// Trip-weighted mean speed, 0 when the station has no measurable trip.
    pub speed: f64,
}

pub fn daily_stats(panel: &Panel) -> Vec<DailyStats> {
    let days = panel.window.n_days() as f64;
    (0..panel.n_stations())
        .map(|si| {
            let units = panel.station_units(si);
            let entry: u64 = units.clone().map(|u| panel.entry[u] as u64).sum();
            let exit: u64 = units.clone().map(|u| panel.exit[u] as u64).sum();
            let (mut s, mut k) = (0.0, 0u64);
            for u in units {
                if let (Some(v), n) = (panel.speed[u], panel.speed_trips[u]) {
                    s += v * n as f64;
                    k += n as u64;
                }
            }
            DailyStats {
                entry_per_day: entry as f64 / days,
                exit_per_day: exit as f64 / days,
                speed: if k > 0 { s / k as f64 } else { 0.0 },
            }
        })
        .collect()
}

fn io_err(e: impl std::fmt::Display) -> PanelError {
    PanelError::Write(e.to_string())
}

/// Columnar panel dump: `station,day,slot,W,<covariates...>,entry,avg_speed`.
pub fn write_panel_csv<W: Write>(out: W, panel: &Panel) -> Result<(), PanelError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["station".to_string(), "day".into(), "slot".into(), "W".into()];
    header.extend(panel.covariates.names().iter().cloned());
    header.push("entry".into());
    header.push("avg_speed".into());
    w.write_record(&header).map_err(io_err)?;
    let cols: Vec<&[f64]> = panel.covariates.columns().map(|(_, c)| c).collect();
    for u in 0..panel.n_units() {
        let (si, id) = panel.locate(u);
        let mut row = vec![
            panel.station_ids[si].clone(),
            format_date(&panel.window.days()[id.day]),
            id.slot.to_string(),
            panel.treatment[u].to_string(),
        ];
        row.extend(cols.iter().map(|c| c[u].to_string()));
        row.push(panel.entry[u].to_string());
        row.push(panel.speed[u].map(|v| v.to_string()).unwrap_or_default());
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Sparse flow triplets: `station,day,slot,direction,dest,count`.
pub fn write_flows_csv<W: Write>(out: W, panel: &Panel) -> Result<(), PanelError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["station", "day", "slot", "direction", "dest", "count"]).map_err(io_err)?;
    for u in 0..panel.n_units() {
        let (si, id) = panel.locate(u);
        let day = format_date(&panel.window.days()[id.day]);
        for (dir, flows) in [("outward", &panel.outward[u]), ("inward", &panel.inward[u])] {
            for &(k, c) in flows {
                w.write_record([
                    panel.station_ids[si].as_str(),
                    &day,
                    &id.slot.to_string(),
                    dir,
                    &panel.station_ids[k as usize],
                    &c.to_string(),
                ])
                .map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)
}
