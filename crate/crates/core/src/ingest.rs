//! CSV readers and writers for the five input tables.
//!
//! Every data row either becomes a typed record or a [`Reject`] carrying the
//! line number and reason. Structural problems (missing file, wrong header,
//! broken referential integrity in the topology) are fatal.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDateTime;
use csv::StringRecord;
use serde::Serialize;
use thiserror::Error;

use crate::time::{format_ts, in_service_hours, parse_ts, SlotId, StudyWindow};

pub const TRIP_HEADER: &[&str] = &["card_id", "entry_station", "entry_ts", "exit_station", "exit_ts"];
pub const INCIDENT_HEADER: &[&str] = &["station", "start_ts", "end_ts"];
pub const EDGE_HEADER: &[&str] = &["from", "to", "track_km"];
pub const WEATHER_HEADER: &[&str] = &["station", "slot_start", "temp_c", "wind_kmh", "rain"];
pub const STATION_HEADER: &[&str] = &[
    "id",
    "name",
    "lat",
    "lon",
    "zone",
    "n_lines",
    "terminal",
    "overground",
    "screen_door",
    "rail_connect",
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
];

/// Default minimum incident length, in minutes, for a disruption.
pub const DEFAULT_THRESHOLD_MIN: i64 = 10;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: header mismatch, expected `{expected}`, found `{found}`")]
    Header {
        file: &'static str,
        expected: String,
        found: String,
    },
    #[error("{file}: {source}")]
    Csv {
        file: &'static str,
        #[source]
        source: csv::Error,
    },
    #[error("edges line {line}: unknown station `{station}`")]
    DanglingEdge { line: u64, station: String },
    #[error("edges line {line}: track_km must be positive, got {value}")]
    BadTrackLength { line: u64, value: String },
    #[error("edges line {line}: {reason}")]
    BadEdge { line: u64, reason: String },
    #[error("weather has no rows for station `{0}`")]
    NoWeather(String),
    #[error("write failed: {0}")]
    Write(String),
}

/// A row that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub line: u64,
    pub reason: String,
}

/// Accepted records plus what was rejected or filtered along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub rejects: Vec<Reject>,
    /// Valid rows deliberately dropped by a rule (short incidents).
    pub filtered: usize,
}

impl<T> Parsed<T> {
    fn new() -> Self {
        Self { records: Vec::new(), rejects: Vec::new(), filtered: 0 }
    }

    pub fn rows_seen(&self) -> usize {
        self.records.len() + self.rejects.len() + self.filtered
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripRecord {
    pub card_id: String,
    pub entry_station: String,
    pub entry_ts: NaiveDateTime,
    pub exit_station: String,
    pub exit_ts: NaiveDateTime,
}

impl TripRecord {
    pub fn duration_min(&self) -> i64 {
        (self.exit_ts - self.entry_ts).num_minutes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidentRecord {
    pub station: String,
    pub start_ts: NaiveDateTime,
    pub end_ts: NaiveDateTime,
}

impl IncidentRecord {
    pub fn duration_min(&self) -> i64 {
        (self.end_ts - self.start_ts).num_minutes()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationAttrs {
    pub id: String,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    pub zone: u32,
    pub n_lines: u32,
    pub terminal: bool,
    pub overground: bool,
    pub screen_door: bool,
    pub rail_connect: bool,
    pub station_age: f64,
    pub rolling_stock_age: f64,
    pub population: f64,
    pub employment: f64,
    pub imd: f64,
    pub domestic_area: f64,
    pub non_domestic_area: f64,
    pub other_area: f64,
    pub bus_stops: f64,
    pub biking: bool,
    pub parking: bool,
    pub road_area: f64,
    pub path_area: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub track_km: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSlot {
    pub station: String,
    pub slot_start: NaiveDateTime,
    pub temp_c: f64,
    pub wind_kmh: f64,
    pub rain: bool,
}

/// Stations, topology and raw weather rows.
#[derive(Debug, Clone)]
pub struct StaticData {
    pub stations: Parsed<StationAttrs>,
    pub edges: Vec<Edge>,
    pub weather: Parsed<WeatherSlot>,
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Open { path: path.display().to_string(), source })
}

fn reader<R: Read>(
    input: R,
    file: &'static str,
    expected: &[&str],
) -> Result<csv::Reader<R>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = rdr.headers().map_err(|source| IngestError::Csv { file, source })?.clone();
    if header.iter().ne(expected.iter().copied()) {
        return Err(IngestError::Header {
            file,
            expected: expected.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(rdr)
}

fn rows<'a, R: Read>(
    rdr: &'a mut csv::Reader<R>,
    file: &'static str,
) -> impl Iterator<Item = Result<(u64, StringRecord), IngestError>> + 'a {
    rdr.records().map(move |r| {
        let rec = r.map_err(|source| IngestError::Csv { file, source })?;
        let line = rec.position().map_or(0, |p| p.line());
        Ok((line, rec))
    })
}

fn field(rec: &StringRecord, i: usize) -> &str {
    rec.get(i).unwrap_or("").trim()
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("boolean must be 0 or 1, got `{other}`")),
    }
}

fn parse_f64(name: &str, s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{name}: not a number `{s}`"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{name}: not finite"))
    }
}

fn parse_ts_field(name: &str, s: &str) -> Result<NaiveDateTime, String> {
    if s.is_empty() {
        return Err(format!("missing {name}"));
    }
    parse_ts(s).map_err(|_| format!("{name}: unparseable timestamp `{s}`"))
}

// ---------------------------------------------------------------------------
// trips

pub fn parse_trips(path: &Path, stations: &HashSet<String>) -> Result<Parsed<TripRecord>, IngestError> {
    read_trips(open(path)?, stations)
}

pub fn read_trips<R: Read>(
    input: R,
    stations: &HashSet<String>,
) -> Result<Parsed<TripRecord>, IngestError> {
    let mut rdr = reader(input, "trips", TRIP_HEADER)?;
    let mut out = Parsed::new();
    for row in rows(&mut rdr, "trips") {
        let (line, rec) = row?;
        match trip_from_row(&rec, stations) {
            Ok(t) => out.records.push(t),
            Err(reason) => out.rejects.push(Reject { line, reason }),
        }
    }
    Ok(out)
}

fn trip_from_row(rec: &StringRecord, stations: &HashSet<String>) -> Result<TripRecord, String> {
    if rec.len() != TRIP_HEADER.len() {
        return Err(format!("expected {} fields, found {}", TRIP_HEADER.len(), rec.len()));
    }
    let entry_station = field(rec, 1);
    let exit_station = field(rec, 3);
    if exit_station.is_empty() || field(rec, 4).is_empty() {
        return Err("missing exit tap".into());
    }
    for s in [entry_station, exit_station] {
        if !stations.contains(s) {
            return Err(format!("unknown station `{s}`"));
        }
    }
    let entry_ts = parse_ts_field("entry_ts", field(rec, 2))?;
    let exit_ts = parse_ts_field("exit_ts", field(rec, 4))?;
    if exit_ts <= entry_ts {
        return Err("non-positive duration".into());
    }
    if !in_service_hours(&entry_ts) || exit_ts.date() != entry_ts.date() {
        return Err("outside service hours 06:00-24:00".into());
    }
    Ok(TripRecord {
        card_id: field(rec, 0).to_string(),
        entry_station: entry_station.to_string(),
        entry_ts,
        exit_station: exit_station.to_string(),
        exit_ts,
    })
}

pub fn write_trips<W: Write>(out: W, trips: &[TripRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    let res = (|| {
        w.write_record(TRIP_HEADER)?;
        for t in trips {
            w.write_record([
                t.card_id.as_str(),
                &t.entry_station,
                &format_ts(&t.entry_ts),
                &t.exit_station,
                &format_ts(&t.exit_ts),
            ])?;
        }
        w.flush()?;
        Ok::<_, csv::Error>(())
    })();
    res.map_err(|e| IngestError::Write(e.to_string()))
}

// ---------------------------------------------------------------------------
// incidents

/// Reads incidents and drops those shorter than `threshold_min` minutes.
pub fn parse_incidents(
    path: &Path,
    stations: &HashSet<String>,
    threshold_min: i64,
) -> Result<Parsed<IncidentRecord>, IngestError> {
    read_incidents(open(path)?, stations, threshold_min)
}

pub fn read_incidents<R: Read>(
    input: R,
    stations: &HashSet<String>,
    threshold_min: i64,
) -> Result<Parsed<IncidentRecord>, IngestError> {
    let mut rdr = reader(input, "incidents", INCIDENT_HEADER)?;
    let mut out = Parsed::new();
    for row in rows(&mut rdr, "incidents") {
        let (line, rec) = row?;
        match incident_from_row(&rec, stations) {
            Ok(inc) if inc.duration_min() < threshold_min => out.filtered += 1,
            Ok(inc) => out.records.push(inc),
            Err(reason) => out.rejects.push(Reject { line, reason }),
        }
    }
    Ok(out)
}

fn incident_from_row(rec: &StringRecord, stations: &HashSet<String>) -> Result<IncidentRecord, String> {
    if rec.len() != INCIDENT_HEADER.len() {
        return Err(format!("expected {} fields, found {}", INCIDENT_HEADER.len(), rec.len()));
    }
    let station = field(rec, 0);
    if !stations.contains(station) {
        return Err(format!("unknown station `{station}`"));
    }
    let start_ts = parse_ts_field("start_ts", field(rec, 1))?;
    let end_ts = parse_ts_field("end_ts", field(rec, 2))?;
    if end_ts < start_ts {
        return Err("end before start".into());
    }
    Ok(IncidentRecord { station: station.to_string(), start_ts, end_ts })
}

pub fn write_incidents<W: Write>(out: W, incidents: &[IncidentRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    let res = (|| {
        w.write_record(INCIDENT_HEADER)?;
        for i in incidents {
            w.write_record([i.station.as_str(), &format_ts(&i.start_ts), &format_ts(&i.end_ts)])?;
        }
        w.flush()?;
        Ok::<_, csv::Error>(())
    })();
    res.map_err(|e| IngestError::Write(e.to_string()))
}

// ---------------------------------------------------------------------------
// stations, edges, weather

pub fn parse_static(
    stations_path: &Path,
    edges_path: &Path,
    weather_path: &Path,
) -> Result<StaticData, IngestError> {
    let stations = read_stations(open(stations_path)?)?;
    let ids: HashSet<String> = stations.records.iter().map(|s| s.id.clone()).collect();
    let edges = read_edges(open(edges_path)?, &ids)?;
    let weather = read_weather(open(weather_path)?, &ids)?;
    Ok(StaticData { stations, edges, weather })
}

pub fn read_stations<R: Read>(input: R) -> Result<Parsed<StationAttrs>, IngestError> {
    let mut rdr = reader(input, "stations", STATION_HEADER)?;
    let mut out = Parsed::new();
    let mut seen = HashSet::new();
    for row in rows(&mut rdr, "stations") {
        let (line, rec) = row?;
        match station_from_row(&rec) {
            Ok(s) if !seen.insert(s.id.clone()) => {
                out.rejects.push(Reject { line, reason: format!("duplicate station id `{}`", s.id) })
            }
            Ok(s) => out.records.push(s),
            Err(reason) => out.rejects.push(Reject { line, reason }),
        }
    }
    Ok(out)
}

fn station_from_row(rec: &StringRecord) -> Result<StationAttrs, String> {
    if rec.len() != STATION_HEADER.len() {
        return Err(format!("expected {} fields, found {}", STATION_HEADER.len(), rec.len()));
    }
    let f = |i: usize| parse_f64(STATION_HEADER[i], field(rec, i));
    let b = |i: usize| parse_bool(field(rec, i)).map_err(|e| format!("{}: {e}", STATION_HEADER[i]));
    let u = |i: usize| {
        field(rec, i)
            .parse::<u32>()
            .map_err(|_| format!("{}: not a count `{}`", STATION_HEADER[i], field(rec, i)))
    };
    let id = field(rec, 0);
    if id.is_empty() {
        return Err("empty station id".into());
    }
    let s = StationAttrs {
        id: id.to_string(),
        name: field(rec, 1).to_string(),
        lat: f(2)?,
        lon: f(3)?,
        zone: u(4)?,
        n_lines: u(5)?,
        terminal: b(6)?,
        overground: b(7)?,
        screen_door: b(8)?,
        rail_connect: b(9)?,
        station_age: f(10)?,
        rolling_stock_age: f(11)?,
        population: f(12)?,
        employment: f(13)?,
        imd: f(14)?,
        domestic_area: f(15)?,
        non_domestic_area: f(16)?,
        other_area: f(17)?,
        bus_stops: f(18)?,
        biking: b(19)?,
        parking: b(20)?,
        road_area: f(21)?,
        path_area: f(22)?,
    };
    if s.zone < 1 {
        return Err("zone must be >= 1".into());
    }
    if s.station_age < 0.0 || s.rolling_stock_age < 0.0 {
        return Err("ages must be non-negative".into());
    }
    Ok(s)
}

pub fn write_stations<W: Write>(out: W, stations: &[StationAttrs]) -> Result<(), IngestError> {
    let b = |v: bool| if v { "1".to_string() } else { "0".to_string() };
    let mut w = csv::Writer::from_writer(out);
    let res = (|| {
        w.write_record(STATION_HEADER)?;
        for s in stations {
            w.write_record([
                s.id.clone(),
                s.name.clone(),
                s.lat.to_string(),
                s.lon.to_string(),
                s.zone.to_string(),
                s.n_lines.to_string(),
                b(s.terminal),
                b(s.overground),
                b(s.screen_door),
                b(s.rail_connect),
                s.station_age.to_string(),
                s.rolling_stock_age.to_string(),
                s.population.to_string(),
                s.employment.to_string(),
                s.imd.to_string(),
                s.domestic_area.to_string(),
                s.non_domestic_area.to_string(),
                s.other_area.to_string(),
                s.bus_stops.to_string(),
                b(s.biking),
                b(s.parking),
                s.road_area.to_string(),
                s.path_area.to_string(),
            ])?;
        }
        w.flush()?;
        Ok::<_, csv::Error>(())
    })();
    res.map_err(|e| IngestError::Write(e.to_string()))
}

pub fn read_edges<R: Read>(input: R, stations: &HashSet<String>) -> Result<Vec<Edge>, IngestError> {
    let mut rdr = reader(input, "edges", EDGE_HEADER)?;
    let mut edges = Vec::new();
    for row in rows(&mut rdr, "edges") {
        let (line, rec) = row?;
        if rec.len() != EDGE_HEADER.len() {
            return Err(IngestError::BadEdge { line, reason: format!("expected 3 fields, found {}", rec.len()) });
        }
        let (from, to, km) = (field(&rec, 0), field(&rec, 1), field(&rec, 2));
        for s in [from, to] {
            if !stations.contains(s) {
                return Err(IngestError::DanglingEdge { line, station: s.to_string() });
            }
        }
        let track_km: f64 = km.parse().map_err(|_| IngestError::BadTrackLength { line, value: km.to_string() })?;
        if !(track_km > 0.0 && track_km.is_finite()) {
            return Err(IngestError::BadTrackLength { line, value: km.to_string() });
        }
        edges.push(Edge { from: from.to_string(), to: to.to_string(), track_km });
    }
    Ok(edges)
}

pub fn write_edges<W: Write>(out: W, edges: &[Edge]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    let res = (|| {
        w.write_record(EDGE_HEADER)?;
        for e in edges {
            w.write_record([e.from.as_str(), &e.to, &e.track_km.to_string()])?;
        }
        w.flush()?;
        Ok::<_, csv::Error>(())
    })();
    res.map_err(|e| IngestError::Write(e.to_string()))
}

pub fn read_weather<R: Read>(
    input: R,
    stations: &HashSet<String>,
) -> Result<Parsed<WeatherSlot>, IngestError> {
    let mut rdr = reader(input, "weather", WEATHER_HEADER)?;
    let mut out = Parsed::new();
    let mut seen = HashSet::new();
    for row in rows(&mut rdr, "weather") {
        let (line, rec) = row?;
        match weather_from_row(&rec, stations) {
            Ok(w) if !seen.insert((w.station.clone(), w.slot_start)) => out.rejects.push(Reject {
                line,
                reason: format!("duplicate weather row for `{}` at {}", w.station, format_ts(&w.slot_start)),
            }),
            Ok(w) => out.records.push(w),
            Err(reason) => out.rejects.push(Reject { line, reason }),
        }
    }
    Ok(out)
}

fn weather_from_row(rec: &StringRecord, stations: &HashSet<String>) -> Result<WeatherSlot, String> {
    if rec.len() != WEATHER_HEADER.len() {
        return Err(format!("expected {} fields, found {}", WEATHER_HEADER.len(), rec.len()));
    }
    let station = field(rec, 0);
    if !stations.contains(station) {
        return Err(format!("unknown station `{station}`"));
    }
    let w = WeatherSlot {
        station: station.to_string(),
        slot_start: parse_ts_field("slot_start", field(rec, 1))?,
        temp_c: parse_f64("temp_c", field(rec, 2))?,
        wind_kmh: parse_f64("wind_kmh", field(rec, 3))?,
        rain: parse_bool(field(rec, 4)).map_err(|e| format!("rain: {e}"))?,
    };
    if w.wind_kmh < 0.0 {
        return Err("wind_kmh must be non-negative".into());
    }
    Ok(w)
}

pub fn write_weather<W: Write>(out: W, rows: &[WeatherSlot]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    let res = (|| {
        w.write_record(WEATHER_HEADER)?;
        for r in rows {
            w.write_record([
                r.station.as_str(),
                &format_ts(&r.slot_start),
                &r.temp_c.to_string(),
                &r.wind_kmh.to_string(),
                if r.rain { "1" } else { "0" },
            ])?;
        }
        w.flush()?;
        Ok::<_, csv::Error>(())
    })();
    res.map_err(|e| IngestError::Write(e.to_string()))
}

/// One weather reading per (station, day, slot) of the study window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherObs {
    pub temp_c: f64,
    pub wind_kmh: f64,
    pub rain: bool,
}

/// Dense weather grid, station-major then day then slot.
#[derive(Debug, Clone)]
pub struct WeatherGrid {
    obs: Vec<WeatherObs>,
    n_days: usize,
    n_slots: usize,
    /// Cells filled from the nearest same-station reading.
    pub gaps: usize,
    /// Readings that fell outside the window or off a slot boundary.
    pub unused: usize,
}

impl WeatherGrid {
    /// Builds the grid for `station_ids` (in panel order). Missing cells take
    /// the nearest-in-time reading of the same station, earlier on ties.
    pub fn build(
        rows: &[WeatherSlot],
        station_ids: &[String],
        window: &StudyWindow,
    ) -> Result<Self, IngestError> {
        let n_days = window.n_days();
        let n_slots = window.slots_per_day();
        let index: HashMap<&str, usize> =
            station_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut per_station: Vec<BTreeMap<usize, WeatherObs>> = vec![BTreeMap::new(); station_ids.len()];
        let mut unused = 0;
        for r in rows {
            let Some(&si) = index.get(r.station.as_str()) else {
                unused += 1;
                continue;
            };
            match window.slot_of(&r.slot_start) {
                Some(id) if window.slot_start(id) == r.slot_start => {
                    per_station[si].insert(
                        id.day * n_slots + id.slot,
                        WeatherObs { temp_c: r.temp_c, wind_kmh: r.wind_kmh, rain: r.rain },
                    );
                }
                _ => unused += 1,
            }
        }
        let per_day = n_days * n_slots;
        let mut obs = Vec::with_capacity(station_ids.len() * per_day);
        let mut gaps = 0;
        for (si, readings) in per_station.iter().enumerate() {
            if readings.is_empty() {
                return Err(IngestError::NoWeather(station_ids[si].clone()));
            }
            for t in 0..per_day {
                if let Some(o) = readings.get(&t) {
                    obs.push(*o);
                    continue;
                }
                gaps += 1;
                let before = readings.range(..t).next_back();
                let after = readings.range(t..).next();
                let fill = match (before, after) {
                    (Some((&b, ob)), Some((&a, oa))) => {
                        if t - b <= a - t {
                            ob
                        } else {
                            oa
                        }
                    }
                    (Some((_, ob)), None) => ob,
                    (None, Some((_, oa))) => oa,
                    (None, None) => unreachable!("station has readings"),
                };
                obs.push(*fill);
            }
        }
        Ok(Self { obs, n_days, n_slots, gaps, unused })
    }

    pub fn get(&self, station: usize, slot: SlotId) -> WeatherObs {
        self.obs[(station * self.n_days + slot.day) * self.n_slots + slot.slot]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn ids(v: &[&str]) -> HashSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn well_formed_trips_parse() {
        let csv = "card_id,entry_station,entry_ts,exit_station,exit_ts\n\
                   c1,S1,2013-10-28T08:00,S2,2013-10-28T08:20\n\
                   c2,S2,2013-10-28T09:00,S3,2013-10-28T09:12\n\
                   c3,S3,2013-10-28T23:00,S1,2013-10-28T23:40\n";
        let p = read_trips(csv.as_bytes(), &ids(&["S1", "S2", "S3"])).unwrap();
        assert_eq!(p.records.len(), 3);
        assert!(p.rejects.is_empty());
        assert_eq!(p.records[0].duration_min(), 20);
    }

    #[test]
    fn invalid_trips_become_rejects_with_line_numbers() {
        let csv = "card_id,entry_station,entry_ts,exit_station,exit_ts\n\
                   c1,S1,2013-10-28T08:20,S2,2013-10-28T08:20\n\
                   c2,S1,2013-10-28T08:20,,\n\
                   c3,S1,2013-10-28T25:00,S2,2013-10-28T08:20\n\
                   c4,S1,2013-10-28T23:50,S2,2013-10-29T00:10\n\
                   c5,S9,2013-10-28T08:20,S2,2013-10-28T08:30\n";
        let p = read_trips(csv.as_bytes(), &ids(&["S1", "S2"])).unwrap();
        assert!(p.records.is_empty());
        let reasons: Vec<_> = p.rejects.iter().map(|r| (r.line, r.reason.as_str())).collect();
        assert_eq!(reasons[0], (2, "non-positive duration"));
        assert_eq!(reasons[1], (3, "missing exit tap"));
        assert!(reasons[2].1.contains("unparseable timestamp"));
        assert!(reasons[3].1.contains("outside service hours"));
        assert!(reasons[4].1.contains("unknown station"));
        assert_eq!(p.rows_seen(), 5);
    }

    #[test]
    fn wrong_header_is_fatal() {
        let csv = "card,entry_station,entry_ts,exit_station,exit_ts\n";
        let err = read_trips(csv.as_bytes(), &ids(&["S1"])).unwrap_err();
        assert!(matches!(err, IngestError::Header { .. }));
        assert!(matches!(
            parse_trips(Path::new("/nonexistent/trips.csv"), &ids(&[])),
            Err(IngestError::Open { .. })
        ));
    }

    #[test]
    fn incident_threshold_filters_short_events() {
        let csv = "station,start_ts,end_ts\n\
                   S1,2013-10-28T10:07,2013-10-28T10:25\n\
                   S1,2013-10-28T10:07,2013-10-28T10:14\n\
                   S1,2013-10-28T10:07,2013-10-28T10:00\n";
        let p = read_incidents(csv.as_bytes(), &ids(&["S1"]), DEFAULT_THRESHOLD_MIN).unwrap();
        assert_eq!(p.records.len(), 1);
        assert_eq!(p.records[0].duration_min(), 18);
        assert_eq!(p.filtered, 1);
        assert_eq!(p.rejects[0].reason, "end before start");
    }

    fn station_row(id: &str) -> String {
        format!("{id},Name {id},51.5,-0.1,1,2,0,1,0,1,100,20,1000,500,20,10,5,3,4,1,0,200,100\n")
    }

    fn stations_csv(ids: &[&str]) -> String {
        let mut s = STATION_HEADER.join(",") + "\n";
        for id in ids {
            s.push_str(&station_row(id));
        }
        s
    }

    #[test]
    fn stations_and_edges_load() {
        let st = read_stations(stations_csv(&["A", "B", "C"]).as_bytes()).unwrap();
        assert_eq!(st.records.len(), 3);
        assert!(st.records[0].overground && !st.records[0].terminal);
        let known = ids(&["A", "B", "C"]);
        let e = read_edges("from,to,track_km\nA,B,1.5\nB,C,2\n".as_bytes(), &known).unwrap();
        assert_eq!(e.len(), 2);
    }

    #[test]
    fn dangling_edge_names_station() {
        let known = ids(&["A", "B"]);
        let err = read_edges("from,to,track_km\nA,X9,1.5\n".as_bytes(), &known).unwrap_err();
        assert!(err.to_string().contains("X9"));
        let err = read_edges("from,to,track_km\nA,B,0\n".as_bytes(), &known).unwrap_err();
        assert!(matches!(err, IngestError::BadTrackLength { .. }));
        let err = read_edges("from,to,track_km\nA,B,-1\n".as_bytes(), &known).unwrap_err();
        assert!(matches!(err, IngestError::BadTrackLength { .. }));
    }

    #[test]
    fn bad_station_rows_are_rejected() {
        let mut csv = stations_csv(&["A"]);
        csv.push_str("B,Name,51.5,-0.1,0,2,0,1,0,1,100,20,1000,500,20,10,5,3,4,1,0,200,100\n");
        csv.push_str(&station_row("A"));
        let st = read_stations(csv.as_bytes()).unwrap();
        assert_eq!(st.records.len(), 1);
        assert_eq!(st.rejects.len(), 2);
    }

    #[test]
    fn weather_gap_is_filled_from_adjacent_slot() {
        let day = NaiveDate::from_ymd_opt(2013, 10, 28).unwrap();
        let window = StudyWindow::new(vec![day], 15).unwrap();
        let mut rows = Vec::new();
        for slot in 0..72 {
            if slot == 10 {
                continue;
            }
            rows.push(WeatherSlot {
                station: "A".into(),
                slot_start: window.slot_start(SlotId { day: 0, slot }),
                temp_c: slot as f64,
                wind_kmh: 5.0,
                rain: false,
            });
        }
        let grid = WeatherGrid::build(&rows, &["A".to_string()], &window).unwrap();
        assert_eq!(grid.gaps, 1);
        // equidistant neighbours: the earlier one wins
        assert_eq!(grid.get(0, SlotId { day: 0, slot: 10 }).temp_c, 9.0);
        assert_eq!(grid.get(0, SlotId { day: 0, slot: 11 }).temp_c, 11.0);

        let full: Vec<_> = (0..72)
            .map(|slot| WeatherSlot {
                station: "A".into(),
                slot_start: window.slot_start(SlotId { day: 0, slot }),
                temp_c: 1.0,
                wind_kmh: 0.0,
                rain: true,
            })
            .collect();
        assert_eq!(WeatherGrid::build(&full, &["A".to_string()], &window).unwrap().gaps, 0);
        let err = WeatherGrid::build(&full, &["A".to_string(), "B".to_string()], &window).unwrap_err();
        assert!(matches!(err, IngestError::NoWeather(s) if s == "B"));
    }

    #[test]
    fn weather_rejects_duplicates_and_negative_wind() {
        let csv = "station,slot_start,temp_c,wind_kmh,rain\n\
                   A,2013-10-28T06:00,10,5,0\n\
                   A,2013-10-28T06:00,10,5,0\n\
                   A,2013-10-28T06:15,10,-1,0\n";
        let p = read_weather(csv.as_bytes(), &ids(&["A"])).unwrap();
        assert_eq!(p.records.len(), 1);
        assert_eq!(p.rejects.len(), 2);
    }
}
