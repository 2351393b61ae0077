use std::collections::HashSet;

use chrono::{Duration, NaiveDate};
use metrovuln_core::ingest::{read_stations, read_trips, write_stations, write_trips};
use metrovuln_core::{StationAttrs, TripRecord};
use proptest::prelude::*;

const IDS: [&str; 4] = ["ALD", "BNK", "CHX", "DGE"];

fn ids() -> HashSet<String> {
    IDS.iter().map(|s| s.to_string()).collect()
}

fn trip() -> impl Strategy<Value = TripRecord> {
    ("[a-z0-9]{1,10}", 0..IDS.len(), 0..IDS.len(), 0u32..5, 360u32..1400, 1i64..40).prop_map(
        |(card, a, b, day, minute, dur)| {
            let date = NaiveDate::from_ymd_opt(2013, 10, 1 + day).unwrap();
            let entry_ts = date.and_hms_opt(minute / 60, minute % 60, 0).unwrap();
            TripRecord {
                card_id: card,
                entry_station: IDS[a].into(),
                entry_ts,
                exit_station: IDS[b].into(),
                exit_ts: entry_ts + Duration::minutes(dur),
            }
        },
    )
}

fn station() -> impl Strategy<Value = StationAttrs> {
    (
        "[A-Z]{3}",
        "[A-Za-z]{1,12}",
        (-90.0..90.0f64, -180.0..180.0f64),
        (1u32..9, 1u32..6),
        prop::array::uniform6(any::<bool>()),
        prop::array::uniform11(0.0..1e4f64),
    )
        .prop_map(|(id, name, (lat, lon), (zone, n_lines), flags, v)| StationAttrs {
            id,
            name,
            lat,
            lon,
            zone,
            n_lines,
            terminal: flags[0],
            overground: flags[1],
            screen_door: flags[2],
            rail_connect: flags[3],
            station_age: v[0],
            rolling_stock_age: v[1],
            population: v[2],
            employment: v[3],
            imd: v[4],
            domestic_area: v[5],
            non_domestic_area: v[6],
            other_area: v[7],
            bus_stops: v[8],
            biking: flags[4],
            parking: flags[5],
            road_area: v[9],
            path_area: v[10],
        })
}

/// A row that is either a valid trip or one of several malformed variants.
fn raw_row() -> impl Strategy<Value = String> {
    prop_oneof![
        trip().prop_map(|t| format!(
            "{},{},{},{},{}",
            t.card_id,
            t.entry_station,
            t.entry_ts.format("%Y-%m-%dT%H:%M"),
            t.exit_station,
            t.exit_ts.format("%Y-%m-%dT%H:%M")
        )),
        Just("c1,ALD,2013-10-01T08:00,,".to_string()),
        Just("c2,XXX,2013-10-01T08:00,BNK,2013-10-01T08:10".to_string()),
        Just("c3,ALD,2013-10-01T08:00,BNK,2013-10-01T07:50".to_string()),
        Just("c4,ALD,2013-10-01T05:00,BNK,2013-10-01T05:20".to_string()),
        Just("c5,ALD,2013-10-01T23:50,BNK,2013-10-02T00:10".to_string()),
        Just("c6,ALD,yesterday,BNK,2013-10-01T08:10".to_string()),
        Just("c7,ALD".to_string()),
    ]
}

proptest! {
    #[test]
    fn trips_round_trip_bit_exactly(trips in prop::collection::vec(trip(), 0..40)) {
        let mut first = Vec::new();
        write_trips(&mut first, &trips).unwrap();
        let parsed = read_trips(first.as_slice(), &ids()).unwrap();
        prop_assert!(parsed.rejects.is_empty());
        prop_assert_eq!(&parsed.records, &trips);
        let mut second = Vec::new();
        write_trips(&mut second, &parsed.records).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn stations_round_trip(stations in prop::collection::vec(station(), 0..8)) {
        let mut seen = HashSet::new();
        let unique: Vec<StationAttrs> = stations.into_iter().filter(|s| seen.insert(s.id.clone())).collect();
        let mut buf = Vec::new();
        write_stations(&mut buf, &unique).unwrap();
        let parsed = read_stations(buf.as_slice()).unwrap();
        prop_assert!(parsed.rejects.is_empty());
        prop_assert_eq!(parsed.records, unique);
    }

    #[test]
    fn every_row_is_a_record_or_a_reject(rows in prop::collection::vec(raw_row(), 0..60)) {
        let text = format!("card_id,entry_station,entry_ts,exit_station,exit_ts\n{}", rows.join("\n"));
        let parsed = read_trips(text.as_bytes(), &ids()).unwrap();
        prop_assert_eq!(parsed.records.len() + parsed.rejects.len(), rows.len());
        let lines: HashSet<u64> = parsed.rejects.iter().map(|r| r.line).collect();
        prop_assert_eq!(lines.len(), parsed.rejects.len());
    }
}
