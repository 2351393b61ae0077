//! GeoJSON export of the per-station metrics.

use std::collections::HashMap;

use metrovuln_core::{Metric, StationAttrs, VulnerabilityRecord};
use serde_json::{json, Map, Value};

fn number(v: Option<f64>) -> Value {
    v.filter(|x| x.is_finite()).map_or(Value::Null, Value::from)
}

/// Builds a FeatureCollection of station points. Records whose station has
/// no coordinates are skipped; the second value counts them.
pub fn feature_collection(records: &[VulnerabilityRecord], stations: &[StationAttrs]) -> (Value, usize) {
    let coords: HashMap<&str, &StationAttrs> = stations.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut features = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for r in records {
        let Some(st) = coords.get(r.station.as_str()).filter(|s| s.lat.is_finite() && s.lon.is_finite()) else {
            skipped += 1;
            continue;
        };
        let mut props = Map::new();
        props.insert("station".into(), r.station.clone().into());
        props.insert("name".into(), st.name.clone().into());
        props.insert("zone".into(), st.zone.into());
        for m in Metric::ALL {
            props.insert(m.name().into(), number(m.get(r)));
        }
        props.insert("tau_entry".into(), number(r.tau_entry));
        props.insert("tau_speed".into(), number(r.tau_speed));
        props.insert("baseline_entry".into(), number(Some(r.baseline_entry)));
        props.insert("baseline_speed".into(), number(r.baseline_speed));
        props.insert("T_d".into(), r.t_d.into());
        props.insert("imputed".into(), r.imputed.into());
        features.push(json!({
            "type": "Feature",
            "geometry": { "type": "Point", "coordinates": [st.lon, st.lat] },
            "properties": props,
        }));
    }
    (json!({ "type": "FeatureCollection", "features": features }), skipped)
}
