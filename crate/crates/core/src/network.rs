//! Station graph with cached all-pairs shortest track distances.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use thiserror::Error;

use crate::ingest::{Edge, TripRecord};

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("unknown station `{0}`")]
    UnknownStation(String),
    #[error("edge {from}-{to} has non-positive length {km}")]
    BadWeight { from: String, to: String, km: f64 },
}

/// Undirected weighted station graph. Distances are computed once at
/// construction; queries afterwards are lookups.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
    dist: Vec<f64>,
}

#[derive(PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then node index
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl NetworkGraph {
    pub fn new(station_ids: &[String], edges: &[Edge]) -> Result<Self, NetworkError> {
        let index: HashMap<String, usize> =
            station_ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let mut adjacency = vec![Vec::new(); station_ids.len()];
        for e in edges {
            let a = *index.get(&e.from).ok_or_else(|| NetworkError::UnknownStation(e.from.clone()))?;
            let b = *index.get(&e.to).ok_or_else(|| NetworkError::UnknownStation(e.to.clone()))?;
            if !(e.track_km > 0.0) {
                return Err(NetworkError::BadWeight { from: e.from.clone(), to: e.to.clone(), km: e.track_km });
            }
            adjacency[a].push((b, e.track_km));
            adjacency[b].push((a, e.track_km));
        }
        let n = station_ids.len();
        let mut dist = vec![f64::INFINITY; n * n];
        for source in 0..n {
            let row = dijkstra(&adjacency, source);
            dist[source * n..(source + 1) * n].copy_from_slice(&row);
        }
        // the two directions sum the same path in opposite order
        for a in 0..n {
            for b in (a + 1)..n {
                let d = dist[a * n + b].min(dist[b * n + a]);
                dist[a * n + b] = d;
                dist[b * n + a] = d;
            }
        }
        Ok(Self { ids: station_ids.to_vec(), index, adjacency, dist })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Shortest distance by node index; `None` when unreachable.
    pub fn distance(&self, a: usize, b: usize) -> Option<f64> {
        let d = self.dist[a * self.ids.len() + b];
        d.is_finite().then_some(d)
    }

    /// Shortest track distance between two stations; `Ok(None)` when no path exists.
    pub fn shortest_path_km(&self, origin: &str, dest: &str) -> Result<Option<f64>, NetworkError> {
        let a = self.index_of(origin).ok_or_else(|| NetworkError::UnknownStation(origin.to_string()))?;
        let b = self.index_of(dest).ok_or_else(|| NetworkError::UnknownStation(dest.to_string()))?;
        Ok(self.distance(a, b))
    }

    /// Unordered station pairs with no connecting path.
    pub fn disconnected_pairs(&self) -> usize {
        let n = self.ids.len();
        (0..n).flat_map(|a| ((a + 1)..n).map(move |b| (a, b))).filter(|&(a, b)| self.distance(a, b).is_none()).count()
    }

    /// Mean length of the edges incident to a station (0 for isolated nodes).
    pub fn avg_adjacent_km(&self, node: usize) -> f64 {
        let adj = &self.adjacency[node];
        if adj.is_empty() {
            0.0
        } else {
            adj.iter().map(|&(_, w)| w).sum::<f64>() / adj.len() as f64
        }
    }

    pub fn neighbours(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adjacency[node].iter().copied()
    }
}

fn dijkstra(adjacency: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adjacency.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Frontier { dist: 0.0, node: source });
    while let Some(Frontier { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(next, w) in &adjacency[node] {
            let cand = d + w;
            if cand < dist[next] {
                dist[next] = cand;
                heap.push(Frontier { dist: cand, node: next });
            }
        }
    }
    dist
}

/// Travel speed of a single trip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TripSpeed {
    /// km/h along the shortest path.
    Speed(f64),
    /// Entry and exit at the same station: distance 0, no meaningful speed.
    Degenerate,
    /// No path between the two stations.
    NoPath,
    /// Journey shorter than one minute.
    ZeroDuration,
}

pub fn trip_speed(trip: &TripRecord, graph: &NetworkGraph) -> Result<TripSpeed, NetworkError> {
    let minutes = trip.duration_min();
    if minutes <= 0 {
        return Ok(TripSpeed::ZeroDuration);
    }
    if trip.entry_station == trip.exit_station {
        return Ok(TripSpeed::Degenerate);
    }
    Ok(match graph.shortest_path_km(&trip.entry_station, &trip.exit_station)? {
        Some(km) => TripSpeed::Speed(km / (minutes as f64 / 60.0)),
        None => TripSpeed::NoPath,
    })
}
