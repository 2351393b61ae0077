//! Fixtures shared by the benchmarks.

use metrovuln_core::ingest::{Edge, WeatherGrid};
use metrovuln_core::panel::{assign_treatment, build_study_units};
use metrovuln_core::synthgen::{generate_scenario, Scenario};
use metrovuln_core::{NetworkGraph, Panel, ScenarioConfig, StudyWindow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A generated scenario plus the inputs needed to rebuild its panel.
pub struct PanelFixture {
    pub scenario: Scenario,
    pub ids: Vec<String>,
    pub window: StudyWindow,
    pub graph: NetworkGraph,
    pub grid: WeatherGrid,
}

impl PanelFixture {
    pub fn new(n_days: usize) -> Self {
        let cfg = ScenarioConfig { n_days, ..ScenarioConfig::default() };
        let scenario = generate_scenario(&cfg).expect("scenario");
        let ids: Vec<String> = scenario.stations.iter().map(|s| s.id.clone()).collect();
        let days = (0..n_days).map(|d| cfg.start_date + chrono::Duration::days(d as i64)).collect();
        let window = StudyWindow::new(days, cfg.interval_min).expect("window");
        let graph = NetworkGraph::new(&ids, &scenario.edges).expect("graph");
        let grid = WeatherGrid::build(&scenario.weather, &ids, &window).expect("weather");
        Self { scenario, ids, window, graph, grid }
    }

    pub fn panel(&self) -> Panel {
        let t = assign_treatment(&self.scenario.incidents, &self.ids, &self.window).expect("treatment");
        build_study_units(&self.scenario.trips, &t, &self.grid, &self.scenario.stations, &self.graph, &self.window)
            .expect("panel")
    }
}

/// Random connected graph: a spanning tree plus extra edges.
pub fn random_graph(n: usize, extra: usize, seed: u64) -> (Vec<String>, Vec<Edge>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<String> = (0..n).map(|i| format!("S{i:03}")).collect();
    let mut edges = Vec::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        edges.push(Edge { from: ids[j].clone(), to: ids[i].clone(), track_km: rng.random_range(0.3..3.0) });
    }
    for _ in 0..extra {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.push(Edge { from: ids[a].clone(), to: ids[b].clone(), track_km: rng.random_range(0.3..3.0) });
        }
    }
    (ids, edges)
}

/// Nonlinear regression rows with `p` features.
pub fn regression_rows(n: usize, p: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y = x.iter().map(|r| 10.0 * r[0].sin() * r[1] + r[2..].iter().sum::<f64>()).collect();
    (x, y)
}

/// Probability vector of length `k`.
pub fn distribution(k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}
