//! Pipeline configuration: one TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::Context;
use metrovuln_core::imputation::ImputeConfig;
use metrovuln_core::metrics::Ridership;
use metrovuln_core::propensity::{FitOptions, SupportMode};
use metrovuln_core::{ForestParams, Formula, MatchConfig, ScenarioConfig};
use serde::{Deserialize, Serialize};

/// Input table locations. Unset tables default to `<dir>/<name>.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    pub dir: PathBuf,
    pub trips: Option<PathBuf>,
    pub incidents: Option<PathBuf>,
    pub weather: Option<PathBuf>,
    pub stations: Option<PathBuf>,
    pub edges: Option<PathBuf>,
}

impl Default for InputPaths {
    fn default() -> Self {
        Self { dir: PathBuf::from("data"), trips: None, incidents: None, weather: None, stations: None, edges: None }
    }
}

impl InputPaths {
    fn pick(&self, set: &Option<PathBuf>, name: &str) -> PathBuf {
        set.clone().unwrap_or_else(|| self.dir.join(name))
    }
    pub fn trips(&self) -> PathBuf {
        self.pick(&self.trips, "trips.csv")
    }
    pub fn incidents(&self) -> PathBuf {
        self.pick(&self.incidents, "incidents.csv")
    }
    pub fn weather(&self) -> PathBuf {
        self.pick(&self.weather, "weather.csv")
    }
    pub fn stations(&self) -> PathBuf {
        self.pick(&self.stations, "stations.csv")
    }
    pub fn edges(&self) -> PathBuf {
        self.pick(&self.edges, "edges.csv")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub trees: usize,
    pub mtry: usize,
    pub min_node: usize,
}

impl Default for ForestSection {
    fn default() -> Self {
        let p = ForestParams::default();
        Self { trees: p.trees, mtry: p.mtry, min_node: p.min_node }
    }
}

/// Likelihood-ratio forward selection over the configured formula's terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub enabled: bool,
    pub alpha: f64,
}

impl Default for SelectSection {
    fn default() -> Self {
        Self { enabled: false, alpha: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds the synthetic scenario and the forest.
    pub seed: u64,
    pub out: PathBuf,
    pub interval_min: u32,
    pub threshold_min: i64,
    pub formula: Formula,
    pub support: SupportMode,
    pub kl_eps: f64,
    pub ridership: Ridership,
    /// Rows per ranking file.
    pub top_k: usize,
    pub inputs: InputPaths,
    pub matching: MatchConfig,
    pub irls: FitOptions,
    pub select: SelectSection,
    pub forest: ForestSection,
    pub folds: usize,
    pub min_train: usize,
    /// Used by `generate`; its seed and interval follow the top-level values.
    pub scenario: ScenarioConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let scenario = ScenarioConfig::default();
        let impute = ImputeConfig::default();
        Self {
            seed: scenario.seed,
            out: PathBuf::from("out"),
            interval_min: 15,
            threshold_min: metrovuln_core::ingest::DEFAULT_THRESHOLD_MIN,
            formula: Formula::standard(),
            support: SupportMode::Warn,
            kl_eps: 1e-6,
            ridership: Ridership::Disrupted,
            top_k: 10,
            inputs: InputPaths::default(),
            matching: MatchConfig::default(),
            irls: FitOptions::default(),
            select: SelectSection::default(),
            forest: ForestSection::default(),
            folds: impute.folds,
            min_train: impute.min_train,
            scenario,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub interval_min: Option<u32>,
    pub threshold_min: Option<i64>,
    pub match_m: Option<usize>,
    pub kl_eps: Option<f64>,
    pub trees: Option<usize>,
    pub select: bool,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) -> anyhow::Result<()> {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = &o.data {
            self.inputs.dir = v.clone();
        }
        if let Some(v) = o.interval_min {
            self.interval_min = v;
        }
        if let Some(v) = o.threshold_min {
            self.threshold_min = v;
        }
        if let Some(v) = o.match_m {
            self.matching.m = v;
        }
        if let Some(v) = o.kl_eps {
            self.kl_eps = v;
        }
        if let Some(v) = o.trees {
            self.forest.trees = v;
        }
        if o.select {
            self.select.enabled = true;
        }
        self.validate()
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.interval_min > 0 && 1080 % self.interval_min == 0, "interval_min must divide 1080 minutes");
        anyhow::ensure!(self.threshold_min >= 0, "threshold_min must be non-negative");
        anyhow::ensure!(self.kl_eps >= 0.0 && self.kl_eps.is_finite(), "kl_eps must be a non-negative number");
        anyhow::ensure!(self.forest.trees > 0, "forest.trees must be positive");
        anyhow::ensure!(self.select.alpha > 0.0 && self.select.alpha < 1.0, "select.alpha must lie in (0, 1)");
        anyhow::ensure!(self.folds >= 2, "folds must be at least 2");
        self.matching.validate()?;
        Ok(())
    }

    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            trees: self.forest.trees,
            mtry: self.forest.mtry,
            min_node: self.forest.min_node,
            seed: self.seed,
            bootstrap: true,
        }
    }

    pub fn impute_config(&self) -> ImputeConfig {
        ImputeConfig { forest: self.forest_params(), folds: self.folds, min_train: self.min_train }
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        ScenarioConfig { seed: self.seed, interval_min: self.interval_min, ..self.scenario.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn edited_config_round_trips_through_toml() {
        let mut cfg = PipelineConfig::default();
        cfg.matching.caliper = Some(0.05);
        cfg.inputs.trips = Some("elsewhere/trips.csv".into());
        cfg.formula = "rain + wind_kmh:overground".parse().unwrap();
        cfg.support = SupportMode::Trim;
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn flags_win_over_file() {
        let mut cfg = PipelineConfig::from_toml("seed = 3\n[matching]\nm = 4\n").unwrap();
        assert_eq!(cfg.matching.m, 4);
        cfg.apply(&Overrides { seed: Some(9), match_m: Some(1), ..Overrides::default() }).unwrap();
        assert_eq!((cfg.seed, cfg.matching.m), (9, 1));
        assert_eq!(cfg.scenario_config().seed, 9);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(PipelineConfig::from_toml("sede = 3\n").is_err());
        assert!(PipelineConfig::from_toml("interval_min = 7\n").is_err());
        assert!(PipelineConfig::from_toml("[matching]\nm = 0\n").is_err());
    }
}
