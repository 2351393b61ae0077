//! Station-level vulnerability estimation for metro networks.
//!
//! The crate turns smart-card trips, incident logs, weather and network
//! topology into a panel of study units (station x interval x day), fits a
//! logistic propensity model for disruption, matches every disrupted unit to
//! undisrupted units of the same station and interval on other days, and
//! converts the matched differences into four vulnerability metrics. Stations
//! that were never disrupted get their metrics from a random-forest regressor.
//!
//! [`synthgen`] produces scenarios with known treatment effects so the whole
//! chain can be checked end to end.

// NaN has to fail the range checks, hence `!(x > 0.0)` style guards.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod effects;
pub mod error;
pub mod imputation;
pub mod ingest;
pub mod linalg;
pub mod matching;
pub mod metrics;
pub mod network;
pub mod panel;
pub mod propensity;
pub mod synthgen;
pub mod time;

pub use effects::{EffectEstimate, OutcomeKind};
pub use error::{Error, Result};
pub use imputation::{ForestModel, ForestParams};
pub use ingest::{IncidentRecord, Parsed, Reject, StationAttrs, TripRecord, WeatherSlot};
pub use matching::{MatchConfig, MatchMethod, MatchSet};
pub use metrics::{Metric, VulnerabilityRecord};
pub use network::NetworkGraph;
pub use panel::{Panel, StationBaseline};
pub use propensity::{DiagnosticsReport, Formula, PropensityModel};
pub use synthgen::{GroundTruthManifest, ScenarioConfig};
pub use time::{SlotId, StudyWindow};
