//! Command-line pipeline around `metrovuln-core`.

pub mod config;
pub mod geojson;
pub mod stages;

pub use config::{Overrides, PipelineConfig};
pub use stages::{MissingArtifact, Session, Stage};
