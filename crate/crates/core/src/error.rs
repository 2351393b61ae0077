use thiserror::Error;

use crate::effects::EffectError;
use crate::imputation::ImputeError;
use crate::ingest::IngestError;
use crate::matching::MatchError;
use crate::metrics::MetricError;
use crate::network::NetworkError;
use crate::panel::PanelError;
use crate::propensity::PropensityError;
use crate::synthgen::SynthError;

/// Any failure raised by the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Propensity(#[from] PropensityError),
    #[error(transparent)]
    Matching(#[from] MatchError),
    #[error(transparent)]
    Effects(#[from] EffectError),
    #[error(transparent)]
    Metrics(#[from] MetricError),
    #[error(transparent)]
    Imputation(#[from] ImputeError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
