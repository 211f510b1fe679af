//! Multi-camera tracklet fusion with per-object particle filters.
//!
//! Cameras report short geodetic tracklets. The [`fusion::FusionEngine`]
//! reorders them by event time behind a watermark, associates each point to a
//! track, updates that track's particle filter, and predicts trajectories to
//! raise collision alerts. [`simulator`] generates reproducible scenarios and
//! [`metrics`] scores the output against ground truth.

// Range checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod association;
pub mod events;
pub mod filter;
pub mod fusion;
pub mod geo;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod simulator;
pub mod transport;

pub use association::{AssociationConfig, Track, TrackId, TrackStatus};
pub use events::{Event, TimedEvent, TruthRecord};
pub use filter::{FilterConfig, KinematicState, Observation, Particle, ParticleFilter};
pub use fusion::{CollisionAlert, EngineConfig, EngineError, FusionConfig, FusionEngine};
pub use geo::{EnuPoint, GeoPoint, ReferenceOrigin};
pub use metrics::{MetricsConfig, MetricsReport};
pub use model::{ClassLabel, TrackPoint, Tracklet, TrackletMessage};
pub use pipeline::RunConfig;
pub use simulator::ScenarioConfig;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: events::ReadError,
    },
    #[error(transparent)]
    Transport(#[from] transport::TransportError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn read(path: &Path, source: events::ReadError) -> Self {
        Error::Read {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status: 1 for bad configuration, 2 for unreadable or
    /// malformed input and output.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Engine(_) => 1,
            Error::Io { .. } | Error::Read { .. } | Error::Transport(_) => 2,
        }
    }
}
