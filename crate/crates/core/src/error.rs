use std::fmt;

use thiserror::Error;

use crate::spin_algebra::HalfInt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid spin label 2j = {0}")]
    InvalidSpin(i32),

    #[error("{m} is not a valid projection of spin {j}")]
    InvalidProjection { j: HalfInt, m: HalfInt },

    #[error("spin {0} exceeds the supported range (2j <= {max})", max = crate::spin_algebra::MAX_TWO_J)]
    SpinTooLarge(HalfInt),

    #[error("generator is not Hermitian (max deviation {0:.3e})")]
    NonHermitian(f64),

    #[error("phase undefined: |<jm|U|jm>| = {0:.3e} is below threshold")]
    UndefinedPhase(f64),

    #[error("consecutive path vertices {0} and {1} are antipodal; geodesic is not unique")]
    AmbiguousGeodesic(usize, usize),

    #[error("invalid geodesic path: {0}")]
    InvalidPath(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("invalid guide field: {0}")]
    InvalidGuideField(String),

    #[error("channel list is empty")]
    EmptyChannels,

    #[error("profile error: {0}")]
    Profile(String),

    #[error("no pi/2-separated extremum pair found: {0}")]
    NoExtrema(String),

    #[error("no solution for channel 2m'={channel}: target {target:.6} is outside the channel range")]
    NoSolution { channel: i32, target: f64 },

    #[error("inconsistent data: channel candidate sets have no common root at {at}")]
    Inconsistent { at: String },

    #[error("ambiguous match at {at}: surviving candidates {survivors:?}")]
    Ambiguous { at: String, survivors: Vec<f64> },

    #[error("recovered spin-1/2 extremes out of order: x_min = {x_min} > x_max = {x_max}")]
    Ordering { x_min: f64, x_max: f64 },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Profile(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Profile(e.to_string())
    }
}

/// Pipeline stage at which an extraction failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Setup,
    Extrema,
    Inversion,
    Matching,
    Recovery,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Setup => "setup",
            Stage::Extrema => "extrema",
            Stage::Inversion => "inversion",
            Stage::Matching => "matching",
            Stage::Recovery => "recovery",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl PipelineError {
    pub fn new(stage: Stage, source: Error) -> Self {
        Self { stage, source }
    }
}
