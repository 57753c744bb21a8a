use thiserror::Error;

use crate::model::ActorId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("actor {0} not present")]
    UnknownActor(ActorId),
    #[error("trace is not failure-free (outcome: {0})")]
    NotFailureFree(String),
    #[error("seed scenario {0} is not failure-free")]
    SeedNotFailureFree(String),
    #[error("clip window too short: {frames} frames at {tick_rate} Hz")]
    WindowDegenerate { frames: usize, tick_rate: f64 },
    #[error("no route waypoint within {radius} m of the clip end location")]
    NoValidEndWaypoint { radius: f64 },
    #[error("clip has no relevant NPC to mutate")]
    NoRelevantNpc,
    #[error("no valid replacement model for actor {0}")]
    NoValidModel(ActorId),
    #[error("actor {0} is not a vehicle")]
    TargetNotVehicle(ActorId),
    #[error("clip spawn state is invalid: {0}")]
    InvalidClip(String),
    #[error("unknown scenario variant {0}")]
    UnknownVariant(String),
    #[error("malformed trace: {0}")]
    TraceFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidScenario(_) => "InvalidScenario",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::UnknownActor(_) => "UnknownActor",
            Error::NotFailureFree(_) => "NotFailureFree",
            Error::SeedNotFailureFree(_) => "SeedNotFailureFree",
            Error::WindowDegenerate { .. } => "WindowDegenerate",
            Error::NoValidEndWaypoint { .. } => "NoValidEndWaypoint",
            Error::NoRelevantNpc => "NoRelevantNpc",
            Error::NoValidModel(_) => "NoValidModel",
            Error::TargetNotVehicle(_) => "TargetNotVehicle",
            Error::InvalidClip(_) => "InvalidClip",
            Error::UnknownVariant(_) => "UnknownVariant",
            Error::TraceFormat(_) => "TraceFormat",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }

    /// Errors caused by bad user input rather than a failed computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidScenario(_)
                | Error::InvalidConfig(_)
                | Error::UnknownVariant(_)
                | Error::TraceFormat(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
