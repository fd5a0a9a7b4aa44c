use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("configuration keys `{0}` and `{1}` disagree")]
    Conflict(String, String),
    #[error("could not parse configuration: {0}")]
    Parse(String),
    #[error("negative position {0}")]
    NegativePosition(f64),
    #[error("lane {lane} out of range 1..={n_lanes}")]
    LaneOutOfRange { lane: usize, n_lanes: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdmError {
    #[error("non-finite input `{0}`")]
    NonFinite(&'static str),
    #[error("gap must be positive, got {0}")]
    NonPositiveGap(f64),
    #[error("vehicle at {position} is already past the stop line at {stop_line}")]
    PastStopLine { position: f64, stop_line: f64 },
    #[error(transparent)]
    Geometry(#[from] ConfigError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no crossing time in [{window_start}, {window_end}] reaches the stop line within speed bounds (best violation {violation:.4} m/s)")]
    InfeasibleWindow {
        window_start: f64,
        window_end: f64,
        violation: f64,
    },
    #[error("vehicle at {position} is already past the stop point {stop_point}")]
    AlreadyPastStopPoint { position: f64, stop_point: f64 },
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("invalid plan request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("collision in lane {lane} at t={t:.2}s: vehicle {rear} at {rear_position:.3} m is not behind vehicle {front} at {front_position:.3} m")]
    Collision {
        t: f64,
        lane: usize,
        front: u64,
        rear: u64,
        front_position: f64,
        rear_position: f64,
    },
    #[error("clock step {step} is not on a block boundary")]
    NotOnBoundary { step: u64 },
    #[error("block {block} has not been actuated")]
    BoundaryNotActuated { block: u64 },
    #[error("block {block} was already actuated")]
    AlreadyActuated { block: u64 },
    #[error(transparent)]
    Idm(#[from] IdmError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no completed journeys in group {0}")]
    EmptyGroup(String),
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed table: {0}")]
    Malformed(String),
}
