use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Orbit escapes carry the exit step because
/// mu-a.e. orbits are supposed to stay inside the domain of the map;
/// escapes measure discretization defects and are never silently clamped.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies outside the chart domain")]
    OutsideDomain,

    #[error("orbit left the admissible set at step {step}")]
    Escape { step: usize },

    #[error("no admissible radius above resolution; smallest tested r = {min_tested}")]
    Resolution { min_tested: f64 },

    #[error("sublevel-set sample is empty")]
    EmptySublevel,

    #[error("grid resolution {resolution} is not finer than the covering radius {radius}")]
    CoarseGrid { resolution: f64, radius: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integral of {component} diverges under refinement")]
    Divergent { component: String },

    #[error("density is not normalized: total mass {mass}")]
    NotNormalized { mass: f64 },

    #[error("{escaped} of {total} orbits escaped; estimate aborted")]
    EscapeRate { escaped: usize, total: usize },

    #[error("partition has no sampled support")]
    EmptyPartition,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("pipeline stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
