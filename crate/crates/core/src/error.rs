use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("truncation cutoff must be positive, got {0}")]
    NonPositiveCutoff(f64),

    #[error("scatterer radius {eps} outside allowed range {range}")]
    EpsOutOfRange { eps: f64, range: &'static str },

    #[error("vector is not unit length (|v| = {0})")]
    NonUnitVector(f64),

    #[error("start point lies strictly inside the disk (distance {distance}, radius {radius})")]
    StartInsideDisk { distance: f64, radius: f64 },

    #[error("collision point at distance {distance} from center, expected {radius}")]
    NotOnBoundary { distance: f64, radius: f64 },

    #[error("time {t} outside trajectory range [0, {end}]")]
    TimeOutOfRange { t: f64, end: f64 },

    #[error("mechanical interpolation disagrees with the algebraic update by {0:e}")]
    Inconsistent(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("path ended at time {end} before requested time {requested}")]
    ShortPath { end: f64, requested: f64 },

    #[error("schedule T(eps)*eps*|log eps| = {value} >= {limit} at eps = {eps}")]
    InadmissibleSchedule { eps: f64, value: f64, limit: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
