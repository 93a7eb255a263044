use thiserror::Error;

/// Signal returned when a density is evaluated at a point outside the
/// support of the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("point lies outside the target support")]
pub struct OutsideSupport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid shift: {0}")]
    InvalidShift(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("likelihood tempering requires a target with a likelihood/base split")]
    MissingSplit,

    #[error("cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("config serialization error: {0}")]
    TomlSer(#[from] toml::ser::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input rather than by a failure while running.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::DegenerateData(_)
            | Error::InvalidShift(_)
            | Error::MissingSplit
            | Error::TomlDe(_) => true,
            Error::Cell { source, .. } => source.is_user_error(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
