use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate {value} on axis {axis} lies outside the mapped extent (half extent {half_extent})")]
    OutOfExtent {
        axis: char,
        value: f64,
        half_extent: f64,
    },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid occupancy configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid integrator configuration: {0}")]
    InvalidIntegrator(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("malformed input: {0}")]
    Input(String),

    #[error("map file parse error at byte {offset}: {message}")]
    MapFormat { offset: u64, message: String },

    #[error("scan parse error at line {line}: {message}")]
    ScanFormat { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
