use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("unknown unit type id {0}")]
    UnknownUnitType(usize),
    #[error("tech tree: {0}")]
    TechTree(String),
    #[error("unit at ({x}, {y}) lies outside the {width}x{height} map")]
    OutOfBounds { x: u32, y: u32, width: usize, height: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("simulation: {0}")]
    Sim(String),
    #[error("replay {path}: {msg}")]
    Replay { path: String, msg: String },
    #[error("replay {path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("unsupported replay version {0:?}")]
    Version(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("config: {0}")]
    Config(String),
    #[error("model: {0}")]
    Model(String),
    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] defog_tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
