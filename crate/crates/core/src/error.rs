use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration, grid or shape mismatch.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A reprojected point coincides with the source camera centre.
    #[error("degenerate point: reprojected point coincides with the camera centre")]
    DegeneratePoint,

    /// The evaluation set is empty or otherwise unusable.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Missing, unreadable or malformed input file.
    #[error("input error ({path}): {message}")]
    Input { path: PathBuf, message: String },

    /// The optimiser produced a non-finite loss.
    #[error("numerical divergence at iteration {iteration}")]
    Divergence {
        iteration: usize,
        /// Losses of the accepted iterations before divergence.
        trajectory: Vec<f64>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn input(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Input {
            path: path.into(),
            message: msg.to_string(),
        }
    }
}
