use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] rdpg_core::Error),

    #[error("rep {rep}: {source}")]
    InRep {
        rep: usize,
        #[source]
        source: rdpg_core::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("output directory {} is not empty (pass --force to overwrite)", .0.display())]
    OutputExists(PathBuf),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// Process exit status: 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(e) | HarnessError::InRep { source: e, .. } if e.is_numerical() => 2,
            _ => 1,
        }
    }

    pub fn core(&self) -> Option<&rdpg_core::Error> {
        match self {
            HarnessError::Core(e) | HarnessError::InRep { source: e, .. } => Some(e),
            _ => None,
        }
    }
}

pub(crate) fn in_rep(rep: usize) -> impl FnOnce(rdpg_core::Error) -> HarnessError {
    move |source| HarnessError::InRep { rep, source }
}
