use std::path::PathBuf;

/// Failures surfaced by the tooling crate.
///
/// [`Error::exit_code`] maps each variant onto the command-line contract:
/// 1 for anything the user can fix by changing inputs, 2 for numerical
/// breakdowns during training or checking.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {detail}")]
    Wav { path: PathBuf, detail: String },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("checkpoint {path}: format version {found}, expected {expected}")]
    CheckpointVersion { path: PathBuf, found: u32, expected: u32 },

    #[error("corpus: {0}")]
    Corpus(String),

    #[error(transparent)]
    Core(#[from] prls_core::Error),

    #[error("non-finite {what} at iteration {iteration}{}", snapshot_note(.snapshot))]
    NonFinite {
        what: String,
        iteration: usize,
        snapshot: Option<PathBuf>,
    },

    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

fn snapshot_note(p: &Option<PathBuf>) -> String {
    match p {
        Some(p) => format!("; state saved to {}", p.display()),
        None => String::new(),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } | Error::GradCheck(_) => 2,
            Error::Core(prls_core::Error::NonFinite(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
