use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Process exit code for a manifest or configuration error.
pub const EXIT_MANIFEST: i32 = 2;
/// Process exit code for a numerical failure.
pub const EXIT_NUMERICAL: i32 = 3;
/// Process exit code for an I/O failure.
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("{module}: {source}")]
    Core {
        module: &'static str,
        #[source]
        source: ums_core::Error,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing inputs under {}: {}", dir.display(), missing.join(", "))]
    MissingInputs { dir: PathBuf, missing: Vec<String> },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Manifest(_) => EXIT_MANIFEST,
            HarnessError::Core { source, .. } => match source {
                e if e.is_numerical() => EXIT_NUMERICAL,
                ums_core::Error::Io(_) | ums_core::Error::Format { .. } => EXIT_IO,
                _ => EXIT_MANIFEST,
            },
            HarnessError::Io { .. } | HarnessError::MissingInputs { .. } => EXIT_IO,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}

/// Tags a core error with the module that raised it.
pub(crate) fn core(module: &'static str) -> impl Fn(ums_core::Error) -> HarnessError {
    move |source| HarnessError::Core { module, source }
}
