//! Command-line pipeline around `rcpn-core`.

pub mod commands;
pub mod config;
pub mod dataset;

use std::path::{Path, PathBuf};

pub use config::{parse_config, CliConfig, Command, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Clap(clap::Error),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] rcpn_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 0 success, 1 usage or config, 2 data, 3 numeric abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Clap(e) if !e.use_stderr() => 0,
            CliError::Clap(_) => 1,
            CliError::Core(rcpn_core::Error::NonFinite { .. }) => 3,
            _ => 2,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub(crate) fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}
