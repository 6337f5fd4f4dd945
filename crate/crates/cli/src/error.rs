use std::path::{Path, PathBuf};

use thiserror::Error;

use sactx_core::provider::ProviderError;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Provider(#[from] ProviderError),

    #[error(transparent)]
    Core(sactx_core::Error),
}

impl From<sactx_core::Error> for CliError {
    fn from(e: sactx_core::Error) -> Self {
        match e {
            sactx_core::Error::Provider(p) => CliError::Provider(p),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// 0 ok, 1 usage, 2 data, 3 provider.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(sactx_core::Error::Usage(_)) => 1,
            CliError::Provider(_) => 3,
            _ => 2,
        }
    }
}

pub fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}
