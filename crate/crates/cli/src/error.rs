use std::fmt;
use std::path::{Path, PathBuf};

/// Process exit status for each failure class.
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_INVARIANT: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Invariant(String),
    Io(PathBuf, std::io::Error),
    Core(oltsm_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) | CliError::Io(..) => EXIT_DATA,
            CliError::Invariant(_) => EXIT_INVARIANT,
            CliError::Core(e) => match e {
                oltsm_core::Error::InvalidConfig(_) => EXIT_USAGE,
                oltsm_core::Error::Invariant(_) => EXIT_INVARIANT,
                _ => EXIT_DATA,
            },
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |e| CliError::Io(path.to_path_buf(), e)
    }

    pub fn data(path: &Path) -> impl FnOnce(oltsm_core::Error) -> CliError + '_ {
        move |e| CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Invariant(m) => write!(f, "internal invariant violated: {m}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<oltsm_core::Error> for CliError {
    fn from(e: oltsm_core::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
