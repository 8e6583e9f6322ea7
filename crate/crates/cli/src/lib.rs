pub mod app;
pub mod config;
pub mod output;
pub mod profiles;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{load_scenario, save_scenario};
pub use output::{write_log, write_kpis, read_trace};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: at `{field}`: {message}", path.display())]
    Schema {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("{}:{line}: {message}", path.display())]
    Profile {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("`{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("scenario {name:?}: {message}")]
    Scenario { name: String, message: String },
}
