pub mod config;
pub mod run;
pub mod svg;

pub use config::{parse_config, ConfigError, RunConfig};
pub use run::{run, RunError, RunSummary};
