//! Configuration parsing and command orchestration for the `colsim` binary.

pub mod commands;
pub mod config;

pub use commands::{cmd_run, cmd_stats, cmd_sweep, load_config, CliError, Overrides};
pub use config::{parse_config, preset_config, ConfigError, RunConfig, PRESETS};
