//! Config-driven experiment runner around the `gdro` solver library:
//! dataset generation, multi-seed solver suites with CSV trace output, and
//! cross-run comparison tables.

pub mod commands;
pub mod config;

pub use commands::{cmd_compare, cmd_gen_data, cmd_run, write_summary};
pub use config::ExperimentConfig;

/// Process exit code for an error: 2 for configuration and validation
/// problems, 3 for I/O, 4 for numerical failure.
pub fn exit_code(err: &gdro::Error) -> i32 {
    match err {
        gdro::Error::InvalidArgument(_) | gdro::Error::Schema(_) => 2,
        gdro::Error::Io(_) | gdro::Error::Csv(_) => 3,
        gdro::Error::Numerical(_) => 4,
    }
}
