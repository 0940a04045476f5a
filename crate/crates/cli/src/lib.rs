//! Command-line front end: argument structs, layered settings, the five
//! subcommands and the canonical experiment protocol.

pub mod commands;
pub mod protocol;
pub mod settings;

pub use commands::{run, Cli, Command};

/// Errors the binary maps to dedicated exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, bad config values, missing inputs. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// A verification subcommand found a failing property. Exit code 3.
    #[error("{0}")]
    Verification(String),
}

/// Exit code for an error chain: 2 for usage and configuration problems,
/// 3 for failed verification, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use rectidistill_core::Error as E;
    if let Some(e) = err.downcast_ref::<CliError>() {
        return match e {
            CliError::Usage(_) => 2,
            CliError::Verification(_) => 3,
        };
    }
    if let Some(e) = err.downcast_ref::<E>() {
        return match e.root() {
            E::InvalidParameter(_)
            | E::InvalidArchitecture(_)
            | E::InvalidSetup(_)
            | E::InvalidSchedule { .. }
            | E::DataParse { .. }
            | E::CheckpointParse { .. } => 2,
            _ => 1,
        };
    }
    1
}
