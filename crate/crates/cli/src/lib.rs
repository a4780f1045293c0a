//! Command implementations behind the `prosac` binary.

pub mod commands;
pub mod config;
pub mod output;

use std::io;
use std::path::PathBuf;

use prosac_core::{CertifyError, Decision, OracleError, TableError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid config `{path}`: {message}")]
    Config { path: PathBuf, message: String },
    #[error("`{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
}

pub const EXIT_CERTIFIED: i32 = 0;
pub const EXIT_NOT_CERTIFIED: i32 = 1;
pub const EXIT_INDETERMINATE: i32 = 2;
pub const EXIT_ERROR: i32 = 3;

pub fn exit_code(decision: Decision) -> i32 {
    match decision {
        Decision::CertifiedSafe => EXIT_CERTIFIED,
        Decision::NotCertified => EXIT_NOT_CERTIFIED,
        Decision::Indeterminate => EXIT_INDETERMINATE,
    }
}

/// Combined decision of several verdicts: any refusal to certify on
/// evidence wins, then any indeterminate result.
pub fn combine(decisions: impl IntoIterator<Item = Decision>) -> Decision {
    let mut out = Decision::CertifiedSafe;
    for d in decisions {
        match d {
            Decision::NotCertified => return Decision::NotCertified,
            Decision::Indeterminate => out = Decision::Indeterminate,
            Decision::CertifiedSafe => {}
        }
    }
    out
}
