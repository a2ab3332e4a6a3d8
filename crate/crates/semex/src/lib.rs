//! Scenario runner and file formats for the semex protocol core.
//!
//! [`run_exchange`] drives one producer-to-consumer sale through commit,
//! proof, mint, pricing, purchase and reveal on a simulated ledger.
//! [`bench_overhead`] and [`bench_revenue`] produce the two CSV experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod exchange;
pub mod export;

use serde::Serialize;
use thiserror::Error;

pub use bench::{bench_overhead, bench_revenue, OverheadRow, RevenueRow};
pub use config::ScenarioConfig;
pub use exchange::{run_exchange, ExchangeReport};

#[derive(Debug, Error)]
pub enum AppError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: String,
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Domain(_) | AppError::Io(_) => 1,
        }
    }

    /// One-line JSON record for stderr.
    pub fn to_record(&self) -> String {
        let error = match self {
            AppError::Config(_) => "config",
            AppError::Domain(_) => "domain",
            AppError::Io(_) => "io",
        };
        serde_json::to_string(&ErrorRecord { error, message: self.to_string() }).expect("record serializes")
    }
}

pub(crate) fn domain(e: impl std::fmt::Display) -> AppError {
    AppError::Domain(e.to_string())
}
