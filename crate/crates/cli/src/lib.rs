//! `endd`: data generation, ensemble training, distillation, evaluation and
//! sweeps, driven by one JSON config plus flags.
//!
//! Every subcommand is also a plain function in [`commands`] so pipelines
//! can be scripted from Rust.

pub mod args;
pub mod artifacts;
pub mod commands;
pub mod config;
pub mod report;

pub use args::{Cli, Command};
pub use commands::run;
pub use config::RunConfig;
pub use endd_core;

/// Short machine-readable class of a failure.
pub fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<endd_core::Error>() {
            return match core {
                endd_core::Error::Io(_) => "io",
                endd_core::Error::Json(_) | endd_core::Error::Csv(_) | endd_core::Error::Parse { .. } => "parse",
                endd_core::Error::Config(_) => "config",
                endd_core::Error::Shape(_) | endd_core::Error::LabelOutOfRange { .. } => "shape",
                _ => "numeric",
            };
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
        if cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return "parse";
        }
    }
    "error"
}
