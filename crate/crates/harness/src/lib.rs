//! Configuration, single runs, sweeps and the dense-oracle suite behind the
//! `gevrey-evolve` command.

// `!(x > 0.0)` style checks are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod oracle;
pub mod pipeline;
pub mod sweep;

pub use config::{RunConfig, Setting};
pub use pipeline::Outcome;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "GEVREY_EVOLVE_THREADS";

/// Worker count requested through [`THREADS_ENV`], if set to a positive integer.
pub fn thread_cap() -> Result<Option<usize>, String> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("{THREADS_ENV} must be a positive integer, got {s:?}")),
        },
    }
}
