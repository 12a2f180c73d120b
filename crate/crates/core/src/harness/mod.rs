//! Configuration, persistence, charts and scenario runners behind the CLI.

pub mod config;
pub mod metrics;
pub mod plots;
pub mod runs;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "METAHRL_OUT";
