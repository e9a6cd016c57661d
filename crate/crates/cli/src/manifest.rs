use std::time::{SystemTime, UNIX_EPOCH};

use perpetua::MatrixQLaw;
use serde::Serialize;
use serde_json::Value;

/// Everything needed to re-run a command. Only `timestamp` varies between runs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub subcommand: &'static str,
    pub law: String,
    pub law_hash: String,
    pub parameters: Value,
    pub seed: Option<u64>,
    pub workers: usize,
    pub version: &'static str,
    pub timestamp: u64,
}

impl Manifest {
    pub fn new(subcommand: &'static str, source: &str, law: &MatrixQLaw, parameters: Value, seed: Option<u64>, workers: usize) -> Self {
        Self {
            subcommand,
            law: source.to_string(),
            law_hash: law.hash().to_string(),
            parameters,
            seed,
            workers,
            version: env!("CARGO_PKG_VERSION"),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }
}
