#![allow(dead_code)]

pub mod engine;

use std::path::PathBuf;

use nfslicer::sim::SimConfig;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

/// Loads a committed config with `key=value` overrides applied.
pub fn load(name: &str, overrides: &[&str]) -> SimConfig {
    let text = std::fs::read_to_string(config_path(name)).unwrap();
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    SimConfig::from_toml_with_overrides(&text, &overrides).unwrap()
}
