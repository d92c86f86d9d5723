use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

/// Provenance record written next to every run's output, including failed runs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: &'static str,
    pub tool_version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    /// The input config file, verbatim (also copied to `config.json`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_snapshot: Option<String>,
    /// The config after flag overrides.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effective_config: Option<serde_json::Value>,
    pub counts: BTreeMap<&'static str, u64>,
    pub stage_seconds: BTreeMap<&'static str, f64>,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(run_id: &str, command: &'static str) -> Self {
        Self {
            run_id: run_id.to_string(),
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            master_seed: None,
            config_snapshot: None,
            effective_config: None,
            counts: BTreeMap::new(),
            stage_seconds: BTreeMap::new(),
            status: "running",
            error: None,
        }
    }

    pub fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stage_seconds.insert(stage, start.elapsed().as_secs_f64());
        out
    }

    pub fn count(&mut self, key: &'static str, value: impl TryInto<u64>) {
        self.counts.insert(key, value.try_into().unwrap_or(u64::MAX));
    }

    /// Records the outcome and writes `run_manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path, outcome: Result<()>) -> Result<()> {
        match &outcome {
            Ok(()) => self.status = "ok",
            Err(e) => {
                self.status = "failed";
                self.error = Some(format!("{e:#}"));
            }
        }
        let written = std::fs::create_dir_all(dir)
            .and_then(|()| {
                let mut json = serde_json::to_vec_pretty(&self).expect("manifest serializes");
                json.push(b'\n');
                std::fs::write(dir.join("run_manifest.json"), json)
            })
            .with_context(|| format!("writing run manifest in {}", dir.display()));
        outcome.and(written)
    }
}
