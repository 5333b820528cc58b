//! Run artifacts: CSV files with metadata headers and a JSON sidecar.

use std::path::{Path, PathBuf};

use dxyz_core::trajectories::GENERATOR;
use serde::Serialize;
use serde_json::Value;

use crate::config::ExperimentConfig;

pub const UNITS: &str = "time in units of 1/gamma, rates in units of gamma";

/// Collects the files of one run and writes the sidecar last.
pub struct RunOutput {
    dir: PathBuf,
    command: String,
    metadata: Vec<(String, String)>,
    files: Vec<String>,
}

impl RunOutput {
    pub fn create(command: &str, config: &ExperimentConfig) -> std::io::Result<Self> {
        std::fs::create_dir_all(&config.output.dir)?;
        let metadata = vec![
            ("command".to_string(), command.to_string()),
            ("config".to_string(), config.to_json()),
            ("units".to_string(), UNITS.to_string()),
            ("generator".to_string(), GENERATOR.to_string()),
            ("base_seed".to_string(), config.run.base_seed.to_string()),
        ];
        Ok(Self {
            dir: config.output.dir.clone(),
            command: command.to_string(),
            metadata,
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Metadata header lines shared by every CSV of the run.
    pub fn metadata(&self) -> &[(String, String)] {
        &self.metadata
    }

    pub fn metadata_with(&self, extra: &[(&str, String)]) -> Vec<(String, String)> {
        let mut m = self.metadata.clone();
        m.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        m
    }

    /// Writes `name` from a buffer filled by `fill`.
    pub fn write<F>(&mut self, name: &str, fill: F) -> std::io::Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        std::fs::write(self.dir.join(name), buf)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes `<command>.json` with the resolved config, file list and
    /// command-specific results.
    pub fn finish<R: Serialize>(self, config: &ExperimentConfig, results: &R) -> std::io::Result<PathBuf> {
        #[derive(Serialize)]
        struct Sidecar<'a, R> {
            command: &'a str,
            version: &'a str,
            generator: &'a str,
            units: &'a str,
            config: &'a ExperimentConfig,
            files: &'a [String],
            results: &'a R,
        }
        let sidecar = Sidecar {
            command: &self.command,
            version: env!("CARGO_PKG_VERSION"),
            generator: GENERATOR,
            units: UNITS,
            config,
            files: &self.files,
            results,
        };
        let mut text = serde_json::to_string_pretty(&sidecar).map_err(std::io::Error::other)?;
        text.push('\n');
        let path = self.dir.join(format!("{}.json", self.command));
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

/// Replaces non-finite numbers, which JSON cannot hold, with null.
pub fn finite(v: f64) -> Value {
    if v.is_finite() {
        Value::from(v)
    } else {
        Value::Null
    }
}

/// File-name fragment for a coupling value, e.g. `1.25` becomes `1p25`.
pub fn jy_tag(jy: f64) -> String {
    format!("{jy}").replace('-', "m").replace('.', "p")
}
