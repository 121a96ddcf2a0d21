use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::{CliError, GlobalOpts};

/// Everything needed to repeat a run, written as `run_manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_paths: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub threads: usize,
    pub tool_version: String,
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
}

pub struct Recorder {
    out: PathBuf,
    started: Instant,
    configs: Vec<PathBuf>,
    outputs: Vec<String>,
    seed: Option<u64>,
    dt: Option<f64>,
    threads: usize,
}

impl Recorder {
    pub fn new(g: &GlobalOpts) -> Self {
        Self {
            out: g.out.clone(),
            started: Instant::now(),
            configs: Vec::new(),
            outputs: Vec::new(),
            seed: g.seed,
            dt: g.dt,
            threads: g.threads,
        }
    }

    pub fn config(&mut self, path: &Path) {
        let p = path.canonicalize().unwrap_or_else(|_| path.to_path_buf());
        if !self.configs.contains(&p) {
            self.configs.push(p);
        }
    }

    /// Seed and step actually used, which may come from the config.
    pub fn resolved(&mut self, seed: Option<u64>, dt: Option<f64>) {
        self.seed = seed.or(self.seed);
        self.dt = dt.or(self.dt);
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::Domain(format!("cannot write {}: {e}", path.display())))?;
        self.produced(name);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(CliError::domain)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Record a file some other writer placed in the output directory.
    pub fn produced(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn finish(mut self, subcommand: &str) -> Result<(), CliError> {
        self.outputs.sort();
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            config_paths: std::mem::take(&mut self.configs),
            seed: self.seed,
            dt: self.dt,
            threads: self.threads,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: std::mem::take(&mut self.outputs),
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        let path = self.path("run_manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(CliError::domain)? + "\n";
        std::fs::write(&path, text)
            .map_err(|e| CliError::Domain(format!("cannot write {}: {e}", path.display())))?;
        for o in &manifest.outputs {
            println!("{}", self.path(o).display());
        }
        Ok(())
    }
}
