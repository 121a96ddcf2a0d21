//! Per-subcommand JSON configuration. Every field is optional; relative
//! paths inside a config file are resolved against the file's directory.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use twinforge::adapt::{PdcaLimits, Requirements};
use twinforge::components::{GrippingAssembly, ProcessParams, ThresholdConfig};
use twinforge::design::{DesignOptions, RankingSpec};
use twinforge::emulator::PlantConfig;
use twinforge::models::ModelSettings;
use twinforge::sim::{ControllerPolicy, CycleSpec};

use crate::manifest::Recorder;
use crate::{CliError, GlobalOpts};

/// Parse the `--config` file, or take the defaults when none was given.
/// Returns the config and the directory its relative paths refer to.
pub fn load<T: DeserializeOwned + Default>(g: &GlobalOpts, run: &mut Recorder) -> Result<(T, PathBuf), CliError> {
    let Some(path) = &g.config else {
        return Ok((T::default(), PathBuf::from(".")));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let cfg = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
    run.config(path);
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

/// Resolve `p` against `base` and record it as an input of the run.
pub fn input(base: &Path, p: &Path, run: &mut Recorder) -> Result<PathBuf, CliError> {
    let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    if !full.is_file() {
        return Err(CliError::Usage(format!("cannot read {}", full.display())));
    }
    run.config(&full);
    Ok(full)
}

pub fn process(base: &Path, p: &Option<PathBuf>, run: &mut Recorder) -> Result<ProcessParams, CliError> {
    match p {
        None => Ok(ProcessParams::table1()),
        Some(p) => {
            let path = input(base, p, run)?;
            ProcessParams::from_json_file(&path).map_err(|e| CliError::Usage(e.to_string()))
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateConfig {
    pub graph: Option<PathBuf>,
    pub translation_table: Option<PathBuf>,
    pub library: Option<PathBuf>,
    pub data_basis: Option<PathBuf>,
    /// Depths to package; every depth the library offers when empty.
    pub depths: Vec<u8>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub process: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    /// Hose and cups the candidates are evaluated with.
    pub assembly: Option<GrippingAssembly>,
    pub cycle: Option<CycleSpec>,
    pub ranking: Option<RankingSpec>,
    pub options: Option<DesignOptions>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub process: Option<PathBuf>,
    pub assembly: Option<GrippingAssembly>,
    pub cycle: Option<CycleSpec>,
    pub diameters_mm: Option<Vec<f64>>,
    pub options: Option<DesignOptions>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub process: Option<PathBuf>,
    pub assembly: Option<GrippingAssembly>,
    pub cycle: Option<CycleSpec>,
    pub leak_grid_mm: Option<Vec<f64>>,
    pub weight_grid_kg: Option<Vec<f64>>,
    /// Also write the full weight-by-leak feasibility matrix.
    pub full_grid: bool,
    pub options: Option<DesignOptions>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub process: Option<PathBuf>,
    pub assembly: Option<GrippingAssembly>,
    pub thresholds: Option<ThresholdConfig>,
    pub settings: Option<ModelSettings>,
    /// Simulate the variants of this twin package instead of the
    /// built-in models of `assembly`.
    pub package: Option<PathBuf>,
    pub depths: Vec<u8>,
    pub cycle: Option<CycleSpec>,
    pub cycles: u32,
    pub d_leak_mm: f64,
    pub dt: f64,
    pub decimation: usize,
    pub controller: ControllerPolicy,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            process: None,
            assembly: None,
            thresholds: None,
            settings: None,
            package: None,
            depths: vec![1, 2, 3, 4],
            cycle: None,
            cycles: 1,
            d_leak_mm: 0.0,
            dt: 1e-4,
            decimation: 10,
            controller: ControllerPolicy::default(),
        }
    }
}

/// Leak ramp fitted so H1 and H2 are lost at the given fractions of the
/// horizon.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampSpec {
    pub h1_frac: f64,
    pub h2_frac: f64,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmulateConfig {
    pub plant: PlantConfig,
    pub cycle: Option<CycleSpec>,
    pub cycles: u32,
    /// Replaces `plant.faults` with a calibrated ramp.
    pub ramp: Option<RampSpec>,
    pub dt: f64,
    pub decimation: usize,
    pub controller: ControllerPolicy,
}

impl Default for EmulateConfig {
    fn default() -> Self {
        Self {
            plant: PlantConfig::reference(),
            cycle: None,
            cycles: 1,
            ramp: None,
            dt: 1e-4,
            decimation: 10,
            controller: ControllerPolicy::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    /// The emulated plant whose measured trace drives adaptation.
    pub plant: PlantConfig,
    pub cycle: Option<CycleSpec>,
    pub cycles: u32,
    pub dt: f64,
    /// Depth of the model active before adaptation.
    pub initial_depth: u8,
    pub requirements: Requirements,
    pub limits: PdcaLimits,
    /// Seed the pool with depths 1 to 4 of the plant's catalog assembly.
    pub builtin_models: bool,
    /// Twin packages whose variants join the pool.
    pub packages: Vec<PathBuf>,
    /// Model id active before adaptation; overrides `initial_depth`.
    pub initial_model: Option<String>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            plant: PlantConfig::reference(),
            cycle: None,
            cycles: 2,
            dt: 1e-4,
            initial_depth: 2,
            requirements: Requirements::default(),
            limits: PdcaLimits::default(),
            builtin_models: true,
            packages: Vec::new(),
            initial_model: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub assembly: Option<GrippingAssembly>,
    pub thresholds: Option<ThresholdConfig>,
    pub dt: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            assembly: None,
            thresholds: None,
            dt: 1e-4,
        }
    }
}
