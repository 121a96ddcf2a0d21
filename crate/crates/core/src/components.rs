//! Handling task, gripper hardware and the closed-form sizing math.
//!
//! Vacuum is relative vacuum in mbar throughout (0 = atmospheric).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ambient pressure used by every lumped-volume balance.
pub const P_ATM_MBAR: f64 = 1013.0;
pub const PA_PER_MBAR: f64 = 100.0;
/// Dynamic viscosity of air at room temperature, Pa·s.
pub const AIR_VISCOSITY: f64 = 1.81e-5;
pub const DEFAULT_HYSTERESIS_MBAR: f64 = 10.0;
pub const DEFAULT_DEAD_VOLUME_CM3: f64 = 1.0;
/// Specific energy of compressed air, kWh per normal cubic metre.
pub const DEFAULT_AIR_SPECIFIC_ENERGY_KWH_PER_M3: f64 = 0.12;

const DEFAULT_CATALOG: &str = include_str!("../data/catalog.json");
const DEFAULT_PROCESS: &str = include_str!("../data/process.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComponentError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(
        "generator {generator} cannot reach the required vacuum of {required_mbar:.2} mbar (max {max_mbar} mbar)"
    )]
    GeneratorInfeasible {
        generator: String,
        required_mbar: f64,
        max_mbar: f64,
    },
    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),
    #[error("cannot read {path}: {message}")]
    Load { path: String, message: String },
}

pub fn lpm_to_m3s(lpm: f64) -> f64 {
    lpm / 60_000.0
}

/// Handling task parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessParams {
    pub object_mass_kg: f64,
    pub acceleration: f64,
    pub safety_factor: f64,
    pub friction_coeff: f64,
    pub gravity: f64,
    pub max_cycle_time_s: f64,
    pub robot_payload_kg: f64,
}

impl ProcessParams {
    /// The shipped handling task (0.15 kg part, 5 m/s², S = 3, μ = 0.5).
    pub fn table1() -> Self {
        serde_json::from_str(DEFAULT_PROCESS).expect("shipped process.json is valid")
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ComponentError> {
        let p: Self = read_json(path)?;
        p.validate()?;
        Ok(p)
    }

    pub fn with_mass(&self, kg: f64) -> Self {
        Self {
            object_mass_kg: kg,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ComponentError> {
        let bad = |m: &str| Err(ComponentError::InvalidParameter(m.to_string()));
        if !(self.object_mass_kg >= 0.0) {
            return bad("object mass must be >= 0");
        }
        if !(self.acceleration >= 0.0) {
            return bad("acceleration must be >= 0");
        }
        if !(self.safety_factor >= 1.0) {
            return bad("safety factor must be >= 1");
        }
        if !(self.friction_coeff > 0.0 && self.friction_coeff <= 1.0) {
            return bad("friction coefficient must lie in (0, 1]");
        }
        if !(self.gravity > 0.0 && self.max_cycle_time_s > 0.0 && self.robot_payload_kg > 0.0) {
            return bad("gravity, cycle time and payload must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatedInput {
    /// Electrical input power in W.
    ElectricW(f64),
    /// Compressed-air consumption in l/min.
    AirLpm(f64),
}

impl RatedInput {
    pub fn is_electric(&self) -> bool {
        matches!(self, RatedInput::ElectricW(_))
    }

    /// Power drawn while evacuating. Air consumption is converted with the
    /// specific energy of compressed air (kWh per normal m³).
    pub fn active_power_w(&self, air_kwh_per_m3: f64) -> f64 {
        match *self {
            RatedInput::ElectricW(w) => w,
            RatedInput::AirLpm(lpm) => lpm_to_m3s(lpm) * air_kwh_per_m3 * 3.6e6,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            RatedInput::ElectricW(v) | RatedInput::AirLpm(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropOff {
    Valve,
    BlowOff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Positioning {
    OnGripper,
    BesideRobot,
}

/// How far above the part-present threshold H1 is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    Plus20,
    #[default]
    Plus100,
}

impl ThresholdPolicy {
    pub fn offset_mbar(self) -> f64 {
        match self {
            ThresholdPolicy::Plus20 => 20.0,
            ThresholdPolicy::Plus100 => 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VacuumGenerator {
    pub type_id: String,
    pub name: String,
    /// Volumetric suction capacity at zero vacuum, l/min.
    pub q_max_lpm: f64,
    /// Maximum relative vacuum, mbar.
    pub dp_max_mbar: f64,
    pub rated_input: RatedInput,
    pub drop_off: DropOff,
    pub cost_eur: f64,
    pub weight_g: f64,
    pub positioning: Positioning,
    #[serde(default)]
    pub threshold_policy: ThresholdPolicy,
}

impl VacuumGenerator {
    pub fn validate(&self) -> Result<(), ComponentError> {
        if !(self.q_max_lpm > 0.0) {
            return Err(ComponentError::InvalidParameter(format!(
                "{}: q_max must be > 0",
                self.name
            )));
        }
        if !(self.dp_max_mbar > 0.0 && self.dp_max_mbar <= P_ATM_MBAR) {
            return Err(ComponentError::InvalidParameter(format!(
                "{}: max vacuum must lie in (0, {P_ATM_MBAR}] mbar",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hose {
    pub length_mm: f64,
    pub inner_diameter_mm: f64,
}

impl Hose {
    pub fn volume_m3(&self) -> f64 {
        let r = self.inner_diameter_mm * 1e-3 / 2.0;
        PI * r * r * self.length_mm * 1e-3
    }

    /// Laminar (Hagen-Poiseuille) conductance in m³/(s·mbar). A zero-length
    /// hose is no restriction at all and returns `None`.
    pub fn conductance(&self) -> Option<f64> {
        if self.length_mm <= 0.0 {
            return None;
        }
        let d = self.inner_diameter_mm * 1e-3;
        let l = self.length_mm * 1e-3;
        Some(PI * d.powi(4) / (128.0 * AIR_VISCOSITY * l) * PA_PER_MBAR)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuctionCupSet {
    pub diameter_mm: f64,
    pub count: u32,
    #[serde(default = "default_dead_volume")]
    pub dead_volume_cm3: f64,
}

fn default_dead_volume() -> f64 {
    DEFAULT_DEAD_VOLUME_CM3
}

impl SuctionCupSet {
    pub fn effective_area_m2(&self) -> f64 {
        let r = self.diameter_mm * 1e-3 / 2.0;
        f64::from(self.count) * PI * r * r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrippingAssembly {
    pub generator: VacuumGenerator,
    pub hose: Hose,
    pub cups: SuctionCupSet,
}

impl GrippingAssembly {
    /// ECBPMi, 750 mm x 3 mm hose, three 11.7 mm cups.
    pub fn reference() -> Self {
        let catalog = Catalog::default_catalog();
        Self::with_generator(catalog.get("ECBPMi").expect("ECBPMi in catalog").clone())
    }

    pub fn with_generator(generator: VacuumGenerator) -> Self {
        Self {
            generator,
            hose: Hose {
                length_mm: 750.0,
                inner_diameter_mm: 3.0,
            },
            cups: SuctionCupSet {
                diameter_mm: 11.7,
                count: 3,
                dead_volume_cm3: DEFAULT_DEAD_VOLUME_CM3,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ComponentError> {
        self.generator.validate()?;
        if !(self.hose.length_mm >= 0.0 && self.hose.inner_diameter_mm > 0.0) {
            return Err(ComponentError::InvalidParameter(
                "hose length must be >= 0 and diameter > 0".into(),
            ));
        }
        if !(self.cups.diameter_mm > 0.0) || self.cups.count == 0 {
            return Err(ComponentError::InvalidParameter(
                "suction cups need diameter > 0 and count >= 1".into(),
            ));
        }
        if !(self.cups.dead_volume_cm3 >= 0.0) {
            return Err(ComponentError::InvalidParameter("dead volume must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    /// Part-present threshold, mbar.
    pub h2: f64,
    /// In-control-range threshold, mbar.
    pub h1: f64,
    /// Hysteresis below H1, mbar.
    pub hysteresis: f64,
}

impl ThresholdConfig {
    pub fn new(h2: f64, h1: f64, hysteresis: f64) -> Result<Self, ComponentError> {
        let t = Self { h2, h1, hysteresis };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ComponentError> {
        if !(self.h1 > self.h2) {
            return Err(ComponentError::InvalidParameter("H1 must exceed H2".into()));
        }
        if !(self.hysteresis > 0.0 && self.h1 - self.hysteresis > 0.0) {
            return Err(ComponentError::InvalidParameter(
                "hysteresis must be > 0 and below H1".into(),
            ));
        }
        Ok(())
    }

    /// Level below which the in-control latch releases and evacuation resumes.
    pub fn release_level(&self) -> f64 {
        self.h1 - self.hysteresis
    }
}

/// Measured per-unit values that override type-level catalog data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: String,
    pub type_id: String,
    pub parameter_overrides: BTreeMap<String, f64>,
    #[serde(default = "yes")]
    pub usable: bool,
}

fn yes() -> bool {
    true
}

impl InstanceRecord {
    /// Every override must name a type-level parameter.
    pub fn validate_against<'a>(
        &self,
        type_params: impl IntoIterator<Item = &'a String>,
    ) -> Result<(), ComponentError> {
        let known: Vec<&String> = type_params.into_iter().collect();
        for name in self.parameter_overrides.keys() {
            if !known.contains(&name) {
                return Err(ComponentError::InvalidParameter(format!(
                    "instance {} overrides unknown parameter `{name}`",
                    self.instance_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub generators: Vec<VacuumGenerator>,
}

impl Catalog {
    /// The four preselected generators (two electric, two pneumatic).
    pub fn default_catalog() -> Self {
        serde_json::from_str(DEFAULT_CATALOG).expect("shipped catalog.json is valid")
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ComponentError> {
        let c: Self = read_json(path)?;
        for g in &c.generators {
            g.validate()?;
        }
        Ok(c)
    }

    /// Look up by display name or type id.
    pub fn get(&self, key: &str) -> Option<&VacuumGenerator> {
        self.generators
            .iter()
            .find(|g| g.name == key || g.type_id == key)
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ComponentError> {
    let text = std::fs::read_to_string(path).map_err(|e| ComponentError::Load {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| ComponentError::Load {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Holding force in N: (g + a) · m · S / μ.
pub fn holding_force(p: &ProcessParams) -> Result<f64, ComponentError> {
    if !(p.friction_coeff > 0.0) {
        return Err(ComponentError::InvalidParameter(
            "friction coefficient must be > 0".into(),
        ));
    }
    Ok((p.gravity + p.acceleration) * p.object_mass_kg * p.safety_factor / p.friction_coeff)
}

/// Vacuum (mbar) needed to hold the part with the given cup set.
pub fn required_vacuum(p: &ProcessParams, cups: &SuctionCupSet) -> Result<f64, ComponentError> {
    if !(cups.diameter_mm > 0.0) || cups.count == 0 {
        return Err(ComponentError::InvalidParameter(
            "suction cups need diameter > 0 and count >= 1".into(),
        ));
    }
    Ok(holding_force(p)? / cups.effective_area_m2() / PA_PER_MBAR)
}

/// Integer switching thresholds for a required vacuum.
pub fn thresholds_for(
    required_mbar: f64,
    gen: &VacuumGenerator,
    policy: ThresholdPolicy,
) -> Result<ThresholdConfig, ComponentError> {
    if !(required_mbar < gen.dp_max_mbar) {
        return Err(ComponentError::GeneratorInfeasible {
            generator: gen.name.clone(),
            required_mbar,
            max_mbar: gen.dp_max_mbar,
        });
    }
    let h2 = required_mbar.max(0.0).ceil();
    ThresholdConfig::new(h2, h2 + policy.offset_mbar(), DEFAULT_HYSTERESIS_MBAR)
}

/// Evacuated volume in m³: hose bore plus cup dead volumes.
pub fn system_volume(asm: &GrippingAssembly) -> f64 {
    asm.hose.volume_m3() + f64::from(asm.cups.count) * asm.cups.dead_volume_cm3 * 1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    OnGripper,
    BesideRobot,
    Infeasible,
}

pub fn placement_check(asm: &GrippingAssembly, p: &ProcessParams) -> Placement {
    let carried = asm.generator.weight_g * 1e-3 + p.object_mass_kg;
    if carried <= p.robot_payload_kg {
        Placement::OnGripper
    } else if asm.generator.positioning == Positioning::BesideRobot {
        Placement::BesideRobot
    } else {
        Placement::Infeasible
    }
}
