//! Lumped-volume physics shared by the continuous models.

use serde::{Deserialize, Serialize};

use crate::components::{
    lpm_to_m3s, GrippingAssembly, Hose, SuctionCupSet, ThresholdConfig, VacuumGenerator,
    PA_PER_MBAR, P_ATM_MBAR,
};

pub const DISCHARGE_COEFF: f64 = 0.6;
pub const AIR_DENSITY: f64 = 1.2;

/// Tunables that are not catalog data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    /// Electrical standby draw while an electric generator is controlled off, W.
    pub standby_power_w: f64,
    /// kWh per normal m³ of compressed air.
    pub air_kwh_per_m3: f64,
    /// Venting time constant during blow-off / valve drop, s.
    pub tau_blow_s: f64,
    /// Fixed RK2 sub-steps per engine step.
    pub substeps: u32,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            standby_power_w: 0.2,
            air_kwh_per_m3: crate::components::DEFAULT_AIR_SPECIFIC_ENERGY_KWH_PER_M3,
            tau_blow_s: 0.02,
            substeps: 1,
        }
    }
}

/// What the generator is evacuating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Gripper { hose: Hose, cups: SuctionCupSet },
    /// A rigid test volume connected directly to the generator port.
    Tank { volume_cm3: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub generator: VacuumGenerator,
    pub layout: Layout,
}

impl PlantSpec {
    pub fn tank(generator: VacuumGenerator, volume_cm3: f64) -> Self {
        Self {
            generator,
            layout: Layout::Tank { volume_cm3 },
        }
    }

    pub fn volume_m3(&self) -> f64 {
        match &self.layout {
            Layout::Gripper { hose, cups } => gripper_volume(hose, cups),
            Layout::Tank { volume_cm3 } => volume_cm3 * 1e-6,
        }
    }

    pub fn conductance(&self) -> Option<f64> {
        match &self.layout {
            Layout::Gripper { hose, .. } => hose.conductance(),
            Layout::Tank { .. } => None,
        }
    }

    pub fn as_assembly(&self) -> Option<GrippingAssembly> {
        match &self.layout {
            Layout::Gripper { hose, cups } => Some(GrippingAssembly {
                generator: self.generator.clone(),
                hose: hose.clone(),
                cups: cups.clone(),
            }),
            Layout::Tank { .. } => None,
        }
    }

    /// No-leak evacuation time constant with the hose restriction in series.
    pub fn tau_s(&self) -> f64 {
        evacuation_tau(
            self.volume_m3(),
            &self.generator,
            self.conductance(),
        )
    }
}

impl From<&GrippingAssembly> for PlantSpec {
    fn from(asm: &GrippingAssembly) -> Self {
        Self {
            generator: asm.generator.clone(),
            layout: Layout::Gripper {
                hose: asm.hose.clone(),
                cups: asm.cups.clone(),
            },
        }
    }
}

pub(crate) fn gripper_volume(hose: &Hose, cups: &SuctionCupSet) -> f64 {
    hose.volume_m3() + f64::from(cups.count) * cups.dead_volume_cm3 * 1e-6
}

/// Linear pump characteristic, m³/s.
pub fn pump_flow(dp_mbar: f64, gen: &VacuumGenerator) -> f64 {
    lpm_to_m3s(gen.q_max_lpm) * (1.0 - dp_mbar / gen.dp_max_mbar).max(0.0)
}

/// Flow delivered at the chamber when the hose conductance (m³/(s·mbar))
/// sits in series with the pump. Without a restriction this is `pump_flow`.
pub fn delivered_flow(dp_mbar: f64, gen: &VacuumGenerator, conductance: Option<f64>) -> f64 {
    match conductance {
        None => pump_flow(dp_mbar, gen),
        Some(c) => {
            let slope = lpm_to_m3s(gen.q_max_lpm) / gen.dp_max_mbar;
            pump_flow(dp_mbar, gen) * c / (slope + c)
        }
    }
}

/// Sharp-edged orifice leak at the cups, m³/s.
pub fn leak_flow(dp_mbar: f64, d_leak_mm: f64) -> f64 {
    if d_leak_mm <= 0.0 || dp_mbar <= 0.0 {
        return 0.0;
    }
    let d = d_leak_mm * 1e-3;
    let area = std::f64::consts::PI * d * d / 4.0;
    DISCHARGE_COEFF * area * (2.0 * dp_mbar * PA_PER_MBAR / AIR_DENSITY).sqrt()
}

pub fn evacuation_tau(volume_m3: f64, gen: &VacuumGenerator, conductance: Option<f64>) -> f64 {
    let q = lpm_to_m3s(gen.q_max_lpm);
    let restriction = conductance.map_or(0.0, |c| 1.0 / c);
    volume_m3 / P_ATM_MBAR * (gen.dp_max_mbar / q + restriction)
}

/// Exponential evacuation curve from atmosphere.
pub fn d3_vacuum(t_since_suction: f64, tau: f64, dp_max: f64) -> f64 {
    if t_since_suction <= 0.0 {
        return 0.0;
    }
    dp_max * (1.0 - (-t_since_suction / tau).exp())
}

/// Time for the exponential curve to go from `from` to `to` (None if never).
pub fn exp_rise_time(from: f64, to: f64, tau: f64, dp_max: f64) -> Option<f64> {
    if to <= from {
        return Some(0.0);
    }
    if to >= dp_max {
        return None;
    }
    Some(tau * ((dp_max - from) / (dp_max - to)).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct D4State {
    pub dp: f64,
    pub pump_active: bool,
    pub energy_j: f64,
    pub in_control: bool,
    pub part_present: bool,
}

/// Air-saving control and output logic evaluated at vacuum `dp`.
pub fn control_update(
    state: D4State,
    dp: f64,
    thresholds: &ThresholdConfig,
    suction: bool,
) -> D4State {
    let mut s = state;
    s.dp = dp;
    s.part_present = dp >= thresholds.h2;
    if dp >= thresholds.h1 {
        s.in_control = true;
        s.pump_active = false;
    } else if dp < thresholds.release_level() {
        s.in_control = false;
        s.pump_active = suction;
    }
    if !suction {
        s.pump_active = false;
    }
    s
}

/// Inputs to the chamber balance that stay fixed over a step.
#[derive(Debug, Clone, Copy)]
pub struct Chamber<'a> {
    pub generator: &'a VacuumGenerator,
    pub volume_m3: f64,
    pub conductance: Option<f64>,
    pub d_leak_mm: f64,
    pub tau_blow_s: f64,
}

/// dΔp/dt in mbar/s.
pub fn d4_rhs(dp: f64, pump_active: bool, blow_off: bool, chamber: &Chamber<'_>) -> f64 {
    let k = P_ATM_MBAR / chamber.volume_m3;
    let leak = leak_flow(dp, chamber.d_leak_mm);
    if blow_off {
        -dp / chamber.tau_blow_s - k * leak
    } else if pump_active {
        k * (delivered_flow(dp, chamber.generator, chamber.conductance) - leak)
    } else {
        -k * leak
    }
}
