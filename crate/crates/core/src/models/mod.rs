//! The gripping system at modeling depths 1 to 4.
//!
//! Every depth exposes the same signal interface: two cyclic inputs
//! (suction, blow-off), two cyclic outputs (part present / H2, in control
//! range / H1) and the non-cyclic vacuum level and power draw. Only the
//! internal state differs.

mod d1;
mod d2;
mod d3;
mod d4;
pub mod physics;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use d1::DiscreteModel;
pub use d2::DelayModel;
pub use d3::CurveModel;
pub use d4::LumpedModel;
pub use physics::{
    control_update, d3_vacuum, d4_rhs, leak_flow, pump_flow, D4State, Layout, ModelSettings,
    PlantSpec,
};

use crate::components::{ComponentError, ThresholdConfig, VacuumGenerator};
use crate::metadata::{
    BehaviorKind, Discipline, FreeParameter, ModelMetadata, ModelingDepth, ModelingRange,
};

pub type ParamMap = BTreeMap<String, f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model {model} has no parameter `{name}`")]
    UnknownParameter { model: String, name: String },
    #[error("parameter `{name}` = {value} is invalid: {reason}")]
    InvalidValue {
        name: String,
        value: f64,
        reason: String,
    },
    #[error("no model of depth {0} exists")]
    UnsupportedDepth(u8),
    #[error(transparent)]
    Component(#[from] ComponentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Inputs {
    pub suction: bool,
    pub blow_off: bool,
}

impl Inputs {
    pub const IDLE: Inputs = Inputs {
        suction: false,
        blow_off: false,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Outputs {
    /// H2 signal.
    pub part_present: bool,
    /// H1 signal.
    pub in_control: bool,
    pub vacuum_mbar: f64,
    pub power_w: f64,
}

/// One sample of every signal at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalFrame {
    pub t: f64,
    pub suction: bool,
    pub blow_off: bool,
    pub part_present: bool,
    pub in_control: bool,
    pub vacuum_mbar: f64,
    pub power_w: f64,
}

impl SignalFrame {
    pub fn new(t: f64, inputs: Inputs, out: Outputs) -> Self {
        Self {
            t,
            suction: inputs.suction,
            blow_off: inputs.blow_off,
            part_present: out.part_present,
            in_control: out.in_control,
            vacuum_mbar: out.vacuum_mbar,
            power_w: out.power_w,
        }
    }

    pub fn inputs(&self) -> Inputs {
        Inputs {
            suction: self.suction,
            blow_off: self.blow_off,
        }
    }
}

/// Output switching instant located inside a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputEvent {
    pub t: f64,
    pub outputs: Outputs,
}

/// A steppable behavior model.
///
/// The engine calls [`reset`](Self::reset), then alternates
/// [`apply_inputs`](Self::apply_inputs) at input edges with
/// [`advance`](Self::advance) over intervals of constant inputs.
pub trait BehaviorModel: Send + Sync + fmt::Debug {
    fn metadata(&self) -> &ModelMetadata;

    fn parameters(&self) -> ParamMap;

    fn set_parameter(&mut self, name: &str, value: f64) -> Result<(), ModelError>;

    /// Return to t = 0 conditions (atmospheric, outputs low, energy zero).
    fn reset(&mut self);

    /// Discrete update at an input edge.
    fn apply_inputs(&mut self, t: f64, inputs: Inputs, events: &mut Vec<OutputEvent>);

    /// Advance from `t` to `t + h`. Returns the number of model evaluations.
    fn advance(&mut self, t: f64, h: f64, events: &mut Vec<OutputEvent>) -> u64;

    fn outputs(&self) -> Outputs;

    fn energy_j(&self) -> f64 {
        0.0
    }

    /// Depths 1 and 2 report vacuum as 0 without modeling it.
    fn vacuum_modeled(&self) -> bool;

    fn box_clone(&self) -> Box<dyn BehaviorModel>;

    fn depth(&self) -> ModelingDepth {
        self.metadata().depth
    }

    fn set_parameters(&mut self, params: &ParamMap) -> Result<(), ModelError> {
        for (k, v) in params {
            self.set_parameter(k, *v)?;
        }
        Ok(())
    }
}

impl Clone for Box<dyn BehaviorModel> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

pub(crate) fn unknown(model: &ModelMetadata, name: &str) -> ModelError {
    ModelError::UnknownParameter {
        model: model.model_id.clone(),
        name: name.to_string(),
    }
}

pub(crate) fn require(name: &str, value: f64, ok: bool, reason: &str) -> Result<f64, ModelError> {
    if ok && value.is_finite() {
        Ok(value)
    } else {
        Err(ModelError::InvalidValue {
            name: name.to_string(),
            value,
            reason: reason.to_string(),
        })
    }
}

pub(crate) fn set_threshold(
    thresholds: &mut ThresholdConfig,
    name: &str,
    value: f64,
) -> Option<Result<(), ModelError>> {
    let mut t = *thresholds;
    match name {
        "h2" => t.h2 = value,
        "h1" => t.h1 = value,
        "hysteresis" => t.hysteresis = value,
        _ => return None,
    }
    Some(match t.validate() {
        Ok(()) => {
            *thresholds = t;
            Ok(())
        }
        Err(e) => Err(ModelError::InvalidValue {
            name: name.to_string(),
            value,
            reason: e.to_string(),
        }),
    })
}

pub(crate) fn threshold_params(t: &ThresholdConfig, p: &mut ParamMap) {
    p.insert("h2".into(), t.h2);
    p.insert("h1".into(), t.h1);
    p.insert("hysteresis".into(), t.hysteresis);
}

/// Metadata of the shipped gripper model at `depth`, with fit bounds scaled
/// from the generator's catalog values.
pub fn gripper_metadata(
    depth: ModelingDepth,
    generator: &VacuumGenerator,
) -> Result<ModelMetadata, ModelError> {
    let fluidic: BTreeSet<Discipline> = [Discipline::Fluidic].into_iter().collect();
    let (behavior, free, disciplines, validity) = match depth {
        ModelingDepth::Discrete => (
            BehaviorKind::Ideal,
            vec![],
            fluidic,
            "signal level only; no timing, no vacuum",
        ),
        ModelingDepth::DiscreteTemporal => (
            BehaviorKind::Ideal,
            vec![FreeParameter::new("t_evac", "s", 0.0, 2.0)],
            fluidic,
            "fixed evacuation delay; vacuum not modeled",
        ),
        ModelingDepth::ContinuousSimplified => (
            BehaviorKind::Ideal,
            vec![
                FreeParameter::new("tau", "s", 0.01, 1.0),
                FreeParameter::new(
                    "dp_max",
                    "mbar",
                    0.8 * generator.dp_max_mbar,
                    1.2 * generator.dp_max_mbar,
                ),
            ],
            fluidic,
            "leak-free exponential evacuation; no air-saving control",
        ),
        ModelingDepth::PhysicalNonSpatial => (
            BehaviorKind::ErrorProne,
            vec![
                FreeParameter::new("d_leak", "mm", 0.0, 2.0),
                FreeParameter::new(
                    "q_max",
                    "l/min",
                    0.5 * generator.q_max_lpm,
                    1.5 * generator.q_max_lpm,
                ),
            ],
            [Discipline::Fluidic, Discipline::Electrical].into_iter().collect(),
            "isothermal lumped volume; laminar hose; orifice leak at the cups",
        ),
        ModelingDepth::PhysicalSpatial => return Err(ModelError::UnsupportedDepth(5)),
    };
    Ok(ModelMetadata {
        model_id: format!("gripper.{}.d{}", generator.name, depth.level()),
        depth,
        disciplines,
        range: ModelingRange::System,
        behavior,
        free_parameters: free,
        validity: validity.to_string(),
        runtime_class: depth.level(),
    })
}

/// Build the shipped model of `plant` at `depth`. Depth 2 and 3 timing is
/// derived from the leak-free exponential evacuation of the plant.
pub fn build_model(
    depth: ModelingDepth,
    plant: &PlantSpec,
    thresholds: ThresholdConfig,
    settings: ModelSettings,
) -> Result<Box<dyn BehaviorModel>, ModelError> {
    thresholds.validate()?;
    plant.generator.validate()?;
    let metadata = gripper_metadata(depth, &plant.generator)?;
    Ok(match depth {
        ModelingDepth::Discrete => Box::new(DiscreteModel::new(metadata)),
        ModelingDepth::DiscreteTemporal => {
            Box::new(DelayModel::from_plant(metadata, plant, thresholds, settings))
        }
        ModelingDepth::ContinuousSimplified => {
            Box::new(CurveModel::from_plant(metadata, plant, thresholds, settings))
        }
        ModelingDepth::PhysicalNonSpatial => {
            Box::new(LumpedModel::new(metadata, plant.clone(), thresholds, settings)?)
        }
        ModelingDepth::PhysicalSpatial => return Err(ModelError::UnsupportedDepth(5)),
    })
}

/// Power drawn in a given actuation state.
pub(crate) fn power_draw(
    generator: &VacuumGenerator,
    settings: &ModelSettings,
    evacuating: bool,
    blowing: bool,
) -> f64 {
    use crate::components::DropOff;
    let active = generator.rated_input.active_power_w(settings.air_kwh_per_m3);
    if evacuating || (blowing && generator.drop_off == DropOff::BlowOff) {
        active
    } else if generator.rated_input.is_electric() {
        settings.standby_power_w
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::{Catalog, GrippingAssembly};

    #[test]
    fn runtime_class_non_decreasing_in_depth() {
        let g = Catalog::default_catalog().get("ECBPMi").unwrap().clone();
        let classes: Vec<u8> = ModelingDepth::ALL[..4]
            .iter()
            .map(|&d| gripper_metadata(d, &g).unwrap().runtime_class)
            .collect();
        assert!(classes.windows(2).all(|w| w[0] <= w[1]));
        assert!(gripper_metadata(ModelingDepth::PhysicalSpatial, &g).is_err());
    }

    #[test]
    fn only_depth4_is_error_prone() {
        let g = Catalog::default_catalog().get("ECBPMi").unwrap().clone();
        for d in &ModelingDepth::ALL[..4] {
            let md = gripper_metadata(*d, &g).unwrap();
            md.validate().unwrap();
            assert_eq!(
                md.behavior == BehaviorKind::ErrorProne,
                *d == ModelingDepth::PhysicalNonSpatial
            );
        }
        let d4 = gripper_metadata(ModelingDepth::PhysicalNonSpatial, &g).unwrap();
        assert!(d4.free_parameter("d_leak").is_some());
    }

    #[test]
    fn all_depths_share_the_signal_interface() {
        let asm = GrippingAssembly::reference();
        let plant = PlantSpec::from(&asm);
        let t = ThresholdConfig::new(414.0, 434.0, 10.0).unwrap();
        for d in &ModelingDepth::ALL[..4] {
            let mut m = build_model(*d, &plant, t, ModelSettings::default()).unwrap();
            m.reset();
            let out = m.outputs();
            assert!(!out.part_present && !out.in_control);
            assert_eq!(out.vacuum_mbar, 0.0);
            let mut ev = Vec::new();
            m.apply_inputs(0.0, Inputs { suction: true, blow_off: false }, &mut ev);
            for i in 0..1000 {
                m.advance(i as f64 * 1e-3, 1e-3, &mut ev);
            }
            assert!(m.outputs().part_present, "depth {d} never grips");
            m.reset();
            assert!(!m.outputs().part_present);
        }
    }
}
