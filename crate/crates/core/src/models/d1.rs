use super::{unknown, BehaviorModel, Inputs, ModelError, OutputEvent, Outputs, ParamMap};
use crate::metadata::ModelMetadata;

/// Set/reset logic: suction sets both outputs, blow-off resets them.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    metadata: ModelMetadata,
    latched: bool,
}

impl DiscreteModel {
    pub fn new(metadata: ModelMetadata) -> Self {
        Self {
            metadata,
            latched: false,
        }
    }

    /// One evaluation of the set/reset block.
    pub fn step(&mut self, inputs: Inputs) -> Outputs {
        if inputs.blow_off {
            self.latched = false;
        } else if inputs.suction {
            self.latched = true;
        }
        self.outputs()
    }
}

impl BehaviorModel for DiscreteModel {
    fn metadata(&self) -> &ModelMetadata {
        &self.metadata
    }

    fn parameters(&self) -> ParamMap {
        ParamMap::new()
    }

    fn set_parameter(&mut self, name: &str, _value: f64) -> Result<(), ModelError> {
        Err(unknown(&self.metadata, name))
    }

    fn reset(&mut self) {
        self.latched = false;
    }

    fn apply_inputs(&mut self, t: f64, inputs: Inputs, events: &mut Vec<OutputEvent>) {
        let before = self.latched;
        let outputs = self.step(inputs);
        if before != self.latched {
            events.push(OutputEvent { t, outputs });
        }
    }

    fn advance(&mut self, _t: f64, _h: f64, _events: &mut Vec<OutputEvent>) -> u64 {
        1
    }

    fn outputs(&self) -> Outputs {
        Outputs {
            part_present: self.latched,
            in_control: self.latched,
            vacuum_mbar: 0.0,
            power_w: 0.0,
        }
    }

    fn vacuum_modeled(&self) -> bool {
        false
    }

    fn box_clone(&self) -> Box<dyn BehaviorModel> {
        Box::new(self.clone())
    }
}
