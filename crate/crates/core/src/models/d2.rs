use super::physics::exp_rise_time;
use super::{
    require, unknown, BehaviorModel, Inputs, ModelError, ModelSettings, OutputEvent, Outputs, ParamMap,
    PlantSpec,
};
use crate::components::ThresholdConfig;
use crate::metadata::ModelMetadata;

/// Stand-in for "never" in delay parameters (keeps JSON finite).
const NEVER_S: f64 = 1.0e6;

/// Set/reset logic with pure time delays.
#[derive(Debug, Clone)]
pub struct DelayModel {
    metadata: ModelMetadata,
    t_evac: f64,
    dt_h1: f64,
    t_blow: f64,
    inputs: Inputs,
    h2: bool,
    h1: bool,
    pending_h2: Option<f64>,
    pending_h1: Option<f64>,
    pending_reset: Option<f64>,
}

impl DelayModel {
    pub fn new(metadata: ModelMetadata, t_evac: f64, dt_h1: f64, t_blow: f64) -> Self {
        Self {
            metadata,
            t_evac,
            dt_h1,
            t_blow,
            inputs: Inputs::IDLE,
            h2: false,
            h1: false,
            pending_h2: None,
            pending_h1: None,
            pending_reset: None,
        }
    }

    /// Delays taken from the plant's leak-free exponential evacuation, so the
    /// H2 and H1 instants coincide with the depth-3 curve crossings. The
    /// reset delay is the venting time from H1 down to H2.
    pub fn from_plant(
        metadata: ModelMetadata,
        plant: &PlantSpec,
        t: ThresholdConfig,
        settings: ModelSettings,
    ) -> Self {
        let tau = plant.tau_s();
        let dp_max = plant.generator.dp_max_mbar;
        let t_evac = exp_rise_time(0.0, t.h2, tau, dp_max).unwrap_or(NEVER_S);
        let dt_h1 = exp_rise_time(t.h2, t.h1, tau, dp_max).unwrap_or(NEVER_S);
        let t_blow = settings.tau_blow_s * (t.h1.min(dp_max) / t.h2).ln().max(0.0);
        Self::new(metadata, t_evac, dt_h1, t_blow)
    }

    fn set_now(&mut self, t: f64, h2: bool, h1: bool, events: &mut Vec<OutputEvent>) {
        if self.h2 != h2 || self.h1 != h1 {
            self.h2 = h2;
            self.h1 = h1;
            events.push(OutputEvent {
                t,
                outputs: self.outputs(),
            });
        }
    }

    fn gripping(inputs: Inputs) -> bool {
        inputs.suction && !inputs.blow_off
    }
}

impl BehaviorModel for DelayModel {
    fn metadata(&self) -> &ModelMetadata {
        &self.metadata
    }

    fn parameters(&self) -> ParamMap {
        ParamMap::from([
            ("t_evac".to_string(), self.t_evac),
            ("dt_h1".to_string(), self.dt_h1),
            ("t_blow".to_string(), self.t_blow),
        ])
    }

    fn set_parameter(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        let slot = match name {
            "t_evac" => &mut self.t_evac,
            "dt_h1" => &mut self.dt_h1,
            "t_blow" => &mut self.t_blow,
            _ => return Err(unknown(&self.metadata, name)),
        };
        *slot = require(name, value, value >= 0.0, "delays must be >= 0")?;
        Ok(())
    }

    fn reset(&mut self) {
        self.inputs = Inputs::IDLE;
        self.h2 = false;
        self.h1 = false;
        self.pending_h2 = None;
        self.pending_h1 = None;
        self.pending_reset = None;
    }

    fn apply_inputs(&mut self, t: f64, inputs: Inputs, events: &mut Vec<OutputEvent>) {
        let prev = self.inputs;
        self.inputs = inputs;
        if inputs.blow_off && !prev.blow_off {
            self.pending_h2 = None;
            self.pending_h1 = None;
            if self.t_blow == 0.0 {
                self.pending_reset = None;
                self.set_now(t, false, false, events);
            } else {
                self.pending_reset = Some(t + self.t_blow);
            }
        } else if Self::gripping(inputs) && !Self::gripping(prev) {
            self.pending_reset = None;
            if self.t_evac == 0.0 {
                let h1 = self.dt_h1 == 0.0;
                self.set_now(t, true, h1 || self.h1, events);
                if !h1 {
                    self.pending_h1 = Some(t + self.dt_h1);
                }
            } else {
                self.pending_h2 = Some(t + self.t_evac);
                self.pending_h1 = Some(t + self.t_evac + self.dt_h1);
            }
        } else if !inputs.suction && prev.suction {
            // suction pulse ended before the delay elapsed
            self.pending_h2 = None;
            self.pending_h1 = None;
        }
    }

    fn advance(&mut self, t: f64, h: f64, events: &mut Vec<OutputEvent>) -> u64 {
        let end = t + h;
        loop {
            let next = [self.pending_reset, self.pending_h2, self.pending_h1]
                .into_iter()
                .enumerate()
                .filter_map(|(i, p)| p.filter(|&pt| pt <= end).map(|pt| (pt, i)))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let Some((at, which)) = next else { break };
            match which {
                0 => {
                    self.pending_reset = None;
                    self.set_now(at, false, false, events);
                }
                1 => {
                    self.pending_h2 = None;
                    self.set_now(at, true, self.h1, events);
                }
                _ => {
                    self.pending_h1 = None;
                    self.set_now(at, self.h2, true, events);
                }
            }
        }
        1
    }

    fn outputs(&self) -> Outputs {
        Outputs {
            part_present: self.h2,
            in_control: self.h1,
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
