use super::physics::{control_update, d4_rhs, Chamber, D4State};
use super::{
    power_draw, require, set_threshold, threshold_params, unknown, BehaviorModel, Inputs,
    ModelError, ModelSettings, OutputEvent, Outputs, ParamMap, PlantSpec,
};
use crate::components::{ComponentError, ThresholdConfig};
use crate::metadata::ModelMetadata;

/// Bisection depth when locating a threshold crossing inside a step.
const BISECT_ITERS: u32 = 48;
/// Upper bound on output switchings handled within one sub-step.
const MAX_SWITCHES_PER_STEP: usize = 16;

/// Lumped-volume model with leakage, hose restriction and air-saving control.
#[derive(Debug, Clone)]
pub struct LumpedModel {
    metadata: ModelMetadata,
    plant: PlantSpec,
    volume_m3: f64,
    conductance: Option<f64>,
    thresholds: ThresholdConfig,
    settings: ModelSettings,
    d_leak_mm: f64,
    inputs: Inputs,
    state: D4State,
}

impl LumpedModel {
    pub fn new(
        metadata: ModelMetadata,
        plant: PlantSpec,
        thresholds: ThresholdConfig,
        settings: ModelSettings,
    ) -> Result<Self, ModelError> {
        plant.generator.validate()?;
        thresholds.validate()?;
        let volume_m3 = plant.volume_m3();
        if !(volume_m3 > 0.0) {
            return Err(ComponentError::InvalidParameter(
                "evacuated volume must be > 0".into(),
            )
            .into());
        }
        if !(settings.tau_blow_s > 0.0) || settings.substeps == 0 {
            return Err(ComponentError::InvalidParameter(
                "blow-off time constant must be > 0 and substeps >= 1".into(),
            )
            .into());
        }
        Ok(Self {
            metadata,
            conductance: plant.conductance(),
            plant,
            volume_m3,
            thresholds,
            settings,
            d_leak_mm: 0.0,
            inputs: Inputs::IDLE,
            state: D4State::default(),
        })
    }

    pub fn set_leak(&mut self, d_leak_mm: f64) -> Result<(), ModelError> {
        self.set_parameter("d_leak", d_leak_mm)
    }

    pub fn state(&self) -> D4State {
        self.state
    }

    pub fn plant(&self) -> &PlantSpec {
        &self.plant
    }

    fn chamber(&self) -> Chamber<'_> {
        Chamber {
            generator: &self.plant.generator,
            volume_m3: self.volume_m3,
            conductance: self.conductance,
            d_leak_mm: self.d_leak_mm,
            tau_blow_s: self.settings.tau_blow_s,
        }
    }

    fn suction_effective(&self) -> bool {
        self.inputs.suction && !self.inputs.blow_off
    }

    /// One explicit midpoint step of length `h` from `dp` with the current
    /// discrete state frozen.
    fn rk2(&self, dp: f64, h: f64) -> f64 {
        let ch = self.chamber();
        let pump = self.state.pump_active;
        let blow = self.inputs.blow_off;
        let k1 = d4_rhs(dp, pump, blow, &ch);
        let k2 = d4_rhs(dp + 0.5 * h * k1, pump, blow, &ch);
        (dp + h * k2).max(0.0)
    }

    fn switches_at(&self, dp: f64) -> bool {
        let next = control_update(self.state, dp, &self.thresholds, self.suction_effective());
        next.part_present != self.state.part_present
            || next.in_control != self.state.in_control
            || next.pump_active != self.state.pump_active
    }

    fn same_flags(a: &D4State, b: &D4State) -> bool {
        a.part_present == b.part_present
            && a.in_control == b.in_control
            && a.pump_active == b.pump_active
    }

    fn emit(&self, t: f64, events: &mut Vec<OutputEvent>) {
        events.push(OutputEvent {
            t,
            outputs: self.outputs(),
        });
    }

    /// Integrate one sub-step, splitting it at every switching instant.
    fn substep(&mut self, t: f64, h: f64, events: &mut Vec<OutputEvent>) -> u64 {
        let mut at = t;
        let mut left = h;
        let mut evals = 0u64;
        for _ in 0..MAX_SWITCHES_PER_STEP {
            let dp0 = self.state.dp;
            let dp1 = self.rk2(dp0, left);
            evals += 2;
            if !self.switches_at(dp1) || !dp1.is_finite() {
                self.accumulate(left);
                self.state.dp = dp1;
                return evals;
            }
            let (mut lo, mut hi) = (0.0, left);
            let mut dp_hi = dp1;
            for _ in 0..BISECT_ITERS {
                let mid = 0.5 * (lo + hi);
                let dp_mid = self.rk2(dp0, mid);
                evals += 2;
                if self.switches_at(dp_mid) {
                    hi = mid;
                    dp_hi = dp_mid;
                } else {
                    lo = mid;
                }
            }
            self.accumulate(hi);
            let before = self.state;
            self.state = control_update(self.state, dp_hi, &self.thresholds, self.suction_effective());
            at += hi;
            left -= hi;
            if !Self::same_flags(&before, &self.state) {
                self.emit(at, events);
            }
            if left <= 0.0 {
                return evals;
            }
        }
        let dp0 = self.state.dp;
        self.accumulate(left);
        self.state.dp = self.rk2(dp0, left);
        self.state = control_update(self.state, self.state.dp, &self.thresholds, self.suction_effective());
        evals + 2
    }

    fn accumulate(&mut self, dt: f64) {
        self.state.energy_j += self.outputs().power_w * dt;
    }
}

impl BehaviorModel for LumpedModel {
    fn metadata(&self) -> &ModelMetadata {
        &self.metadata
    }

    fn parameters(&self) -> ParamMap {
        let mut p = ParamMap::from([
            ("d_leak".to_string(), self.d_leak_mm),
            ("q_max".to_string(), self.plant.generator.q_max_lpm),
            ("dp_max".to_string(), self.plant.generator.dp_max_mbar),
            ("tau_blow".to_string(), self.settings.tau_blow_s),
        ]);
        threshold_params(&self.thresholds, &mut p);
        p
    }

    fn set_parameter(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        if let Some(r) = set_threshold(&mut self.thresholds, name, value) {
            return r;
        }
        match name {
            "d_leak" => {
                self.d_leak_mm = require(name, value, value >= 0.0, "leak diameter must be >= 0")?
            }
            "q_max" => {
                self.plant.generator.q_max_lpm = require(name, value, value > 0.0, "must be > 0")?
            }
            "dp_max" => {
                self.plant.generator.dp_max_mbar =
                    require(name, value, value > 0.0, "must be > 0")?
            }
            "tau_blow" => {
                self.settings.tau_blow_s = require(name, value, value > 0.0, "must be > 0")?
            }
            _ => return Err(unknown(&self.metadata, name)),
        }
        Ok(())
    }

    fn reset(&mut self) {
        self.inputs = Inputs::IDLE;
        self.state = D4State::default();
    }

    fn apply_inputs(&mut self, t: f64, inputs: Inputs, events: &mut Vec<OutputEvent>) {
        let rising = !self.suction_effective() && inputs.suction && !inputs.blow_off;
        let before = self.state;
        let power_before = self.outputs().power_w;
        self.inputs = inputs;
        let suction = self.suction_effective();
        self.state = control_update(self.state, self.state.dp, &self.thresholds, suction);
        if rising && self.state.dp < self.thresholds.h1 {
            self.state.pump_active = true;
        }
        if !Self::same_flags(&before, &self.state) || self.outputs().power_w != power_before {
            self.emit(t, events);
        }
    }

    fn advance(&mut self, t: f64, h: f64, events: &mut Vec<OutputEvent>) -> u64 {
        let n = self.settings.substeps;
        let hs = h / f64::from(n);
        (0..n)
            .map(|i| self.substep(t + f64::from(i) * hs, hs, events))
            .sum()
    }

    fn outputs(&self) -> Outputs {
        Outputs {
            part_present: self.state.part_present,
            in_control: self.state.in_control,
            vacuum_mbar: self.state.dp,
            power_w: power_draw(
                &self.plant.generator,
                &self.settings,
                self.state.pump_active,
                self.inputs.blow_off,
            ),
        }
    }

    fn energy_j(&self) -> f64 {
        self.state.energy_j
    }

    fn vacuum_modeled(&self) -> bool {
        true
    }

    fn box_clone(&self) -> Box<dyn BehaviorModel> {
        Box::new(self.clone())
    }
}
