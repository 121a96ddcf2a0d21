use super::{
    power_draw, require, set_threshold, threshold_params, unknown, BehaviorModel, Inputs,
    ModelError, ModelSettings, OutputEvent, Outputs, ParamMap, PlantSpec,
};
use crate::components::{ThresholdConfig, VacuumGenerator};
use crate::metadata::ModelMetadata;

/// Exponential approach from `from` towards `target`, anchored at `t0`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    t0: f64,
    from: f64,
    target: f64,
    tau: f64,
}

impl Segment {
    fn hold(t0: f64, value: f64) -> Self {
        Self {
            t0,
            from: value,
            target: value,
            tau: 1.0,
        }
    }

    fn value(&self, t: f64) -> f64 {
        let s = (t - self.t0).max(0.0);
        self.target + (self.from - self.target) * (-s / self.tau).exp()
    }

    /// Absolute time at which the curve reaches `level`, if it ever does.
    fn reaches(&self, level: f64) -> Option<f64> {
        if level == self.from {
            return Some(self.t0);
        }
        let between = (level - self.from) * (self.target - level) > 0.0;
        between.then(|| self.t0 + self.tau * ((self.target - self.from) / (self.target - level)).ln())
    }

    fn rising(&self) -> bool {
        self.target > self.from
    }
}

/// Leak-free exponential evacuation with analytically located switching.
#[derive(Debug, Clone)]
pub struct CurveModel {
    metadata: ModelMetadata,
    generator: VacuumGenerator,
    settings: ModelSettings,
    thresholds: ThresholdConfig,
    tau: f64,
    dp_max: f64,
    inputs: Inputs,
    curve: Segment,
    t_now: f64,
    part_present: bool,
    in_control: bool,
    energy_j: f64,
    next: Option<(f64, u8)>,
    /// Curve value at `t_now`.
    dp: f64,
    /// Step decay factor for the last (h, tau) pair.
    decay: (f64, f64, f64),
    /// Power draw for the current inputs.
    power_w: f64,
}

impl CurveModel {
    pub fn new(
        metadata: ModelMetadata,
        generator: VacuumGenerator,
        thresholds: ThresholdConfig,
        settings: ModelSettings,
        tau: f64,
    ) -> Self {
        let dp_max = generator.dp_max_mbar;
        let power_w = power_draw(&generator, &settings, false, false);
        Self {
            metadata,
            generator,
            settings,
            thresholds,
            tau,
            dp_max,
            inputs: Inputs::IDLE,
            curve: Segment::hold(0.0, 0.0),
            t_now: 0.0,
            part_present: false,
            in_control: false,
            energy_j: 0.0,
            next: None,
            dp: 0.0,
            decay: (0.0, 1.0, 1.0),
            power_w,
        }
    }

    pub fn from_plant(
        metadata: ModelMetadata,
        plant: &PlantSpec,
        thresholds: ThresholdConfig,
        settings: ModelSettings,
    ) -> Self {
        Self::new(metadata, plant.generator.clone(), thresholds, settings, plant.tau_s())
    }

    fn value_at(&self, t: f64) -> f64 {
        if t == self.t_now {
            self.dp
        } else {
            self.curve.value(t)
        }
    }

    /// One-step update of the exponential segment. The decay factor is reused
    /// while the time constant is unchanged and the step differs only by
    /// rounding noise.
    fn step_value(&mut self, h: f64) -> f64 {
        let c = self.curve;
        if c.from == c.target {
            return c.target;
        }
        let (ch, ctau, f) = self.decay;
        let f = if ctau == c.tau && (ch - h).abs() <= 1e-9 * h {
            f
        } else {
            let f = (-h / c.tau).exp();
            self.decay = (h, c.tau, f);
            f
        };
        c.target + (self.dp - c.target) * f
    }

    fn segment_for(&self, t: f64, inputs: Inputs) -> Segment {
        let dp = self.value_at(t);
        if inputs.blow_off {
            Segment {
                t0: t,
                from: dp,
                target: 0.0,
                tau: self.settings.tau_blow_s,
            }
        } else if inputs.suction {
            Segment {
                t0: t,
                from: dp,
                target: self.dp_max,
                tau: self.tau,
            }
        } else {
            Segment::hold(t, dp)
        }
    }

    /// Next instant in `[from, until]` at which an output flips.
    /// Earliest threshold crossing of the current segment that changes an
    /// output, given the present flags.
    fn next_switch(&self) -> Option<(f64, u8)> {
        let c = &self.curve;
        let t = &self.thresholds;
        let (a, b) = if c.rising() {
            (
                (!self.part_present).then(|| c.reaches(t.h2).map(|x| (x, 0))).flatten(),
                (!self.in_control).then(|| c.reaches(t.h1).map(|x| (x, 1))).flatten(),
            )
        } else {
            (
                self.part_present.then(|| c.reaches(t.h2).map(|x| (x, 2))).flatten(),
                self.in_control
                    .then(|| c.reaches(t.release_level()).map(|x| (x, 3)))
                    .flatten(),
            )
        };
        match (a, b) {
            (Some(x), Some(y)) => Some(if y.0 < x.0 { y } else { x }),
            (x, y) => x.or(y),
        }
    }

    fn reschedule(&mut self) {
        self.next = self.next_switch();
    }
}

impl BehaviorModel for CurveModel {
    fn metadata(&self) -> &ModelMetadata {
        &self.metadata
    }

    fn parameters(&self) -> ParamMap {
        let mut p = ParamMap::from([
            ("tau".to_string(), self.tau),
            ("dp_max".to_string(), self.dp_max),
        ]);
        threshold_params(&self.thresholds, &mut p);
        p
    }

    fn set_parameter(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        if let Some(r) = set_threshold(&mut self.thresholds, name, value) {
            return r;
        }
        match name {
            "tau" => self.tau = require(name, value, value > 0.0, "time constant must be > 0")?,
            "dp_max" => self.dp_max = require(name, value, value > 0.0, "must be > 0")?,
            _ => return Err(unknown(&self.metadata, name)),
        }
        self.curve = self.segment_for(self.t_now, self.inputs);
        self.dp = self.curve.from;
        self.reschedule();
        Ok(())
    }

    fn reset(&mut self) {
        self.inputs = Inputs::IDLE;
        self.curve = Segment::hold(0.0, 0.0);
        self.t_now = 0.0;
        self.part_present = false;
        self.in_control = false;
        self.energy_j = 0.0;
        self.next = None;
        self.dp = 0.0;
        self.power_w = power_draw(&self.generator, &self.settings, false, false);
    }

    fn apply_inputs(&mut self, t: f64, inputs: Inputs, _events: &mut Vec<OutputEvent>) {
        self.curve = self.segment_for(t, inputs);
        self.t_now = t;
        self.dp = self.curve.from;
        self.inputs = inputs;
        let evacuating = inputs.suction && !inputs.blow_off;
        self.power_w = power_draw(&self.generator, &self.settings, evacuating, inputs.blow_off);
        self.reschedule();
    }

    fn advance(&mut self, t: f64, h: f64, events: &mut Vec<OutputEvent>) -> u64 {
        let end = t + h;
        let mut evaluations = 1;
        while let Some((ts, kind)) = self.next.filter(|(ts, _)| *ts <= end) {
            match kind {
                0 => self.part_present = true,
                1 => self.in_control = true,
                2 => self.part_present = false,
                _ => self.in_control = false,
            }
            self.t_now = ts.max(t);
            self.dp = self.curve.value(self.t_now);
            evaluations += 1;
            events.push(OutputEvent {
                t: self.t_now,
                outputs: self.outputs(),
            });
            self.reschedule();
        }
        self.energy_j += self.power_w * h;
        self.dp = if self.t_now == t {
            self.step_value(h)
        } else {
            self.curve.value(end)
        };
        self.t_now = end;
        evaluations
    }

    fn outputs(&self) -> Outputs {
        Outputs {
            part_present: self.part_present,
            in_control: self.in_control,
            vacuum_mbar: self.dp,
            power_w: self.power_w,
        }
    }

    fn energy_j(&self) -> f64 {
        self.energy_j
    }

    fn vacuum_modeled(&self) -> bool {
        true
    }

    fn box_clone(&self) -> Box<dyn BehaviorModel> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::GrippingAssembly;
    use crate::metadata::ModelingDepth;
    use crate::models::{d3_vacuum, gripper_metadata};
    use crate::models::physics::exp_rise_time;

    fn model() -> CurveModel {
        let asm = GrippingAssembly::reference();
        let md = gripper_metadata(ModelingDepth::ContinuousSimplified, &asm.generator).unwrap();
        let t = ThresholdConfig::new(414.0, 434.0, 10.0).unwrap();
        CurveModel::from_plant(md, &PlantSpec::from(&asm), t, ModelSettings::default())
    }

    const SUCK: Inputs = Inputs {
        suction: true,
        blow_off: false,
    };

    #[test]
    fn events_land_on_closed_form_crossings() {
        let mut m = model();
        let tau = m.tau;
        let mut ev = Vec::new();
        m.apply_inputs(0.05, SUCK, &mut ev);
        for i in 0..100 {
            m.advance(0.05 + i as f64 * 0.01, 0.01, &mut ev);
        }
        assert_eq!(ev.len(), 2);
        let t_h2 = 0.05 + exp_rise_time(0.0, 414.0, tau, 600.0).unwrap();
        let t_h1 = 0.05 + exp_rise_time(0.0, 434.0, tau, 600.0).unwrap();
        assert!((ev[0].t - t_h2).abs() < 1e-12 && ev[0].outputs.part_present);
        assert!((ev[1].t - t_h1).abs() < 1e-12 && ev[1].outputs.in_control);
        assert!((ev[0].outputs.vacuum_mbar - 414.0).abs() < 1e-9);
    }

    #[test]
    fn curve_matches_reference_formula_and_holds() {
        let mut m = model();
        let mut ev = Vec::new();
        m.apply_inputs(0.0, SUCK, &mut ev);
        m.advance(0.0, 0.3, &mut ev);
        let v = m.outputs().vacuum_mbar;
        assert!((v - d3_vacuum(0.3, m.tau, 600.0)).abs() < 1e-9);
        m.apply_inputs(0.3, Inputs::IDLE, &mut ev);
        m.advance(0.3, 1.0, &mut ev);
        assert!((m.outputs().vacuum_mbar - v).abs() < 1e-12);
        assert!(m.outputs().part_present);
    }

    #[test]
    fn blow_off_vents_and_releases() {
        let mut m = model();
        let mut ev = Vec::new();
        m.apply_inputs(0.0, SUCK, &mut ev);
        m.advance(0.0, 0.5, &mut ev);
        ev.clear();
        m.apply_inputs(0.5, Inputs { suction: false, blow_off: true }, &mut ev);
        m.advance(0.5, 0.2, &mut ev);
        assert!(!m.outputs().part_present && !m.outputs().in_control);
        assert_eq!(ev.len(), 2);
        assert!(m.outputs().vacuum_mbar < 1.0);
    }

    #[test]
    fn energy_is_rated_power_times_suction_time() {
        let mut m = model();
        let mut ev = Vec::new();
        m.apply_inputs(0.0, SUCK, &mut ev);
        m.advance(0.0, 0.5, &mut ev);
        m.apply_inputs(0.5, Inputs::IDLE, &mut ev);
        m.advance(0.5, 0.5, &mut ev);
        assert!((m.energy_j() - (3.0 * 0.5 + 0.2 * 0.5)).abs() < 1e-12);
    }
}
