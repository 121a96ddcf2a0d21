//! Stand-in for the physical gripper: a depth-4 plant with hidden true
//! parameters, a leakage fault schedule and seeded sensor noise.
//!
//! Hidden parameters live only in [`PlantConfig`]; the traces it produces
//! carry the seed and step size but never the true values.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::components::{
    read_json, ComponentError, GrippingAssembly, InstanceRecord, ProcessParams, ThresholdConfig,
};
use crate::design::{design_thresholds, DesignError};
use crate::metadata::ModelingDepth;
use crate::models::physics::evacuation_tau;
use crate::models::{build_model, BehaviorModel, Inputs, ModelError, ModelSettings, ParamMap, PlantSpec};
use crate::optim::{grid_search, Bounds, NelderMead};
use crate::sim::{CycleSpec, InputSource, SimError, Simulation, Trace, TraceMeta};

#[derive(Debug, Error)]
pub enum EmulatorError {
    #[error(transparent)]
    Component(#[from] ComponentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("invalid plant configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepFault {
    pub at_s: f64,
    /// Added to the leak diameter from `at_s` on, mm.
    pub delta_mm: f64,
}

/// Leak diameter over time: `d0 + k·t`, plus step faults, clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSchedule {
    pub d0_mm: f64,
    pub k_mm_per_s: f64,
    #[serde(default)]
    pub min_mm: f64,
    #[serde(default)]
    pub max_mm: Option<f64>,
    #[serde(default)]
    pub steps: Vec<StepFault>,
}

impl FaultSchedule {
    pub fn constant(d_mm: f64) -> Self {
        Self::ramp(d_mm, 0.0)
    }

    pub fn ramp(d0_mm: f64, k_mm_per_s: f64) -> Self {
        Self {
            d0_mm,
            k_mm_per_s,
            min_mm: 0.0,
            max_mm: None,
            steps: Vec::new(),
        }
    }

    pub fn with_step(mut self, at_s: f64, delta_mm: f64) -> Self {
        self.steps.push(StepFault { at_s, delta_mm });
        self
    }
}

pub fn fault_at(schedule: &FaultSchedule, t: f64) -> f64 {
    let stepped: f64 = schedule
        .steps
        .iter()
        .filter(|s| s.at_s <= t)
        .map(|s| s.delta_mm)
        .sum();
    let d = schedule.d0_mm + schedule.k_mm_per_s * t.max(0.0) + stepped;
    let d = d.max(schedule.min_mm).max(0.0);
    schedule.max_mm.map_or(d, |m| d.min(m))
}

fn default_sigma() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    #[serde(default = "default_instance")]
    pub instance_id: String,
    pub assembly: GrippingAssembly,
    /// Switching thresholds; derived from the handling task when absent.
    #[serde(default)]
    pub thresholds: Option<ThresholdConfig>,
    /// True instance parameters (`q_max`, `dp_max`, `d_leak`, ...).
    #[serde(default)]
    pub true_overrides: ParamMap,
    #[serde(default = "default_sigma")]
    pub noise_sigma_mbar: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub faults: Option<FaultSchedule>,
    #[serde(default)]
    pub settings: Option<ModelSettings>,
}

fn default_instance() -> String {
    "SN-0001".to_string()
}

impl PlantConfig {
    /// The reference gripper with no overrides, no faults and σ = 1 mbar.
    pub fn reference() -> Self {
        Self {
            instance_id: default_instance(),
            assembly: GrippingAssembly::reference(),
            thresholds: None,
            true_overrides: ParamMap::new(),
            noise_sigma_mbar: default_sigma(),
            seed: 0,
            faults: None,
            settings: None,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self, EmulatorError> {
        let p: Self = read_json(path)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), EmulatorError> {
        self.assembly.validate()?;
        if !(self.noise_sigma_mbar >= 0.0 && self.noise_sigma_mbar.is_finite()) {
            return Err(EmulatorError::Invalid("noise sigma must be >= 0".into()));
        }
        if let Some(f) = &self.faults {
            if let Some(m) = f.max_mm {
                if m < f.min_mm {
                    return Err(EmulatorError::Invalid("fault clamp max below min".into()));
                }
            }
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Result<ThresholdConfig, EmulatorError> {
        match self.thresholds {
            Some(t) => Ok(t),
            None => Ok(design_thresholds(&self.assembly, &ProcessParams::table1())?.1),
        }
    }

    pub fn settings(&self) -> ModelSettings {
        self.settings.unwrap_or_default()
    }

    /// The plant's depth-4 model with its true parameters applied.
    pub fn true_model(&self, plant: &PlantSpec, thresholds: ThresholdConfig) -> Result<Box<dyn BehaviorModel>, EmulatorError> {
        let mut m = build_model(ModelingDepth::PhysicalNonSpatial, plant, thresholds, self.settings())?;
        m.set_parameters(&self.true_overrides)?;
        Ok(m)
    }
}

/// Emulator step size and recording density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmulateOptions {
    pub dt: f64,
    pub decimation: usize,
}

impl Default for EmulateOptions {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            decimation: 1,
        }
    }
}

fn add_noise(trace: &mut Trace, sigma: f64, seed: u64) -> Result<(), EmulatorError> {
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| EmulatorError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for f in &mut trace.frames {
        f.vacuum_mbar += normal.sample(&mut rng);
    }
    Ok(())
}

fn hide(trace: &mut Trace, seed: u64) {
    trace.meta = TraceMeta {
        model_id: "measured".to_string(),
        depth: None,
        parameters: ParamMap::new(),
        dt: trace.meta.dt,
        seed: Some(seed),
        effort: 0,
        model_energy_j: 0.0,
    };
}

/// Produce a "measured" trace of the plant over `source`.
pub fn emulate_with(
    plant: &PlantConfig,
    source: &dyn InputSource,
    duration: f64,
    opts: &EmulateOptions,
) -> Result<Trace, EmulatorError> {
    plant.validate()?;
    let spec = PlantSpec::from(&plant.assembly);
    let mut model = plant.true_model(&spec, plant.thresholds()?)?;
    let sim = Simulation::new(opts.dt).decimation(opts.decimation);
    let mut trace = match &plant.faults {
        None => sim.run(model.as_mut(), source, duration)?,
        Some(schedule) => sim.run_with(model.as_mut(), source, duration, |t, m| {
            m.set_parameter("d_leak", fault_at(schedule, t))
                .expect("fault schedule yields a valid leak diameter");
        })?,
    };
    add_noise(&mut trace, plant.noise_sigma_mbar, plant.seed)?;
    hide(&mut trace, plant.seed);
    Ok(trace)
}

pub fn emulate(
    plant: &PlantConfig,
    cycle: &CycleSpec,
    duration: f64,
    opts: &EmulateOptions,
) -> Result<Trace, EmulatorError> {
    cycle.validate()?;
    emulate_with(plant, cycle, duration, opts)
}

/// Continuous suction from t = 0 (air-saving disabled on the bench).
struct AlwaysOn;

impl InputSource for AlwaysOn {
    fn inputs_at(&self, _t: f64) -> Inputs {
        Inputs {
            suction: true,
            blow_off: false,
        }
    }

    fn next_edge_after(&self, _t: f64) -> Option<f64> {
        None
    }
}

/// Standardized end-of-line bench: the generator evacuates a rigid tank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EolBench {
    pub tank_cm3: f64,
    /// Recording length in multiples of the nominal time constant.
    pub duration_taus: f64,
    pub dt: f64,
}

impl Default for EolBench {
    fn default() -> Self {
        Self {
            tank_cm3: 50.0,
            duration_taus: 6.0,
            dt: 1e-3,
        }
    }
}

impl EolBench {
    fn duration(&self, plant: &PlantConfig) -> f64 {
        let spec = PlantSpec::tank(plant.assembly.generator.clone(), self.tank_cm3);
        self.duration_taus * spec.tau_s()
    }
}

/// Thresholds that never switch the pump off.
fn bench_thresholds() -> ThresholdConfig {
    ThresholdConfig {
        h2: 1e6,
        h1: 1e6 + 1.0,
        hysteresis: 1.0,
    }
}

/// The noisy bench curve of the plant (true parameters, no leak fault).
pub fn eol_curve(plant: &PlantConfig, bench: &EolBench) -> Result<Trace, EmulatorError> {
    plant.validate()?;
    let spec = PlantSpec::tank(plant.assembly.generator.clone(), bench.tank_cm3);
    let mut model = plant.true_model(&spec, bench_thresholds())?;
    model.set_parameter("d_leak", 0.0)?;
    let mut trace = Simulation::new(bench.dt).run(model.as_mut(), &AlwaysOn, bench.duration(plant))?;
    add_noise(&mut trace, plant.noise_sigma_mbar, plant.seed)?;
    hide(&mut trace, plant.seed);
    Ok(trace)
}

/// Bench curve predicted for generator parameters `(q_max, dp_max)`.
pub fn eol_prediction(
    plant: &PlantConfig,
    bench: &EolBench,
    q_max_lpm: f64,
    dp_max_mbar: f64,
) -> Result<Trace, EmulatorError> {
    let mut g = plant.assembly.generator.clone();
    g.q_max_lpm = q_max_lpm;
    g.dp_max_mbar = dp_max_mbar;
    let spec = PlantSpec::tank(g, bench.tank_cm3);
    let mut model = build_model(ModelingDepth::PhysicalNonSpatial, &spec, bench_thresholds(), plant.settings())?;
    Ok(Simulation::new(bench.dt).run(model.as_mut(), &AlwaysOn, bench.duration(plant))?)
}

/// Outcome of an end-of-line test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EolResult {
    pub record: InstanceRecord,
    pub rmse_mbar: f64,
}

/// Evacuate the bench tank, fit `q_max` and `dp_max` to the recorded curve
/// and store them as instance overrides.
pub fn end_of_line_test(plant: &PlantConfig, bench: &EolBench) -> Result<EolResult, EmulatorError> {
    let curve = eol_curve(plant, bench)?;
    let g = &plant.assembly.generator;
    let volume = bench.tank_cm3 * 1e-6;
    let samples: Vec<(f64, f64)> = curve.frames.iter().map(|f| (f.t, f.vacuum_mbar)).collect();
    // The tank has no hose, so the noiseless curve is an exact exponential.
    let sse = |x: &[f64]| -> f64 {
        let g2 = crate::components::VacuumGenerator {
            q_max_lpm: x[0],
            dp_max_mbar: x[1],
            ..g.clone()
        };
        let tau = evacuation_tau(volume, &g2, None);
        samples
            .iter()
            .map(|(t, v)| (v - crate::models::d3_vacuum(*t, tau, x[1])).powi(2))
            .sum::<f64>()
    };
    let bounds = Bounds::new(
        vec![0.5 * g.q_max_lpm, 0.5 * g.dp_max_mbar],
        vec![1.5 * g.q_max_lpm, crate::components::P_ATM_MBAR.min(1.5 * g.dp_max_mbar)],
    );
    let (seed, _) = grid_search(sse, &bounds, 11);
    let nm = NelderMead {
        max_iter: 400,
        xtol: 1e-9,
        ftol: 1e-12,
        ..Default::default()
    };
    let best = nm.minimize(sse, &seed, &bounds);
    let rmse = (best.f / samples.len().max(1) as f64).sqrt();
    let on_bound = best
        .x
        .iter()
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .any(|(x, (l, u))| (x - l).abs() < 1e-9 * u.abs() || (u - x).abs() < 1e-9 * u.abs());
    let usable = best.f.is_finite() && !on_bound && rmse <= 3.0 * plant.noise_sigma_mbar + 1.0;
    if !usable {
        log::warn!(
            "end-of-line fit for {} unusable (rmse {rmse:.3} mbar, on bound: {on_bound})",
            plant.instance_id
        );
    }
    Ok(EolResult {
        record: InstanceRecord {
            instance_id: plant.instance_id.clone(),
            type_id: g.type_id.clone(),
            parameter_overrides: ParamMap::from([
                ("q_max".to_string(), best.x[0]),
                ("dp_max".to_string(), best.x[1]),
            ]),
            usable,
        },
        rmse_mbar: rmse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub t: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Envelope {
    pub fn max_width(&self) -> f64 {
        self.min
            .iter()
            .zip(&self.max)
            .map(|(lo, hi)| hi - lo)
            .fold(0.0, f64::max)
    }
}

/// Min/max band over `runs` bench curves with consecutive seeds.
pub fn envelope(plant: &PlantConfig, bench: &EolBench, runs: usize) -> Result<Envelope, EmulatorError> {
    let mut env: Option<Envelope> = None;
    for i in 0..runs {
        let p = PlantConfig {
            seed: plant.seed.wrapping_add(i as u64),
            ..plant.clone()
        };
        let tr = eol_curve(&p, bench)?;
        let e = env.get_or_insert_with(|| Envelope {
            t: tr.frames.iter().map(|f| f.t).collect(),
            min: vec![f64::INFINITY; tr.frames.len()],
            max: vec![f64::NEG_INFINITY; tr.frames.len()],
        });
        for (j, f) in tr.frames.iter().enumerate() {
            e.min[j] = e.min[j].min(f.vacuum_mbar);
            e.max[j] = e.max[j].max(f.vacuum_mbar);
        }
    }
    env.ok_or_else(|| EmulatorError::Invalid("envelope needs at least one run".into()))
}

/// Leak diameters at which, on a single cycle, H1 and H2 stop being reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalLeaks {
    pub h1_mm: f64,
    pub h2_mm: f64,
}

fn single_cycle_reaches(
    plant: &PlantConfig,
    cycle: &CycleSpec,
    d_leak: f64,
    dt: f64,
) -> Result<(bool, bool), EmulatorError> {
    let spec = PlantSpec::from(&plant.assembly);
    let mut m = plant.true_model(&spec, plant.thresholds()?)?;
    m.set_parameter("d_leak", d_leak)?;
    let c = cycle.with_repetitions(1);
    let tr = Simulation::new(dt).run(m.as_mut(), &c, c.duration())?;
    let until = c.blow_off_at;
    let reached = |pick: fn(&crate::models::SignalFrame) -> bool| {
        tr.frames.iter().take_while(|f| f.t < until).any(pick)
    };
    Ok((reached(|f| f.in_control), reached(|f| f.part_present)))
}

pub fn critical_leaks(plant: &PlantConfig, cycle: &CycleSpec, dt: f64) -> Result<CriticalLeaks, EmulatorError> {
    let bisect = |which: usize| -> Result<f64, EmulatorError> {
        let (mut lo, mut hi) = (0.0, 2.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            let r = single_cycle_reaches(plant, cycle, mid, dt)?;
            let ok = if which == 1 { r.0 } else { r.1 };
            if ok {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    };
    Ok(CriticalLeaks {
        h1_mm: bisect(1)?,
        h2_mm: bisect(2)?,
    })
}

/// Ramp that crosses the H1 critical leak at `h1_frac` and the H2 critical
/// leak at `h2_frac` of `horizon`.
pub fn calibrate_ramp(
    plant: &PlantConfig,
    cycle: &CycleSpec,
    horizon: f64,
    h1_frac: f64,
    h2_frac: f64,
    dt: f64,
) -> Result<FaultSchedule, EmulatorError> {
    if !(0.0 < h1_frac && h1_frac < h2_frac && h2_frac <= 1.0) {
        return Err(EmulatorError::Invalid("need 0 < h1_frac < h2_frac <= 1".into()));
    }
    let c = critical_leaks(plant, cycle, dt)?;
    if !(c.h2_mm > c.h1_mm) {
        return Err(EmulatorError::Invalid(format!(
            "H2 critical leak {} mm not above H1 critical leak {} mm",
            c.h2_mm, c.h1_mm
        )));
    }
    let k = (c.h2_mm - c.h1_mm) / ((h2_frac - h1_frac) * horizon);
    let d0 = (c.h1_mm - k * h1_frac * horizon).max(0.0);
    Ok(FaultSchedule::ramp(d0, k))
}

/// Times after which H1 (resp. H2) is never reached again in any later cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTimes {
    pub h1_lost_at: Option<f64>,
    pub h2_lost_at: Option<f64>,
}

pub fn permanent_losses(trace: &Trace, cycle: &CycleSpec) -> LossTimes {
    let n = (0..cycle.repetitions)
        .take_while(|k| cycle.cycle_start(*k) + cycle.blow_off_at <= trace.end())
        .count() as u32;
    let mut reached = Vec::with_capacity(n as usize);
    let mut i = 0usize;
    for k in 0..n {
        let from = cycle.cycle_start(k) + cycle.suction_on_at;
        let to = cycle.cycle_start(k) + cycle.blow_off_at;
        let (mut h1, mut h2) = (false, false);
        while i < trace.frames.len() && trace.frames[i].t < to {
            let f = &trace.frames[i];
            if f.t >= from {
                h1 |= f.in_control;
                h2 |= f.part_present;
            }
            i += 1;
        }
        reached.push((h1, h2));
    }
    let lost_from = |pick: fn(&(bool, bool)) -> bool| -> Option<f64> {
        let last_ok = reached.iter().rposition(pick);
        let k = last_ok.map_or(0, |k| k + 1) as u32;
        (k < n).then(|| cycle.cycle_start(k) + cycle.suction_on_at)
    };
    LossTimes {
        h1_lost_at: lost_from(|r| r.0),
        h2_lost_at: lost_from(|r| r.1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_schedule_evaluation() {
        let s = FaultSchedule::ramp(0.2, 0.0);
        assert_eq!(fault_at(&s, 0.0), 0.2);
        assert_eq!(fault_at(&s, 500.0), 0.2);
        let r = FaultSchedule::ramp(0.0, 1e-3);
        assert!((fault_at(&r, 500.0) - 0.5).abs() < 1e-12);
        let neg = FaultSchedule::ramp(0.1, -1e-3);
        assert_eq!(fault_at(&neg, 500.0), 0.0);
        let capped = FaultSchedule {
            max_mm: Some(0.3),
            ..FaultSchedule::ramp(0.0, 1e-3)
        };
        assert_eq!(fault_at(&capped, 1000.0), 0.3);
        let step = FaultSchedule::constant(0.1).with_step(2.0, 0.5);
        assert_eq!(fault_at(&step, 1.999), 0.1);
        assert!((fault_at(&step, 2.0) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn metadata_hides_true_parameters() {
        let mut p = PlantConfig::reference();
        p.true_overrides.insert("q_max".into(), 1.44);
        let tr = emulate(&p, &CycleSpec::table1(), 0.8, &EmulateOptions { dt: 1e-3, decimation: 1 }).unwrap();
        assert!(tr.meta.parameters.is_empty());
        assert_eq!(tr.meta.seed, Some(0));
        let json = serde_json::to_string(&tr.meta).unwrap();
        assert!(!json.contains("1.44"));
    }

    #[test]
    fn noise_only_touches_vacuum() {
        let mut p = PlantConfig::reference();
        let o = EmulateOptions { dt: 1e-3, decimation: 1 };
        p.noise_sigma_mbar = 0.0;
        let clean = emulate(&p, &CycleSpec::table1(), 0.8, &o).unwrap();
        p.noise_sigma_mbar = 2.0;
        p.seed = 9;
        let noisy = emulate(&p, &CycleSpec::table1(), 0.8, &o).unwrap();
        assert_eq!(clean.frames.len(), noisy.frames.len());
        let mut differs = false;
        for (a, b) in clean.frames.iter().zip(&noisy.frames) {
            assert_eq!((a.t, a.part_present, a.in_control, a.power_w), (b.t, b.part_present, b.in_control, b.power_w));
            differs |= a.vacuum_mbar != b.vacuum_mbar;
        }
        assert!(differs);
    }

    #[test]
    fn loss_times_from_synthetic_pattern() {
        use crate::models::SignalFrame;
        let c = CycleSpec::table1().with_repetitions(4);
        let mut frames = Vec::new();
        // cycles 0,1 reach both; cycle 2 reaches H2 only; cycle 3 neither
        for k in 0..4u32 {
            let s = c.cycle_start(k);
            let (h1, h2) = match k {
                0 | 1 => (true, true),
                2 => (false, true),
                _ => (false, false),
            };
            frames.push(SignalFrame { t: s, suction: false, blow_off: false, part_present: false, in_control: false, vacuum_mbar: 0.0, power_w: 0.0 });
            frames.push(SignalFrame { t: s + 0.3, suction: true, blow_off: false, part_present: h2, in_control: h1, vacuum_mbar: 0.0, power_w: 0.0 });
        }
        frames.push(SignalFrame { t: 3.2, suction: false, blow_off: false, part_present: false, in_control: false, vacuum_mbar: 0.0, power_w: 0.0 });
        let tr = Trace { meta: TraceMeta::default(), frames };
        let l = permanent_losses(&tr, &c);
        assert!((l.h1_lost_at.unwrap() - 1.65).abs() < 1e-12);
        assert!((l.h2_lost_at.unwrap() - 2.45).abs() < 1e-12);
    }
}
