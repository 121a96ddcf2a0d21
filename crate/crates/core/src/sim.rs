//! Fixed-step execution of behavior models over handling cycles.
//!
//! The engine walks a uniform time grid, splits steps exactly at input
//! edges and records every output switching instant reported by the model,
//! so event timestamps are exact up to the model's own event localization.
//! Samples are right-continuous: the frame at `t` shows the inputs in
//! effect from `t` on and the outputs just after any switching at `t`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{BehaviorModel, Inputs, ParamMap, SignalFrame};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("numerical divergence at t = {t:.6} s (vacuum = {value})")]
    Divergence { t: f64, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("trace file {path}: {message}")]
    Io { path: String, message: String },
}

/// One handling cycle repeated `repetitions` times, then idle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleSpec {
    pub suction_on_at: f64,
    /// Robot motion with the part attached; ends when blow-off starts.
    pub move_duration: f64,
    pub blow_off_at: f64,
    #[serde(default = "default_blow_off_duration")]
    pub blow_off_duration: f64,
    pub cycle_period: f64,
    pub repetitions: u32,
}

fn default_blow_off_duration() -> f64 {
    0.1
}

impl Default for CycleSpec {
    fn default() -> Self {
        Self::table1()
    }
}

impl CycleSpec {
    /// A single 800 ms pick-and-place cycle.
    pub fn table1() -> Self {
        Self {
            suction_on_at: 0.05,
            move_duration: 0.3,
            blow_off_at: 0.6,
            blow_off_duration: 0.1,
            cycle_period: 0.8,
            repetitions: 1,
        }
    }

    /// The Table-1 cycle repeated back to back until `horizon` is covered.
    pub fn repeated_for(horizon: f64) -> Self {
        let c = Self::table1();
        Self {
            repetitions: (horizon / c.cycle_period).ceil().max(1.0) as u32,
            ..c
        }
    }

    pub fn with_repetitions(self, repetitions: u32) -> Self {
        Self {
            repetitions,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.suction_on_at >= 0.0
            && self.suction_on_at < self.blow_off_at
            && self.blow_off_at < self.cycle_period
            && self.blow_off_duration > 0.0
            && self.blow_off_at + self.blow_off_duration <= self.cycle_period
            && self.move_duration >= 0.0
            && self.move_duration <= self.blow_off_at - self.suction_on_at
            && self.repetitions >= 1;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidArgument(format!(
                "cycle needs 0 <= suction_on_at < blow_off_at < blow_off end <= cycle_period, \
                 move within the suction phase and >= 1 repetition: {self:?}"
            )))
        }
    }

    pub fn duration(&self) -> f64 {
        self.cycle_period * f64::from(self.repetitions)
    }

    /// Start time of cycle `k`.
    pub fn cycle_start(&self, k: u32) -> f64 {
        f64::from(k) * self.cycle_period
    }

    fn offsets(&self) -> [f64; 3] {
        [
            self.suction_on_at,
            self.blow_off_at,
            self.blow_off_at + self.blow_off_duration,
        ]
    }
}

/// Something that drives the model's inputs over time.
pub trait InputSource {
    fn inputs_at(&self, t: f64) -> Inputs;
    /// First input edge strictly after `t`.
    fn next_edge_after(&self, t: f64) -> Option<f64>;
}

impl InputSource for CycleSpec {
    fn inputs_at(&self, t: f64) -> Inputs {
        if t < 0.0 || t >= self.duration() {
            return Inputs::IDLE;
        }
        let mut k = (t / self.cycle_period).floor() as u32;
        if t < self.cycle_start(k) {
            k -= 1;
        } else if k + 1 < self.repetitions && t >= self.cycle_start(k + 1) {
            k += 1;
        }
        // Compare against absolute edge times computed exactly as in
        // `next_edge_after`, so an edge and its inputs always agree.
        let s = self.cycle_start(k);
        let [on, blow, blow_end] = self.offsets().map(|o| s + o);
        Inputs {
            suction: t >= on && t < blow,
            blow_off: t >= blow && t < blow_end,
        }
    }

    fn next_edge_after(&self, t: f64) -> Option<f64> {
        let first = ((t / self.cycle_period).floor().max(0.0)) as u32;
        for k in first.saturating_sub(1)..self.repetitions {
            for off in self.offsets() {
                let e = self.cycle_start(k) + off;
                if e > t {
                    return Some(e);
                }
            }
        }
        None
    }
}

/// Inputs replayed from a recorded trace (zero-order hold).
#[derive(Debug, Clone)]
pub struct RecordedInputs {
    edges: Vec<(f64, Inputs)>,
}

impl RecordedInputs {
    pub fn from_trace(trace: &Trace) -> Self {
        let mut edges: Vec<(f64, Inputs)> = Vec::new();
        for f in &trace.frames {
            let inp = f.inputs();
            if edges.last().map_or(true, |(_, last)| *last != inp) {
                edges.push((f.t, inp));
            }
        }
        Self { edges }
    }
}

impl InputSource for RecordedInputs {
    fn inputs_at(&self, t: f64) -> Inputs {
        let i = self.edges.partition_point(|(et, _)| *et <= t);
        if i == 0 {
            Inputs::IDLE
        } else {
            self.edges[i - 1].1
        }
    }

    fn next_edge_after(&self, t: f64) -> Option<f64> {
        let i = self.edges.partition_point(|(et, _)| *et <= t);
        self.edges.get(i).map(|(et, _)| *et)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub model_id: String,
    #[serde(default)]
    pub depth: Option<u8>,
    #[serde(default)]
    pub parameters: ParamMap,
    pub dt: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Model evaluations spent producing the trace.
    #[serde(default)]
    pub effort: u64,
    /// Energy integrated by the model itself, J.
    #[serde(default)]
    pub model_energy_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub frames: Vec<SignalFrame>,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    t_s: f64,
    suction: u8,
    blow_off: u8,
    vacuum_mbar: f64,
    #[serde(rename = "power_W")]
    power_w: f64,
    h1: u8,
    h2: u8,
}

const CSV_HEADER: [&str; 7] = ["t_s", "suction", "blow_off", "vacuum_mbar", "power_W", "h1", "h2"];

impl Trace {
    pub fn start(&self) -> f64 {
        self.frames.first().map_or(0.0, |f| f.t)
    }

    pub fn end(&self) -> f64 {
        self.frames.last().map_or(0.0, |f| f.t)
    }

    /// Frame in effect at `t` (last frame with timestamp <= t).
    pub fn frame_at(&self, t: f64) -> Option<&SignalFrame> {
        let i = self.frames.partition_point(|f| f.t <= t);
        i.checked_sub(1).map(|i| &self.frames[i])
    }

    /// Linear interpolation of the vacuum channel.
    pub fn vacuum_at(&self, t: f64) -> Option<f64> {
        let i = self.frames.partition_point(|f| f.t <= t);
        if i == 0 {
            return None;
        }
        let a = &self.frames[i - 1];
        match self.frames.get(i) {
            Some(b) if b.t > a.t => {
                let w = (t - a.t) / (b.t - a.t);
                Some(a.vacuum_mbar + w * (b.vacuum_mbar - a.vacuum_mbar))
            }
            _ => Some(a.vacuum_mbar),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if let Some(w) = self.frames.windows(2).find(|w| !(w[1].t > w[0].t)) {
            return Err(SimError::InvalidTrace(format!(
                "timestamps not strictly increasing at t = {}",
                w[1].t
            )));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let io = |e: csv::Error| SimError::Io {
            path: "<csv>".into(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER).map_err(io)?;
        let b = |v: bool| if v { "1" } else { "0" };
        for f in &self.frames {
            w.write_record([
                format!("{:.16e}", f.t).as_str(),
                b(f.suction),
                b(f.blow_off),
                format!("{:.16e}", f.vacuum_mbar).as_str(),
                format!("{:.16e}", f.power_w).as_str(),
                b(f.in_control),
                b(f.part_present),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| SimError::Io {
            path: "<csv>".into(),
            message: e.to_string(),
        })
    }

    /// Parse trace CSV. Metadata is not part of the CSV and comes back empty.
    pub fn read_csv<R: Read>(input: R) -> Result<Trace, SimError> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r
            .headers()
            .map_err(|e| SimError::InvalidTrace(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header != CSV_HEADER {
            return Err(SimError::InvalidTrace(format!(
                "expected columns {CSV_HEADER:?}, found {header:?}"
            )));
        }
        let flag = |v: u8, line: usize| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(SimError::InvalidTrace(format!("row {line}: boolean must be 0 or 1"))),
        };
        let mut frames = Vec::new();
        for (i, row) in r.deserialize::<CsvRow>().enumerate() {
            let row = row.map_err(|e| SimError::InvalidTrace(e.to_string()))?;
            frames.push(SignalFrame {
                t: row.t_s,
                suction: flag(row.suction, i + 2)?,
                blow_off: flag(row.blow_off, i + 2)?,
                part_present: flag(row.h2, i + 2)?,
                in_control: flag(row.h1, i + 2)?,
                vacuum_mbar: row.vacuum_mbar,
                power_w: row.power_w,
            });
        }
        let trace = Trace {
            meta: TraceMeta::default(),
            frames,
        };
        trace.validate()?;
        Ok(trace)
    }

    /// Writes `path` (CSV) and `path.meta.json` next to it.
    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        let io = |e: std::io::Error| SimError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let file = std::fs::File::create(path).map_err(io)?;
        self.write_csv(std::io::BufWriter::new(file))?;
        let meta = serde_json::to_string_pretty(&self.meta).expect("trace metadata serializes");
        std::fs::write(meta_path(path), meta).map_err(io)
    }

    /// Reads a CSV trace; the metadata side file is optional.
    pub fn load(path: &Path) -> Result<Trace, SimError> {
        let io = |e: std::io::Error| SimError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let file = std::fs::File::open(path).map_err(io)?;
        let mut trace = Self::read_csv(std::io::BufReader::new(file))?;
        if let Ok(text) = std::fs::read_to_string(meta_path(path)) {
            trace.meta = serde_json::from_str(&text).map_err(|e| SimError::Io {
                path: meta_path(path).display().to_string(),
                message: e.to_string(),
            })?;
        }
        Ok(trace)
    }
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Engine settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub dt: f64,
    /// Record every n-th grid point (event and edge samples are always kept).
    pub decimation: usize,
}

impl Default for Simulation {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            decimation: 1,
        }
    }
}

impl Simulation {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    pub fn decimation(self, decimation: usize) -> Self {
        Self { decimation, ..self }
    }

    pub fn run(
        &self,
        model: &mut dyn BehaviorModel,
        source: &dyn InputSource,
        duration: f64,
    ) -> Result<Trace, SimError> {
        self.run_with(model, source, duration, |_, _| {})
    }

    /// Like [`run`](Self::run); `before_step(t, model)` runs ahead of every
    /// grid step and may retune parameters (time-varying faults).
    pub fn run_with<F>(
        &self,
        model: &mut dyn BehaviorModel,
        source: &dyn InputSource,
        duration: f64,
        mut before_step: F,
    ) -> Result<Trace, SimError>
    where
        F: FnMut(f64, &mut dyn BehaviorModel),
    {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidArgument(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(SimError::InvalidArgument(format!(
                "duration must be > 0, got {duration}"
            )));
        }
        if self.decimation == 0 {
            return Err(SimError::InvalidArgument("decimation must be >= 1".into()));
        }
        let steps = (duration / self.dt - 1e-9).ceil().max(1.0) as u64;
        let tol = self.dt * 1e-9;
        let mut rec = Recorder::with_capacity((steps as usize / self.decimation) + 16);
        let mut effort = 0u64;

        model.reset();
        let mut inputs = source.inputs_at(0.0);
        model.apply_inputs(0.0, inputs, &mut rec.events);
        rec.flush_events(inputs);
        rec.push(SignalFrame::new(0.0, inputs, model.outputs()))?;

        // The next input edge is cached and only looked up again once passed.
        let mut next_edge = source.next_edge_after(tol);
        let mut until_record = self.decimation;
        for n in 0..steps {
            let t0 = n as f64 * self.dt;
            let t1 = ((n + 1) as f64 * self.dt).min(duration);
            before_step(t0, model);
            let mut a = t0;
            while let Some(raw) = next_edge.filter(|e| *e <= t1 + tol) {
                let e = raw.min(t1);
                if e > a {
                    effort += model.advance(a, e - a, &mut rec.events);
                    rec.flush_events(inputs);
                }
                a = e;
                inputs = source.inputs_at(raw);
                model.apply_inputs(e, inputs, &mut rec.events);
                rec.flush_events(inputs);
                if e < t1 {
                    rec.push(SignalFrame::new(e, inputs, model.outputs()))?;
                }
                next_edge = source.next_edge_after(a.max(raw) + tol);
            }
            if t1 > a {
                effort += model.advance(a, t1 - a, &mut rec.events);
                rec.flush_events(inputs);
            }
            until_record -= 1;
            let last = n + 1 == steps;
            if last || until_record == 0 || a == t1 {
                rec.push(SignalFrame::new(t1, inputs, model.outputs()))?;
            }
            if until_record == 0 {
                until_record = self.decimation;
            }
        }

        let md = model.metadata();
        Ok(Trace {
            meta: TraceMeta {
                model_id: md.model_id.clone(),
                depth: Some(md.depth.level()),
                parameters: model.parameters(),
                dt: self.dt,
                seed: None,
                effort,
                model_energy_j: model.energy_j(),
            },
            frames: rec.frames,
        })
    }
}

struct Recorder {
    frames: Vec<SignalFrame>,
    events: Vec<crate::models::OutputEvent>,
}

impl Recorder {
    fn with_capacity(n: usize) -> Self {
        Self {
            frames: Vec::with_capacity(n),
            events: Vec::new(),
        }
    }

    fn push(&mut self, frame: SignalFrame) -> Result<(), SimError> {
        if !frame.vacuum_mbar.is_finite() || !frame.power_w.is_finite() {
            return Err(SimError::Divergence {
                t: frame.t,
                value: frame.vacuum_mbar,
            });
        }
        match self.frames.last_mut() {
            // Same instant: the later state is the right-continuous one.
            Some(last) if frame.t <= last.t => *last = SignalFrame { t: last.t, ..frame },
            _ => self.frames.push(frame),
        }
        Ok(())
    }

    fn flush_events(&mut self, inputs: Inputs) {
        if self.events.is_empty() {
            return;
        }
        let events = std::mem::take(&mut self.events);
        for ev in &events {
            // Divergence is caught at the following grid sample.
            let f = SignalFrame::new(ev.t, inputs, ev.outputs);
            let _ = self.push(f);
        }
        self.events = events;
        self.events.clear();
    }
}

/// Simulate `model` over `cycle` for `duration` seconds at step `dt`.
pub fn simulate(
    model: &mut dyn BehaviorModel,
    cycle: &CycleSpec,
    duration: f64,
    dt: f64,
) -> Result<Trace, SimError> {
    cycle.validate()?;
    if duration < cycle.cycle_period {
        return Err(SimError::InvalidArgument(format!(
            "duration {duration} s is shorter than one cycle ({} s)",
            cycle.cycle_period
        )));
    }
    Simulation::new(dt).run(model, cycle, duration)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "seconds")]
pub enum EvacuationTime {
    Reached(f64),
    NeverReached,
}

impl EvacuationTime {
    pub fn seconds(self) -> Option<f64> {
        match self {
            EvacuationTime::Reached(s) => Some(s),
            EvacuationTime::NeverReached => None,
        }
    }
}

fn rising_edges(frames: &[SignalFrame], pick: impl Fn(&SignalFrame) -> bool) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = false;
    for (i, f) in frames.iter().enumerate() {
        let now = pick(f);
        if now && !prev {
            out.push(i);
        }
        prev = now;
    }
    out
}

/// Time from the first suction rising edge to the first H2 after it.
pub fn evacuation_time(trace: &Trace) -> Result<EvacuationTime, SimError> {
    let edges = rising_edges(&trace.frames, |f| f.suction && !f.blow_off);
    let Some(&i) = edges.first() else {
        return Err(SimError::InvalidTrace("trace contains no suction rising edge".into()));
    };
    Ok(evacuation_from(&trace.frames, i))
}

fn evacuation_from(frames: &[SignalFrame], i: usize) -> EvacuationTime {
    let t0 = frames[i].t;
    frames[i..]
        .iter()
        .take_while(|f| f.suction || f.t == t0)
        .find(|f| f.part_present)
        .map_or(EvacuationTime::NeverReached, |f| EvacuationTime::Reached(f.t - t0))
}

/// Evacuation time of every cycle, in order.
pub fn evacuation_times(trace: &Trace) -> Vec<EvacuationTime> {
    rising_edges(&trace.frames, |f| f.suction && !f.blow_off)
        .into_iter()
        .map(|i| evacuation_from(&trace.frames, i))
        .collect()
}

/// Time from the first blow-off rising edge until the vacuum has dropped to
/// `release_mbar` (linear interpolation between samples). Models without a
/// vacuum channel fall back to the H2 falling edge.
pub fn blow_off_time(trace: &Trace, release_mbar: f64, vacuum_modeled: bool) -> Option<f64> {
    let i = *rising_edges(&trace.frames, |f| f.blow_off).first()?;
    let t0 = trace.frames[i].t;
    let fr = &trace.frames[i..];
    if !vacuum_modeled {
        return fr.iter().find(|f| !f.part_present).map(|f| f.t - t0);
    }
    if fr[0].vacuum_mbar <= release_mbar {
        return Some(0.0);
    }
    fr.windows(2).find(|w| w[1].vacuum_mbar <= release_mbar).map(|w| {
        let (a, b) = (&w[0], &w[1]);
        let s = (a.vacuum_mbar - release_mbar) / (a.vacuum_mbar - b.vacuum_mbar);
        a.t + s * (b.t - a.t) - t0
    })
}

/// Trapezoidal integral of the power channel over `[t0, t1]`, J.
pub fn energy_between(trace: &Trace, t0: f64, t1: f64) -> f64 {
    let mut e = 0.0;
    for w in trace.frames.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let lo = a.t.max(t0);
        let hi = b.t.min(t1);
        if hi <= lo {
            continue;
        }
        let p = |t: f64| a.power_w + (b.power_w - a.power_w) * (t - a.t) / (b.t - a.t);
        e += 0.5 * (p(lo) + p(hi)) * (hi - lo);
    }
    e
}

/// Mean energy of one cycle over all complete cycles in the trace, J.
pub fn energy_per_cycle(trace: &Trace, cycle: &CycleSpec) -> f64 {
    let full = ((trace.end() + 1e-9) / cycle.cycle_period).floor();
    let n = full.min(f64::from(cycle.repetitions)).max(1.0);
    let horizon = (n * cycle.cycle_period).min(trace.end());
    energy_between(trace, 0.0, horizon) / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerPolicy {
    /// Longest the controller waits for H2 before it stops the robot, s.
    pub max_wait_s: f64,
}

impl Default for ControllerPolicy {
    fn default() -> Self {
        Self { max_wait_s: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fault,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleVerdict {
    pub cycle: u32,
    pub verdict: Verdict,
    /// When the controller reacted (deadline for timeouts, signal loss for
    /// faults); absent for passing cycles.
    pub at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerReport {
    pub verdict: Verdict,
    pub cycles: Vec<CycleVerdict>,
}

impl ControllerReport {
    /// First instant the robot had to stop for lack of H2.
    pub fn first_standstill(&self) -> Option<f64> {
        self.cycles
            .iter()
            .find(|c| c.verdict == Verdict::Timeout)
            .and_then(|c| c.at)
    }
}

/// Signal-level PLC check on an existing trace.
pub fn controller_check(trace: &Trace, cycle: &CycleSpec, policy: &ControllerPolicy) -> ControllerReport {
    let mut cycles = Vec::new();
    for k in 0..cycle.repetitions {
        let start = cycle.cycle_start(k) + cycle.suction_on_at;
        if start > trace.end() {
            break;
        }
        let wait = policy.max_wait_s.min(cycle.blow_off_at - cycle.suction_on_at);
        let deadline = start + wait;
        let h2_in_time = trace
            .frames
            .iter()
            .skip_while(|f| f.t < start)
            .take_while(|f| f.t <= deadline)
            .any(|f| f.part_present);
        if !h2_in_time {
            cycles.push(CycleVerdict {
                cycle: k,
                verdict: Verdict::Timeout,
                at: Some(deadline),
            });
            continue;
        }
        let move_from = cycle.cycle_start(k) + cycle.blow_off_at - cycle.move_duration;
        let move_to = cycle.cycle_start(k) + cycle.blow_off_at;
        let mut prev = trace.frame_at(move_from).copied();
        let mut lost = None;
        for f in trace.frames.iter().skip_while(|f| f.t <= move_from).take_while(|f| f.t < move_to) {
            if let Some(p) = prev {
                if (p.part_present && !f.part_present) || (p.in_control && !f.in_control) {
                    lost = Some(f.t);
                    break;
                }
            }
            prev = Some(*f);
        }
        cycles.push(CycleVerdict {
            cycle: k,
            verdict: if lost.is_some() { Verdict::Fault } else { Verdict::Pass },
            at: lost,
        });
    }
    let verdict = cycles.iter().map(|c| c.verdict).max().unwrap_or(Verdict::Pass);
    ControllerReport { verdict, cycles }
}

/// Simulate `model` over every repetition of `cycle` and check it.
pub fn controller_in_loop(
    model: &mut dyn BehaviorModel,
    cycle: &CycleSpec,
    policy: &ControllerPolicy,
    dt: f64,
) -> Result<ControllerReport, SimError> {
    let trace = simulate(model, cycle, cycle.duration(), dt)?;
    Ok(controller_check(&trace, cycle, policy))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub depth: u8,
    pub model_id: String,
    pub runs: usize,
    pub median_s: f64,
    pub mean_s: f64,
    pub min_s: f64,
    pub effort: u64,
}

/// Wall-clock benchmark. Runs are interleaved round-robin across models so
/// machine load drifts affect every depth alike.
pub fn benchmark(
    models: &[Box<dyn BehaviorModel>],
    cycle: &CycleSpec,
    horizon: f64,
    dt: f64,
    runs: usize,
) -> Result<Vec<BenchRow>, SimError> {
    if runs == 0 {
        return Err(SimError::InvalidArgument("runs must be >= 1".into()));
    }
    let sim = Simulation::new(dt);
    let mut times = vec![Vec::with_capacity(runs); models.len()];
    let mut effort = vec![0u64; models.len()];
    let mut work: Vec<Box<dyn BehaviorModel>> = models.to_vec();
    // One untimed warm-up pass.
    for m in work.iter_mut() {
        sim.run(m.as_mut(), cycle, horizon)?;
    }
    for _ in 0..runs {
        for (i, m) in work.iter_mut().enumerate() {
            let started = Instant::now();
            let trace = sim.run(m.as_mut(), cycle, horizon)?;
            times[i].push(started.elapsed().as_secs_f64());
            effort[i] = trace.meta.effort;
            std::hint::black_box(&trace);
        }
    }
    Ok(work
        .iter()
        .zip(times)
        .zip(effort)
        .map(|((m, mut t), effort)| {
            t.sort_by(f64::total_cmp);
            let median = if t.len() % 2 == 1 {
                t[t.len() / 2]
            } else {
                0.5 * (t[t.len() / 2 - 1] + t[t.len() / 2])
            };
            BenchRow {
                depth: m.depth().level(),
                model_id: m.metadata().model_id.clone(),
                runs,
                median_s: median,
                mean_s: t.iter().sum::<f64>() / t.len() as f64,
                min_s: t[0],
                effort,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::{GrippingAssembly, ThresholdConfig};
    use crate::metadata::ModelingDepth;
    use crate::models::{build_model, ModelSettings, PlantSpec};

    fn model(depth: ModelingDepth) -> Box<dyn BehaviorModel> {
        let asm = GrippingAssembly::reference();
        let t = ThresholdConfig::new(414.0, 434.0, 10.0).unwrap();
        build_model(depth, &PlantSpec::from(&asm), t, ModelSettings::default()).unwrap()
    }

    #[test]
    fn cycle_inputs_and_edges() {
        let c = CycleSpec::table1().with_repetitions(2);
        assert_eq!(c.inputs_at(0.0), Inputs::IDLE);
        assert!(c.inputs_at(0.05).suction);
        assert!(c.inputs_at(0.6).blow_off && !c.inputs_at(0.6).suction);
        assert_eq!(c.inputs_at(0.7), Inputs::IDLE);
        assert!(c.inputs_at(0.86).suction);
        assert_eq!(c.inputs_at(1.7), Inputs::IDLE);
        assert_eq!(c.next_edge_after(0.0), Some(0.05));
        assert_eq!(c.next_edge_after(0.05), Some(0.6));
        let e = c.next_edge_after(0.7).unwrap();
        assert!((e - 0.85).abs() < 1e-12);
        assert_eq!(c.next_edge_after(1.5), None);
    }

    #[test]
    fn invalid_cycles_rejected() {
        let mut c = CycleSpec::table1();
        c.blow_off_at = 0.01;
        assert!(c.validate().is_err());
        let mut c = CycleSpec::table1();
        c.blow_off_duration = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn edges_are_sampled_even_off_grid() {
        let mut m = model(ModelingDepth::Discrete);
        let tr = simulate(m.as_mut(), &CycleSpec::table1(), 0.8, 0.03).unwrap();
        tr.validate().unwrap();
        assert!(tr.frames.iter().any(|f| (f.t - 0.05).abs() < 1e-12 && f.suction));
        let f = tr.frame_at(0.049).unwrap();
        assert!(!f.suction && !f.part_present);
        let f = tr.frame_at(0.05).unwrap();
        assert!(f.part_present);
        assert!((tr.end() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let mut m = model(ModelingDepth::PhysicalNonSpatial);
        let tr = simulate(m.as_mut(), &CycleSpec::table1(), 0.8, 1e-3).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_s,suction,blow_off,vacuum_mbar,power_W,h1,h2\n"));
        let back = Trace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.frames.len(), tr.frames.len());
        assert_eq!(back.frames, tr.frames);
    }

    #[test]
    fn read_csv_rejects_bad_input() {
        let bad_header = "t,suction\n0,0\n";
        assert!(Trace::read_csv(bad_header.as_bytes()).is_err());
        let not_increasing = "t_s,suction,blow_off,vacuum_mbar,power_W,h1,h2\n0,0,0,0,0,0,0\n0,0,0,0,0,0,0\n";
        assert!(Trace::read_csv(not_increasing.as_bytes()).is_err());
        let bad_bool = "t_s,suction,blow_off,vacuum_mbar,power_W,h1,h2\n0,2,0,0,0,0,0\n";
        assert!(Trace::read_csv(bad_bool.as_bytes()).is_err());
    }

    #[test]
    fn energy_of_rectangle() {
        let frame = |t, p| SignalFrame {
            t,
            suction: false,
            blow_off: false,
            part_present: false,
            in_control: false,
            vacuum_mbar: 0.0,
            power_w: p,
        };
        let tr = Trace {
            meta: TraceMeta::default(),
            frames: vec![frame(0.0, 3.0), frame(0.5, 3.0), frame(0.5 + 1e-12, 0.2), frame(0.8, 0.2)],
        };
        let c = CycleSpec::table1();
        let e = energy_per_cycle(&tr, &c);
        assert!((e - (1.5 + 0.2 * 0.3)).abs() < 1e-9, "{e}");
        let zero = Trace {
            meta: TraceMeta::default(),
            frames: vec![frame(0.0, 0.0), frame(0.8, 0.0)],
        };
        assert_eq!(energy_per_cycle(&zero, &c), 0.0);
    }

    #[test]
    fn evacuation_time_requires_an_edge() {
        let tr = Trace {
            meta: TraceMeta::default(),
            frames: vec![SignalFrame::new(0.0, Inputs::IDLE, Default::default())],
        };
        assert!(matches!(evacuation_time(&tr), Err(SimError::InvalidTrace(_))));
    }

    #[test]
    fn recorded_inputs_replay_the_cycle() {
        let mut m = model(ModelingDepth::ContinuousSimplified);
        let c = CycleSpec::table1().with_repetitions(2);
        let tr = simulate(m.as_mut(), &c, 1.6, 1e-3).unwrap();
        let rec = RecordedInputs::from_trace(&tr);
        for i in 0..160 {
            let t = i as f64 * 0.01 + 0.003;
            assert_eq!(rec.inputs_at(t), c.inputs_at(t), "t = {t}");
        }
        let replay = Simulation::new(1e-3).run(m.as_mut(), &rec, 1.6).unwrap();
        assert_eq!(replay.frames, tr.frames);
    }

    #[test]
    fn decimation_keeps_events() {
        let mut m = model(ModelingDepth::PhysicalNonSpatial);
        let full = Simulation::new(1e-4).run(m.as_mut(), &CycleSpec::table1(), 0.8).unwrap();
        let dec = Simulation::new(1e-4).decimation(100).run(m.as_mut(), &CycleSpec::table1(), 0.8).unwrap();
        assert!(dec.frames.len() < full.frames.len() / 20);
        assert_eq!(evacuation_time(&dec).unwrap(), evacuation_time(&full).unwrap());
    }
}
