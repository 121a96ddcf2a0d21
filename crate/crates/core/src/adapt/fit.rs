use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::compare::{compare_traces, Channels, DeviationReport};
use super::AdaptError;
use crate::models::{BehaviorModel, ParamMap};
use crate::optim::{grid_search, Bounds, NelderMead};
use crate::sim::{RecordedInputs, Simulation, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Seed grid resolution per free parameter.
    pub grid_per_dim: usize,
    pub nelder_mead: NelderMead,
    /// Integration step; the measured trace's own step when absent.
    pub dt: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            grid_per_dim: 9,
            nelder_mead: NelderMead {
                max_iter: 150,
                xtol: 1e-5,
                ftol: 1e-9,
                initial_step: 0.05,
            },
            dt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Full parameter set after fitting (free parameters tuned, the rest as
    /// given).
    pub parameters: ParamMap,
    pub residual: DeviationReport,
    /// Value of the minimized objective.
    pub objective: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// Model evaluations of the final replay per simulated second.
    pub effort_per_sim_s: f64,
    /// Wall-clock of the final replay per simulated second.
    pub runtime_per_sim_s: f64,
}

/// The quantity a model is fitted on: vacuum RMSE when the model predicts
/// vacuum, otherwise the time the H2/H1 signals disagree with the measurement.
pub fn fit_objective(model: &dyn BehaviorModel, report: &DeviationReport) -> f64 {
    if model.vacuum_modeled() {
        report.rmse_mbar
    } else {
        report.h2_mismatch_s + report.h1_mismatch_s
    }
}

/// Replay the measured inputs through `model` and compare with `measured`.
pub fn replay(
    model: &mut dyn BehaviorModel,
    measured: &Trace,
    dt: f64,
) -> Result<(Trace, DeviationReport), AdaptError> {
    let source = RecordedInputs::from_trace(measured);
    let trace = Simulation::new(dt).run(model, &source, measured.end())?;
    let report = compare_traces(measured, &trace, Channels::ALL)?;
    Ok((trace, report))
}

/// Fit the model's free parameters (taken with their bounds from its
/// metadata) to `measured`: a coarse grid picks the start point, then a
/// bounded Nelder-Mead refines it. Failed simulations score +inf; if no
/// parameter set simulates at all the fit fails.
pub fn fit_parameters(
    model: &dyn BehaviorModel,
    measured: &Trace,
    opts: &FitOptions,
) -> Result<FitResult, AdaptError> {
    let dt = opts.dt.unwrap_or(measured.meta.dt);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(AdaptError::InvalidArgument(format!("fit step must be > 0, got {dt}")));
    }
    if measured.frames.len() < 2 || measured.end() <= 0.0 {
        return Err(AdaptError::InvalidArgument("measured trace is too short to fit".into()));
    }
    let free = model.metadata().free_parameters.clone();
    let bounds = Bounds::new(
        free.iter().map(|p| p.lower).collect(),
        free.iter().map(|p| p.upper).collect(),
    );
    let base = model.parameters();
    let source = RecordedInputs::from_trace(measured);
    let sim = Simulation::new(dt);

    let mut work = model.box_clone();
    let mut last_error: Option<String> = None;
    let mut evaluate = |x: &[f64]| -> f64 {
        let mut params = base.clone();
        for (p, v) in free.iter().zip(x) {
            params.insert(p.name.clone(), *v);
        }
        if let Err(e) = work.set_parameters(&params) {
            last_error = Some(e.to_string());
            return f64::INFINITY;
        }
        let run = sim
            .run(work.as_mut(), &source, measured.end())
            .map_err(AdaptError::from)
            .and_then(|t| compare_traces(measured, &t, Channels::ALL));
        match run {
            Ok(r) => fit_objective(work.as_ref(), &r),
            Err(e) => {
                last_error = Some(e.to_string());
                f64::INFINITY
            }
        }
    };

    let start: Vec<f64> = free
        .iter()
        .map(|p| base.get(&p.name).map_or(0.5 * (p.lower + p.upper), |v| p.clamp(*v)))
        .collect();
    let f_start = evaluate(&start);
    let (seed, f_seed) = grid_search(&mut evaluate, &bounds, opts.grid_per_dim);
    let (x0, _) = if f_start <= f_seed { (start, f_start) } else { (seed, f_seed) };
    let grid_evals = 1 + opts.grid_per_dim.max(1).pow(free.len() as u32);
    let min = opts.nelder_mead.minimize(&mut evaluate, &x0, &bounds);
    if !min.f.is_finite() {
        return Err(AdaptError::FitFailed(
            last_error.unwrap_or_else(|| "objective is not finite anywhere".into()),
        ));
    }

    let mut parameters = base;
    for (p, v) in free.iter().zip(&min.x) {
        parameters.insert(p.name.clone(), *v);
    }
    let mut fitted = model.box_clone();
    fitted.set_parameters(&parameters)?;
    let clock = Instant::now();
    let (trace, residual) = replay(fitted.as_mut(), measured, dt)?;
    let wall = clock.elapsed().as_secs_f64();
    let horizon = measured.end();
    Ok(FitResult {
        objective: fit_objective(fitted.as_ref(), &residual),
        parameters,
        residual,
        evaluations: grid_evals + min.evaluations,
        converged: min.converged,
        effort_per_sim_s: trace.meta.effort as f64 / horizon,
        runtime_per_sim_s: wall / horizon,
    })
}
