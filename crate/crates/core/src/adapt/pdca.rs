use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compare::DeviationReport;
use super::fit::{fit_parameters, replay, FitOptions};
use super::AdaptError;
use crate::metadata::{BehaviorKind, Discipline, MetadataQuery, ModelingDepth};
use crate::models::{BehaviorModel, ParamMap};
use crate::pool::ModelPool;
use crate::sim::Trace;

pub const LEAKAGE_CAUSE: &str = "leakage / worn suction lip";
pub const PUMP_CAUSE: &str = "pump degradation";
pub const NO_FAULT: &str = "no fault isolated";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityWeights {
    pub quality: f64,
    pub time: f64,
    pub cost: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        Self {
            quality: 0.6,
            time: 0.3,
            cost: 0.1,
        }
    }
}

/// The channel the quality gate is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityChannel {
    /// Vacuum RMSE against `epsilon_mbar`.
    #[default]
    Vacuum,
    /// Fraction of time the H2/H1 signals disagree, against
    /// `signal_tolerance`. For applications that only consume the signals.
    Signals,
}

/// What the application needs from its active model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Requirements {
    pub epsilon_mbar: f64,
    pub quality_channel: QualityChannel,
    pub signal_tolerance: f64,
    /// Wall-clock seconds allowed per simulated second.
    pub runtime_budget_s_per_sim_s: Option<f64>,
    pub require_error_prone: bool,
    pub disciplines: Option<BTreeSet<Discipline>>,
    pub weights: UtilityWeights,
}

impl Default for Requirements {
    fn default() -> Self {
        Self {
            epsilon_mbar: 20.0,
            quality_channel: QualityChannel::Vacuum,
            signal_tolerance: 0.02,
            runtime_budget_s_per_sim_s: None,
            require_error_prone: false,
            disciplines: None,
            weights: UtilityWeights::default(),
        }
    }
}

impl Requirements {
    pub fn validate(&self) -> Result<(), AdaptError> {
        let bad = |m: String| Err(AdaptError::InvalidArgument(m));
        if !(self.epsilon_mbar > 0.0 && self.epsilon_mbar.is_finite()) {
            return bad(format!("epsilon must be > 0 mbar, got {}", self.epsilon_mbar));
        }
        if !(self.signal_tolerance > 0.0 && self.signal_tolerance <= 1.0) {
            return bad(format!(
                "signal tolerance must be in (0, 1], got {}",
                self.signal_tolerance
            ));
        }
        if let Some(b) = self.runtime_budget_s_per_sim_s {
            if !(b > 0.0) {
                return bad(format!("runtime budget must be > 0, got {b}"));
            }
        }
        let w = self.weights;
        if [w.quality, w.time, w.cost].iter().any(|v| !(*v >= 0.0) || !v.is_finite())
            || w.quality + w.time + w.cost <= 0.0
        {
            return bad("utility weights must be >= 0 and not all zero".into());
        }
        Ok(())
    }

    fn tolerance(&self) -> f64 {
        match self.quality_channel {
            QualityChannel::Vacuum => self.epsilon_mbar,
            QualityChannel::Signals => self.signal_tolerance,
        }
    }
}

/// The residual that the quality gate looks at.
pub fn quality_residual(report: &DeviationReport, channel: QualityChannel) -> f64 {
    match channel {
        QualityChannel::Vacuum => report.rmse_mbar,
        QualityChannel::Signals => report.signal_mismatch_fraction(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoalTarget {
    ReduceGap,
    MeetNewRequirement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoalCause {
    /// Requirements unchanged: the asset or its environment has changed.
    AssetOrEnvironment,
    RequirementChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationGoal {
    pub target: GoalTarget,
    pub cause: GoalCause,
    pub requirements: Requirements,
    /// Pool filter derived from the requirements (and the depth floor).
    pub query: MetadataQuery,
    /// Residual of the active model when the goal was raised.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfiguration {
    pub model_id: String,
    pub depth: ModelingDepth,
    pub parameters: ParamMap,
    pub residual: DeviationReport,
    /// Residual on the goal's quality channel; absent when the fit failed.
    pub quality_residual: Option<f64>,
    pub effort_per_sim_s: f64,
    pub runtime_per_sim_s: f64,
    pub runtime_class: u8,
    pub utility: Option<f64>,
    pub gate_passed: bool,
    pub fit_evaluations: usize,
    pub failed: Option<String>,
}

impl ModelConfiguration {
    /// The model as it is, unfitted and unscored.
    pub fn of_model(model: &dyn BehaviorModel) -> Self {
        let md = model.metadata();
        Self {
            model_id: md.model_id.clone(),
            depth: md.depth,
            parameters: model.parameters(),
            residual: DeviationReport::default(),
            quality_residual: None,
            effort_per_sim_s: 0.0,
            runtime_per_sim_s: 0.0,
            runtime_class: md.runtime_class,
            utility: None,
            gate_passed: false,
            fit_evaluations: 0,
            failed: None,
        }
    }

    fn same_configuration(&self, other: &ModelConfiguration) -> bool {
        self.model_id == other.model_id && self.parameters == other.parameters
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveModelConfiguration {
    pub configuration: ModelConfiguration,
    /// Requirements in force when this configuration was activated.
    pub requirements: Requirements,
    pub goal: Option<AdaptationGoal>,
    pub candidates_considered: Vec<String>,
    /// Adaptation round that produced this configuration.
    pub epoch: u64,
    pub activated_unix_ms: u64,
}

impl ActiveModelConfiguration {
    pub fn initial(model: &dyn BehaviorModel, requirements: Requirements) -> Self {
        Self {
            configuration: ModelConfiguration::of_model(model),
            requirements,
            goal: None,
            candidates_considered: Vec::new(),
            epoch: 0,
            activated_unix_ms: now_ms(),
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Holder of the one active configuration of an application. Replacement
/// is atomic; a newer round always wins, and within a round the better
/// ranked configuration wins regardless of arrival order.
#[derive(Debug, Default)]
pub struct ActiveSlot {
    inner: Mutex<Option<ActiveModelConfiguration>>,
}

impl ActiveSlot {
    pub fn new(initial: ActiveModelConfiguration) -> Self {
        Self {
            inner: Mutex::new(Some(initial)),
        }
    }

    pub fn current(&self) -> Option<ActiveModelConfiguration> {
        self.inner.lock().expect("active slot poisoned").clone()
    }

    /// Returns whether the active configuration changed.
    pub fn activate(&self, candidate: ActiveModelConfiguration) -> bool {
        let mut guard = self.inner.lock().expect("active slot poisoned");
        let replace = match guard.as_ref() {
            None => true,
            Some(cur) if cur.configuration.same_configuration(&candidate.configuration) => false,
            Some(cur) => match candidate.epoch.cmp(&cur.epoch) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => {
                    rank_order(&candidate.configuration, &cur.configuration) == Ordering::Less
                }
            },
        };
        if replace {
            *guard = Some(candidate);
        }
        replace
    }
}

/// Decide whether adaptation is needed. A goal is raised when the active
/// model's residual exceeds the tolerance or the requirements differ from
/// those the active model was chosen for.
pub fn plan(
    report: &DeviationReport,
    requirements: &Requirements,
    active: &ActiveModelConfiguration,
) -> Option<AdaptationGoal> {
    let gap = quality_residual(report, requirements.quality_channel);
    let exceeds = gap > requirements.tolerance();
    let changed = *requirements != active.requirements;
    let (target, cause) = match (exceeds, changed) {
        (false, false) => return None,
        (true, false) => (GoalTarget::ReduceGap, GoalCause::AssetOrEnvironment),
        (true, true) => (GoalTarget::ReduceGap, GoalCause::RequirementChange),
        (false, true) => (GoalTarget::MeetNewRequirement, GoalCause::RequirementChange),
    };
    let mut query = MetadataQuery::any();
    if target == GoalTarget::ReduceGap {
        query = query.with_depth(active.configuration.depth, ModelingDepth::PhysicalSpatial);
    }
    if requirements.require_error_prone {
        query = query.with_behavior(BehaviorKind::ErrorProne);
    }
    if let Some(d) = &requirements.disciplines {
        query = query.with_disciplines(d.iter().copied());
    }
    Some(AdaptationGoal {
        target,
        cause,
        requirements: requirements.clone(),
        query,
        gap,
    })
}

/// Candidate models for `goal`, by ascending depth.
pub fn do_structural(
    pool: &ModelPool,
    goal: &AdaptationGoal,
) -> Result<Vec<Box<dyn BehaviorModel>>, AdaptError> {
    if pool.is_empty() {
        return Err(AdaptError::NoCandidate("the model pool is empty".into()));
    }
    let found = pool.query(&goal.query);
    if found.is_empty() {
        return Err(AdaptError::NoCandidate(
            "no pool model satisfies the goal's metadata filter".into(),
        ));
    }
    Ok(found)
}

/// Fit one candidate and package the result. A failed fit yields a
/// configuration marked failed instead of an error.
pub fn evaluate_candidate(
    model: &dyn BehaviorModel,
    measured: &Trace,
    requirements: &Requirements,
    fit: &FitOptions,
) -> ModelConfiguration {
    let mut config = ModelConfiguration::of_model(model);
    match fit_parameters(model, measured, fit) {
        Ok(r) => {
            config.quality_residual = Some(quality_residual(&r.residual, requirements.quality_channel));
            config.parameters = r.parameters;
            config.residual = r.residual;
            config.effort_per_sim_s = r.effort_per_sim_s;
            config.runtime_per_sim_s = r.runtime_per_sim_s;
            config.fit_evaluations = r.evaluations;
        }
        Err(e) => config.failed = Some(e.to_string()),
    }
    config
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    /// Best first: scored candidates, then unscored ones, then failed ones.
    pub ranked: Vec<ModelConfiguration>,
    /// False when no candidate passed the gate and the ranking is best-effort.
    pub goal_met: bool,
}

/// 1 for the smallest value, 0 for the largest, 1 for all when they tie.
fn goodness(values: &[f64], v: f64) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        (hi - v) / (hi - lo)
    } else {
        1.0
    }
}

fn rank_order(a: &ModelConfiguration, b: &ModelConfiguration) -> Ordering {
    let ua = a.utility.unwrap_or(f64::NEG_INFINITY);
    let ub = b.utility.unwrap_or(f64::NEG_INFINITY);
    ub.total_cmp(&ua)
        .then_with(|| a.depth.cmp(&b.depth))
        .then_with(|| a.model_id.cmp(&b.model_id))
}

/// Gate candidates on quality (and runtime budget, if any), then score the
/// survivors with the weighted utility on min-max normalized scales. The
/// time axis uses the deterministic effort per simulated second and the
/// cost axis the static runtime class.
pub fn check(
    candidates: Vec<ModelConfiguration>,
    goal: &AdaptationGoal,
) -> Result<CheckOutcome, AdaptError> {
    let req = &goal.requirements;
    let tol = req.tolerance();
    let (mut usable, failed): (Vec<_>, Vec<_>) = candidates
        .into_iter()
        .partition(|c| c.failed.is_none() && c.quality_residual.is_some());
    if usable.is_empty() {
        return Err(AdaptError::NoCandidate("every candidate failed".into()));
    }
    for c in usable.iter_mut() {
        let quality_ok = c.quality_residual.is_some_and(|q| q <= tol);
        let time_ok = req
            .runtime_budget_s_per_sim_s
            .map_or(true, |b| c.runtime_per_sim_s <= b);
        c.gate_passed = quality_ok && time_ok;
        c.utility = None;
    }
    let goal_met = usable.iter().any(|c| c.gate_passed);
    let (mut scored, mut rest): (Vec<_>, Vec<_>) =
        usable.into_iter().partition(|c| c.gate_passed || !goal_met);

    let q: Vec<f64> = scored.iter().map(|c| c.quality_residual.unwrap_or(0.0)).collect();
    let t: Vec<f64> = scored.iter().map(|c| c.effort_per_sim_s).collect();
    let k: Vec<f64> = scored.iter().map(|c| c.runtime_class as f64).collect();
    let w = req.weights;
    for (i, c) in scored.iter_mut().enumerate() {
        c.utility = Some(
            w.quality * goodness(&q, q[i]) + w.time * goodness(&t, t[i]) + w.cost * goodness(&k, k[i]),
        );
    }
    scored.sort_by(rank_order);
    rest.sort_by(|a, b| {
        a.quality_residual
            .unwrap_or(f64::INFINITY)
            .total_cmp(&b.quality_residual.unwrap_or(f64::INFINITY))
            .then_with(|| a.depth.cmp(&b.depth))
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    let mut failed = failed;
    failed.sort_by(|a, b| a.depth.cmp(&b.depth).then_with(|| a.model_id.cmp(&b.model_id)));
    scored.extend(rest);
    scored.extend(failed);
    Ok(CheckOutcome {
        ranked: scored,
        goal_met,
    })
}

/// Activate `best` in `slot` and return what is active afterwards.
pub fn act(
    slot: &ActiveSlot,
    best: ModelConfiguration,
    goal: &AdaptationGoal,
    candidates_considered: Vec<String>,
    epoch: u64,
) -> ActiveModelConfiguration {
    slot.activate(ActiveModelConfiguration {
        configuration: best,
        requirements: goal.requirements.clone(),
        goal: Some(goal.clone()),
        candidates_considered,
        epoch,
        activated_unix_ms: now_ms(),
    });
    slot.current().expect("slot holds a configuration after activation")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisTolerances {
    /// Leak diameters above this count as leakage, mm.
    pub d_leak_mm: f64,
    /// Relative pump flow deficit counted as degradation.
    pub q_max_fraction: f64,
}

impl Default for DiagnosisTolerances {
    fn default() -> Self {
        Self {
            d_leak_mm: 0.05,
            q_max_fraction: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cause {
    pub cause: String,
    pub parameter: String,
    pub estimate: f64,
    pub nominal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub causes: Vec<Cause>,
    pub summary: String,
}

/// Map out-of-tolerance fitted parameters to named causes.
pub fn diagnose(fitted: &ParamMap, nominal: &ParamMap, tol: &DiagnosisTolerances) -> Diagnosis {
    let mut causes = Vec::new();
    if let Some(&d) = fitted.get("d_leak") {
        let nominal_d = nominal.get("d_leak").copied().unwrap_or(0.0);
        if d - nominal_d > tol.d_leak_mm {
            causes.push(Cause {
                cause: LEAKAGE_CAUSE.into(),
                parameter: "d_leak".into(),
                estimate: d,
                nominal: nominal_d,
            });
        }
    }
    if let (Some(&q), Some(&q0)) = (fitted.get("q_max"), nominal.get("q_max")) {
        if q < (1.0 - tol.q_max_fraction) * q0 {
            causes.push(Cause {
                cause: PUMP_CAUSE.into(),
                parameter: "q_max".into(),
                estimate: q,
                nominal: q0,
            });
        }
    }
    let summary = if causes.is_empty() {
        NO_FAULT.to_string()
    } else {
        causes.iter().map(|c| c.cause.as_str()).collect::<Vec<_>>().join("; ")
    };
    Diagnosis { causes, summary }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdcaLimits {
    /// Worker threads for candidate evaluation.
    pub threads: usize,
    /// Grid and iteration caps of the parameter fit.
    pub fit: FitOptions,
    /// Candidates not started within this wall time are marked failed.
    pub max_wall_s: Option<f64>,
    pub diagnosis: DiagnosisTolerances,
}

impl Default for PdcaLimits {
    fn default() -> Self {
        Self {
            threads: 1,
            fit: FitOptions::default(),
            max_wall_s: None,
            diagnosis: DiagnosisTolerances::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptationStatus {
    /// Active model in sync and requirements unchanged.
    NoGoal,
    Adapted,
    /// No candidate passed the gate; the best-effort choice was activated.
    GoalUnmet,
    NoCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationResult {
    pub status: AdaptationStatus,
    pub goal: Option<AdaptationGoal>,
    pub previous_model_id: String,
    /// Residual of the previously active configuration.
    pub initial_residual: DeviationReport,
    /// Ranked candidate table.
    pub candidates: Vec<ModelConfiguration>,
    pub active: Option<ActiveModelConfiguration>,
    pub diagnosis: Option<Diagnosis>,
    pub note: Option<String>,
}

const VOLATILE_KEYS: [&str; 2] = ["runtime_per_sim_s", "activated_unix_ms"];

fn strip_volatile(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            for k in VOLATILE_KEYS {
                map.remove(k);
            }
            map.values_mut().for_each(strip_volatile);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_volatile),
        _ => {}
    }
}

impl AdaptationResult {
    pub fn active_depth(&self) -> Option<ModelingDepth> {
        self.active.as_ref().map(|a| a.configuration.depth)
    }

    /// JSON without wall-clock dependent fields, for reproducibility checks.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("result serializes");
        strip_volatile(&mut v);
        serde_json::to_string_pretty(&v).expect("value serializes")
    }
}

/// One full adaptation round over `measured` for the application whose
/// active configuration lives in `slot`.
pub fn run_pdca(
    pool: &ModelPool,
    measured: &Trace,
    requirements: &Requirements,
    limits: &PdcaLimits,
    slot: &ActiveSlot,
) -> Result<AdaptationResult, AdaptError> {
    requirements.validate()?;
    if limits.threads == 0 {
        return Err(AdaptError::InvalidArgument("threads must be >= 1".into()));
    }
    let started = Instant::now();
    let active = slot.current().ok_or(AdaptError::NoActive)?;
    let active_id = active.configuration.model_id.clone();
    let mut model = pool
        .get(&active_id)
        .ok_or_else(|| AdaptError::UnknownModel(active_id.clone()))?;
    model.set_parameters(&active.configuration.parameters)?;
    let dt = limits.fit.dt.unwrap_or(measured.meta.dt);
    let (_, report) = replay(model.as_mut(), measured, dt)?;

    let mut result = AdaptationResult {
        status: AdaptationStatus::NoGoal,
        goal: None,
        previous_model_id: active_id,
        initial_residual: report,
        candidates: Vec::new(),
        active: Some(active.clone()),
        diagnosis: None,
        note: None,
    };
    let Some(goal) = plan(&report, requirements, &active) else {
        return Ok(result);
    };
    result.goal = Some(goal.clone());
    let models = match do_structural(pool, &goal) {
        Ok(m) => m,
        Err(AdaptError::NoCandidate(why)) => {
            result.status = AdaptationStatus::NoCandidate;
            result.note = Some(why);
            return Ok(result);
        }
        Err(e) => return Err(e),
    };
    log::info!(
        "adaptation goal {:?} ({:?}), {} candidates",
        goal.target,
        goal.cause,
        models.len()
    );

    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(limits.threads)
        .build()
        .map_err(|e| AdaptError::InvalidArgument(format!("thread pool: {e}")))?;
    let deadline = limits.max_wall_s;
    let configs: Vec<ModelConfiguration> = workers.install(|| {
        models
            .par_iter()
            .map(|m| {
                if deadline.is_some_and(|d| started.elapsed().as_secs_f64() > d) {
                    let mut c = ModelConfiguration::of_model(m.as_ref());
                    c.failed = Some("wall-time limit reached before evaluation".into());
                    return c;
                }
                let c = evaluate_candidate(m.as_ref(), measured, requirements, &limits.fit);
                log::debug!("{}: residual {:?}", c.model_id, c.quality_residual);
                c
            })
            .collect()
    });
    let considered: Vec<String> = configs.iter().map(|c| c.model_id.clone()).collect();

    let outcome = match check(configs.clone(), &goal) {
        Ok(o) => o,
        Err(AdaptError::NoCandidate(why)) => {
            result.status = AdaptationStatus::NoCandidate;
            result.note = Some(why);
            result.candidates = configs;
            return Ok(result);
        }
        Err(e) => return Err(e),
    };
    let best = outcome.ranked[0].clone();
    let nominal = pool
        .get(&best.model_id)
        .map(|m| m.parameters())
        .unwrap_or_default();
    let now_active = act(slot, best, &goal, considered, active.epoch + 1);
    result.diagnosis = Some(diagnose(
        &now_active.configuration.parameters,
        &nominal,
        &limits.diagnosis,
    ));
    result.status = if outcome.goal_met {
        AdaptationStatus::Adapted
    } else {
        result.note = Some("goal unmet: no candidate passed the gate".into());
        AdaptationStatus::GoalUnmet
    };
    result.candidates = outcome.ranked;
    result.active = Some(now_active);
    Ok(result)
}
