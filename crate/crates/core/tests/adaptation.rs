use twinforge::adapt::{
    do_structural, plan, replay, run_pdca, ActiveModelConfiguration, ActiveSlot, AdaptationResult,
    AdaptationStatus, GoalTarget, PdcaLimits, QualityChannel, Requirements, UtilityWeights, PUMP_CAUSE,
};
use twinforge::components::{GrippingAssembly, ProcessParams};
use twinforge::design::design_thresholds;
use twinforge::emulator::{emulate, EmulateOptions, PlantConfig};
use twinforge::metadata::ModelingDepth;
use twinforge::models::{build_model, BehaviorModel, ModelSettings, ParamMap, PlantSpec};
use twinforge::pool::ModelPool;
use twinforge::registry::{
    create_twin, export_package, import_package, semantify, shipped_data_basis, shipped_library,
    shipped_system_graph, shipped_translation_table, Provenance, TwinPackage,
};
use twinforge::sim::{CycleSpec, Trace};

fn model(depth: u8) -> Box<dyn BehaviorModel> {
    let asm = GrippingAssembly::reference();
    let t = design_thresholds(&asm, &ProcessParams::table1()).unwrap().1;
    build_model(
        ModelingDepth::from_level(depth).unwrap(),
        &PlantSpec::from(&asm),
        t,
        ModelSettings::default(),
    )
    .unwrap()
}

fn pool() -> ModelPool {
    ModelPool::from_models((1..=4).map(model), "built-in")
}

fn measure(overrides: &[(&str, f64)]) -> Trace {
    let plant = PlantConfig {
        true_overrides: overrides.iter().map(|(k, v)| (k.to_string(), *v)).collect::<ParamMap>(),
        seed: 3,
        ..PlantConfig::reference()
    };
    let cycle = CycleSpec::table1().with_repetitions(2);
    emulate(&plant, &cycle, cycle.duration(), &EmulateOptions::default()).unwrap()
}

fn adapt_from(
    pool: &ModelPool,
    initial: &dyn BehaviorModel,
    was: Requirements,
    now: &Requirements,
    measured: &Trace,
) -> AdaptationResult {
    let slot = ActiveSlot::new(ActiveModelConfiguration::initial(initial, was));
    run_pdca(pool, measured, now, &PdcaLimits::default(), &slot).unwrap()
}

#[test]
fn model_in_sync_is_left_alone() {
    let measured = measure(&[]);
    let req = Requirements::default();
    let r = adapt_from(&pool(), model(4).as_ref(), req.clone(), &req, &measured);
    assert_eq!(r.status, AdaptationStatus::NoGoal);
    assert!(r.candidates.is_empty());
    assert!(r.initial_residual.rmse_mbar < 2.0);
    assert_eq!(r.active.unwrap().configuration.model_id, "gripper.ECBPMi.d4");
}

#[test]
fn pump_degradation_is_diagnosed_with_an_error_prone_model() {
    let measured = measure(&[("q_max", 1.1)]);
    let req = Requirements {
        require_error_prone: true,
        ..Requirements::default()
    };
    let r = adapt_from(&pool(), model(2).as_ref(), Requirements::default(), &req, &measured);
    assert_eq!(r.status, AdaptationStatus::Adapted);
    let considered: Vec<&str> = r.candidates.iter().map(|c| c.model_id.as_str()).collect();
    assert_eq!(considered, ["gripper.ECBPMi.d4"]);
    let active = r.active.unwrap().configuration;
    assert!((active.parameters["q_max"] - 1.1).abs() < 0.05, "{:?}", active.parameters);
    assert!(active.parameters["d_leak"] < 0.05);
    let diagnosis = r.diagnosis.unwrap();
    assert_eq!(diagnosis.summary, PUMP_CAUSE);
}

#[test]
fn signal_only_application_settles_on_a_cheap_model() {
    let measured = measure(&[]);
    let was = Requirements::default();
    let now = Requirements {
        quality_channel: QualityChannel::Signals,
        weights: UtilityWeights {
            quality: 0.2,
            time: 0.6,
            cost: 0.2,
        },
        ..Requirements::default()
    };
    let r = adapt_from(&pool(), model(4).as_ref(), was, &now, &measured);
    assert_eq!(r.status, AdaptationStatus::Adapted);
    assert_eq!(r.goal.as_ref().unwrap().target, GoalTarget::MeetNewRequirement);
    assert_eq!(r.candidates.len(), 4);
    let d1 = r.candidates.iter().find(|c| c.depth.level() == 1).unwrap();
    assert!(!d1.gate_passed, "an untimed model cannot match the signals");
    let active = r.active.unwrap().configuration;
    assert_eq!(active.depth, ModelingDepth::DiscreteTemporal);
    assert!(active.quality_residual.unwrap() <= now.signal_tolerance);
}

#[test]
fn unmeetable_runtime_budget_is_reported_best_effort() {
    let measured = measure(&[]);
    let now = Requirements {
        quality_channel: QualityChannel::Signals,
        runtime_budget_s_per_sim_s: Some(1e-15),
        ..Requirements::default()
    };
    let r = adapt_from(&pool(), model(4).as_ref(), Requirements::default(), &now, &measured);
    assert_eq!(r.status, AdaptationStatus::GoalUnmet);
    assert!(r.candidates.iter().all(|c| !c.gate_passed));
    assert!(r.active.is_some());
    assert!(r.note.unwrap().contains("goal unmet"));
}

#[test]
fn imported_package_supplies_the_candidates() {
    let graph = semantify(&shipped_system_graph(), &shipped_translation_table()).unwrap();
    let data = shipped_data_basis();
    let models: Vec<_> = [2u8, 3, 4]
        .iter()
        .map(|d| {
            create_twin(
                &graph,
                &shipped_library(),
                &data,
                ModelingDepth::from_level(*d).unwrap(),
            )
            .unwrap()
        })
        .collect();
    let refs: Vec<_> = models.iter().collect();
    let pkg = TwinPackage::from_models(&refs, Some(&data), Provenance::new("1.0.0", &data.version)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cell-1.json");
    export_package(&pkg, &path).unwrap();

    let pool = ModelPool::new();
    let ids = import_package(&path, &pool).unwrap();
    assert_eq!(ids, ["cell-1.gripper.d2", "cell-1.gripper.d3", "cell-1.gripper.d4"]);

    let measured = measure(&[("d_leak", 0.8)]);
    let req = Requirements::default();
    let mut d2 = pool.get("cell-1.gripper.d2").unwrap();
    let (_, gap) = replay(d2.as_mut(), &measured, measured.meta.dt).unwrap();
    let active = ActiveModelConfiguration::initial(d2.as_ref(), req.clone());
    let goal = plan(&gap, &req, &active).expect("leak opens a gap");
    let candidates: Vec<String> = do_structural(&pool, &goal)
        .unwrap()
        .iter()
        .map(|m| m.metadata().model_id.clone())
        .collect();
    assert_eq!(candidates, ids);

    let r = adapt_from(&pool, d2.as_ref(), req.clone(), &req, &measured);
    let active = r.active.unwrap().configuration;
    assert_eq!(active.model_id, "cell-1.gripper.d4");
    assert!((active.parameters["d_leak"] - 0.8).abs() < 0.08);
}
