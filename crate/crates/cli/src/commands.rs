use twinforge::adapt::{run_pdca, ActiveModelConfiguration, ActiveSlot, AdaptationStatus};
use twinforge::components::{Catalog, GrippingAssembly, ProcessParams, ThresholdConfig};
use twinforge::design::{
    design_thresholds, feasibility_grid, leakage_weight_boundary, select_generator, sweep_hose_diameter,
    write_boundary_csv, write_selection_csv, write_sweep_csv, DesignOptions,
};
use twinforge::emulator::{self, calibrate_ramp, permanent_losses, EmulateOptions};
use twinforge::metadata::ModelingDepth;
use twinforge::models::{build_model, BehaviorModel, ModelSettings, PlantSpec};
use twinforge::pool::ModelPool;
use twinforge::registry::{
    create_twin, import_package, semantify, shipped_data_basis, shipped_library, shipped_system_graph,
    shipped_translation_table, DataBasis, ModelLibrary, Provenance, SystemGraph, TranslationTable,
    TwinPackage,
};
use twinforge::sim::{benchmark, controller_check, CycleSpec, Simulation, Trace};

use crate::config::{self, *};
use crate::manifest::Recorder;
use crate::{BenchArgs, CliError, GlobalOpts};

fn depth(level: u8) -> Result<ModelingDepth, CliError> {
    ModelingDepth::from_level(level).ok_or_else(|| CliError::Usage(format!("modeling depth must be 1..=5, got {level}")))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(CliError::domain)?;
    Ok(buf)
}

fn save_trace(run: &mut Recorder, name: &str, trace: &Trace) -> Result<(), CliError> {
    trace.save(&run.path(name)).map_err(CliError::domain)?;
    run.produced(name);
    run.produced(&format!("{name}.meta.json"));
    Ok(())
}

fn design_options(given: Option<DesignOptions>, g: &GlobalOpts) -> DesignOptions {
    let mut o = given.unwrap_or_default();
    if let Some(dt) = g.dt {
        o.dt = dt;
    }
    o
}

/// Thresholds from the config, or derived from the handling task.
fn thresholds(
    given: Option<ThresholdConfig>,
    asm: &GrippingAssembly,
    process: &ProcessParams,
) -> Result<ThresholdConfig, CliError> {
    match given {
        Some(t) => t.validate().map(|()| t).map_err(|e| CliError::Usage(e.to_string())),
        None => Ok(design_thresholds(asm, process).map_err(CliError::domain)?.1),
    }
}

fn builtin_models(
    asm: &GrippingAssembly,
    t: ThresholdConfig,
    settings: ModelSettings,
    depths: &[u8],
) -> Result<Vec<Box<dyn BehaviorModel>>, CliError> {
    let plant = PlantSpec::from(asm);
    depths
        .iter()
        .map(|d| build_model(depth(*d)?, &plant, t, settings).map_err(CliError::domain))
        .collect()
}

pub fn create(g: &GlobalOpts, run: &mut Recorder) -> Result<(), CliError> {
    let (cfg, base): (CreateConfig, _) = config::load(g, run)?;
    let usage = |e: twinforge::registry::RegistryError| CliError::Usage(e.to_string());
    let graph = match &cfg.graph {
        Some(p) => SystemGraph::from_json_file(&config::input(&base, p, run)?).map_err(usage)?,
        None => shipped_system_graph(),
    };
    let table = match &cfg.translation_table {
        Some(p) => TranslationTable::from_json_file(&config::input(&base, p, run)?).map_err(usage)?,
        None => shipped_translation_table(),
    };
    let library = match &cfg.library {
        Some(p) => ModelLibrary::from_json_file(&config::input(&base, p, run)?).map_err(usage)?,
        None => shipped_library(),
    };
    let data = match &cfg.data_basis {
        Some(p) => DataBasis::from_json_file(&config::input(&base, p, run)?).map_err(usage)?,
        None => shipped_data_basis(),
    };

    let graph = semantify(&graph, &table).map_err(CliError::domain)?;
    let depths: Vec<ModelingDepth> = if cfg.depths.is_empty() {
        ModelingDepth::ALL
            .into_iter()
            .filter(|d| graph.nodes.iter().all(|n| n.type_id.as_deref().is_some_and(|t| library.template(t, *d).is_some())))
            .collect()
    } else {
        cfg.depths.iter().map(|d| depth(*d)).collect::<Result<_, _>>()?
    };
    let models = depths
        .iter()
        .map(|d| create_twin(&graph, &library, &data, *d))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::domain)?;
    let refs: Vec<_> = models.iter().collect();
    let pkg = TwinPackage::from_models(&refs, Some(&data), Provenance::new(&library.library_version, &data.version))
        .map_err(CliError::domain)?;
    log::info!("packaged {} at depths {:?}", pkg.twin_id, depths);
    run.write("twin_package.json", (pkg.to_json_string() + "\n").as_bytes())
}

pub fn design(g: &GlobalOpts, run: &mut Recorder) -> Result<(), CliError> {
    let (cfg, base): (DesignConfig, _) = config::load(g, run)?;
    let process = config::process(&base, &cfg.process, run)?;
    let catalog = match &cfg.catalog {
        Some(p) => Catalog::from_json_file(&config::input(&base, p, run)?).map_err(|e| CliError::Usage(e.to_string()))?,
        None => Catalog::default_catalog(),
    };
    let template = cfg.assembly.unwrap_or_else(GrippingAssembly::reference);
    let opts = design_options(cfg.options, g);
    run.resolved(None, Some(opts.dt));
    let sel = select_generator(
        &catalog.generators,
        &template,
        &process,
        &cfg.cycle.unwrap_or_default(),
        &cfg.ranking.unwrap_or_default(),
        &opts,
    )
    .map_err(CliError::domain)?;
    run.write("selection.csv", &csv_bytes(|b| write_selection_csv(&sel, b))?)?;
    run.write_json("selection.json", &sel)?;
    match &sel.chosen {
        Some(c) => log::info!("chosen generator: {c}"),
        None => return Err(CliError::Domain("no feasible generator in the catalog".into())),
    }
    Ok(())
}

fn default_diameters() -> Vec<f64> {
    (2..=16).map(|i| f64::from(i) * 0.5).collect()
}

pub fn sweep(g: &GlobalOpts, run: &mut Recorder) -> Result<(), CliError> {
    let (cfg, base): (SweepConfig, _) = config::load(g, run)?;
    let process = config::process(&base, &cfg.process, run)?;
    let opts = design_options(cfg.options, g);
    run.resolved(None, Some(opts.dt));
    let result = sweep_hose_diameter(
        &cfg.assembly.unwrap_or_else(GrippingAssembly::reference),
        &process,
        &cfg.cycle.unwrap_or_default(),
        &cfg.diameters_mm.unwrap_or_else(default_diameters),
        &opts,
    )
    .map_err(CliError::domain)?;
    run.write("sweep.csv", &csv_bytes(|b| write_sweep_csv(&result, b))?)?;
    run.write_json("sweep.json", &result)
}

pub fn validate(g: &GlobalOpts, run: &mut Recorder) -> Result<(), CliError> {
    let (cfg, base): (ValidateConfig, _) = config::load(g, run)?;
    let process = config::process(&base, &cfg.process, run)?;
    let asm = cfg.assembly.unwrap_or_else(GrippingAssembly::reference);
    let cycle = cfg.cycle.unwrap_or_default();
    let opts = design_options(cfg.options, g);
    run.resolved(None, Some(opts.dt));
    let d_grid = cfg
        .leak_grid_mm
        .unwrap_or_else(|| (1..=10).map(|i| f64::from(i) * 0.06).collect());
    let w_grid = cfg
        .weight_grid_kg
        .unwrap_or_else(|| (1..=10).map(|i| f64::from(i) * 0.02).collect());
    let points = leakage_weight_boundary(&asm, &process, &cycle, &d_grid, &w_grid, &opts).map_err(CliError::domain)?;
    run.write("boundary.csv", &csv_bytes(|b| write_boundary_csv(&points, b))?)?;
    if cfg.full_grid {
        let grid = feasibility_grid(&asm, &process, &cycle, &d_grid, &w_grid, &opts).map_err(CliError::domain)?;
        let mut text = String::from("weight_kg,d_leak_mm,feasible\n");
        for (w, row) in w_grid.iter().zip(&grid) {
            for (d, ok) in d_grid.iter().zip(row) {
                text.push_str(&format!("{w:.9e},{d:.9e},{}\n", u8::from(*ok)));
            }
        }
        run.write("feasibility.csv", text.as_bytes())?;
    }
    Ok(())
}

pub fn simulate(g: &GlobalOpts, run: &mut Recorder) -> Result<(), CliError> {
    let (cfg, base): (SimulateConfig, _) = config::load(g, run)?;
    let dt = g.dt.unwrap_or(cfg.dt);
    run.resolved(None, Some(dt));
    let models: Vec<Box<dyn BehaviorModel>> = match &cfg.package {
        Some(p) => {
            let path = config::input(&base, p, run)?;
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let pkg = TwinPackage::from_json_str(&text).map_err(CliError::domain)?;
            let all = pkg.models().map_err(CliError::domain)?;
            all.into_iter()
                .filter(|m| cfg.depths.contains(&m.depth().level()))
                .map(|m| Box::new(m) as Box<dyn BehaviorModel>)
                .collect()
        }
        None => {
            let process = config::process(&base, &cfg.process, run)?;
            let asm = cfg.assembly.clone().unwrap_or_else(GrippingAssembly::reference);
            let t = thresholds(cfg.thresholds, &asm, &process)?;
            builtin_models(&asm, t, cfg.settings.unwrap_or_default(), &cfg.depths)?
        }
    };
    if models.is_empty() {
        return Err(CliError::Usage("no model to simulate at the requested depths".into()));
    }
    let cycle = cfg.cycle.unwrap_or_default().with_repetitions(cfg.cycles.max(1));
    let sim = Simulation::new(dt).decimation(cfg.decimation.max(1));
    let mut reports = serde_json::Map::new();
    for mut m in models {
        if cfg.d_leak_mm > 0.0 {
            if m.parameters().contains_key("d_leak") {
                m.set_parameter("d_leak", cfg.d_leak_mm).map_err(CliError::domain)?;
            } else {
                log::warn!("{} has no leak parameter; simulating it leak-free", m.metadata().model_id);
            }
        }
        let trace = sim.run(m.as_mut(), &cycle, cycle.duration()).map_err(CliError::domain)?;
        let level = m.depth().level();
        save_trace(run, &format!("trace_d{level}.csv"), &trace)?;
        let report = controller_check(&trace, &cycle, &cfg.controller);
        reports.insert(
            m.metadata().model_id.clone(),
            serde_json::to_value(report).map_err(CliError::domain)?,
        );
    }
    run.write_json("controller.json", &reports)
}

pub fn emulate(g: &GlobalOpts, run: &mut Recorder) -> Result<(), CliError> {
    let (mut cfg, _): (EmulateConfig, _) = config::load(g, run)?;
    if let Some(s) = g.seed {
        cfg.plant.seed = s;
    }
    let dt = g.dt.unwrap_or(cfg.dt);
    run.resolved(Some(cfg.plant.seed), Some(dt));
    let cycle = cfg.cycle.unwrap_or_default().with_repetitions(cfg.cycles.max(1));
    let horizon = cycle.duration();
    if let Some(r) = cfg.ramp {
        let schedule =
            calibrate_ramp(&cfg.plant, &cycle, horizon, r.h1_frac, r.h2_frac, dt).map_err(CliError::domain)?;
        log::info!("calibrated ramp: d0 {} mm, {} mm/s", schedule.d0_mm, schedule.k_mm_per_s);
        cfg.plant.faults = Some(schedule);
    }
    let opts = EmulateOptions {
        dt,
        decimation: cfg.decimation.max(1),
    };
    let trace = emulator::emulate(&cfg.plant, &cycle, horizon, &opts).map_err(CliError::domain)?;
    save_trace(run, "measured.csv", &trace)?;
    let summary = serde_json::json!({
        "faults": cfg.plant.faults,
        "losses": permanent_losses(&trace, &cycle),
        "controller": controller_check(&trace, &cycle, &cfg.controller),
    });
    run.write_json("emulation.json", &summary)
}

pub fn adapt(g: &GlobalOpts, run: &mut Recorder) -> Result<(), CliError> {
    let (mut cfg, base): (AdaptConfig, _) = config::load(g, run)?;
    if let Some(s) = g.seed {
        cfg.plant.seed = s;
    }
    let dt = g.dt.unwrap_or(cfg.dt);
    run.resolved(Some(cfg.plant.seed), Some(dt));
    cfg.limits.threads = g.threads;

    let pool = ModelPool::new();
    if cfg.builtin_models {
        let t = cfg.plant.thresholds().map_err(CliError::domain)?;
        for m in builtin_models(&cfg.plant.assembly, t, cfg.plant.settings(), &[1, 2, 3, 4])? {
            pool.insert(m, "built-in");
        }
    }
    for p in &cfg.packages {
        let path = config::input(&base, p, run)?;
        let ids = import_package(&path, &pool).map_err(CliError::domain)?;
        log::info!("imported {ids:?} from {}", path.display());
    }
    let initial_id = match &cfg.initial_model {
        Some(id) => id.clone(),
        None => {
            let d = depth(cfg.initial_depth)?;
            pool.model_ids()
                .into_iter()
                .find(|id| pool.get(id).is_some_and(|m| m.depth() == d))
                .ok_or_else(|| CliError::Usage(format!("no pool model at depth {}", d.level())))?
        }
    };
    let initial = pool
        .get(&initial_id)
        .ok_or_else(|| CliError::Usage(format!("model `{initial_id}` is not in the pool")))?;

    let cycle: CycleSpec = cfg.cycle.unwrap_or_default().with_repetitions(cfg.cycles.max(1));
    let measured = emulator::emulate(
        &cfg.plant,
        &cycle,
        cycle.duration(),
        &EmulateOptions { dt, decimation: 1 },
    )
    .map_err(CliError::domain)?;
    save_trace(run, "measured.csv", &measured)?;

    let slot = ActiveSlot::new(ActiveModelConfiguration::initial(initial.as_ref(), cfg.requirements.clone()));
    let result = run_pdca(&pool, &measured, &cfg.requirements, &cfg.limits, &slot).map_err(CliError::domain)?;
    run.write("adapt_result.json", (result.canonical_json() + "\n").as_bytes())?;
    match result.status {
        AdaptationStatus::NoCandidate => Err(CliError::Domain(format!(
            "no candidate model: {}",
            result.note.unwrap_or_default()
        ))),
        _ => {
            if let Some(a) = &result.active {
                log::info!("active model {} (depth {})", a.configuration.model_id, a.configuration.depth.level());
            }
            Ok(())
        }
    }
}

pub fn bench(g: &GlobalOpts, args: &BenchArgs, run: &mut Recorder) -> Result<(), CliError> {
    let (cfg, _): (BenchConfig, _) = config::load(g, run)?;
    if args.runs == 0 || !(args.horizon > 0.0) {
        return Err(CliError::Usage("--runs must be >= 1 and --horizon > 0".into()));
    }
    let dt = g.dt.unwrap_or(cfg.dt);
    run.resolved(None, Some(dt));
    let asm = cfg.assembly.unwrap_or_else(GrippingAssembly::reference);
    let t = thresholds(cfg.thresholds, &asm, &ProcessParams::table1())?;
    let models = builtin_models(&asm, t, ModelSettings::default(), &args.depths)?;
    let cycle = CycleSpec::repeated_for(args.horizon);
    let rows = benchmark(&models, &cycle, args.horizon, dt, args.runs).map_err(CliError::domain)?;
    let mut text = String::from("depth,model_id,runs,median_s,mean_s,min_s,effort\n");
    for r in &rows {
        text.push_str(&format!(
            "{},{},{},{:.9e},{:.9e},{:.9e},{}\n",
            r.depth, r.model_id, r.runs, r.median_s, r.mean_s, r.min_s, r.effort
        ));
    }
    run.write("bench.csv", text.as_bytes())
}
