//! Design-phase analytics: KPIs per assembly, generator selection, the hose
//! diameter sweep and the tolerable-leakage boundary over part weight.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::components::{
    placement_check, required_vacuum, thresholds_for, ComponentError, GrippingAssembly, Placement,
    ProcessParams, ThresholdConfig, VacuumGenerator,
};
use crate::metadata::ModelingDepth;
use crate::models::{build_model, ModelError, ModelSettings, PlantSpec};
use crate::sim::{blow_off_time, energy_per_cycle, evacuation_time, CycleSpec, SimError, Simulation, Trace};

#[derive(Debug, Error)]
pub enum DesignError {
    #[error(transparent)]
    Component(#[from] ComponentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Knobs for the depth-4 runs behind every KPI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    pub dt: f64,
    pub settings: ModelSettings,
    pub d_leak_mm: f64,
    /// Vacuum at which the part counts as released after blow-off, mbar.
    pub release_mbar: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            settings: ModelSettings::default(),
            d_leak_mm: 0.0,
            release_mbar: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    pub generator: String,
    pub type_id: String,
    pub required_vacuum_mbar: f64,
    pub thresholds: ThresholdConfig,
    pub evacuation_time_s: Option<f64>,
    pub blow_off_time_s: Option<f64>,
    pub energy_per_cycle_j: f64,
    pub acquisition_cost_eur: f64,
    pub placement: Placement,
    pub feasible: bool,
    pub reason: Option<String>,
}

pub fn evaluate_kpis(
    asm: &GrippingAssembly,
    process: &ProcessParams,
    cycle: &CycleSpec,
) -> Result<KpiReport, DesignError> {
    evaluate_kpis_with(asm, process, cycle, &DesignOptions::default())
}

/// Thresholds for `asm` on `process` under the generator's own policy.
pub fn design_thresholds(
    asm: &GrippingAssembly,
    process: &ProcessParams,
) -> Result<(f64, ThresholdConfig), DesignError> {
    let req = required_vacuum(process, &asm.cups)?;
    let t = thresholds_for(req, &asm.generator, asm.generator.threshold_policy)?;
    Ok((req, t))
}

/// Simulates one cycle of `asm` at depth 4 and returns the trace.
pub fn design_trace(
    asm: &GrippingAssembly,
    thresholds: ThresholdConfig,
    cycle: &CycleSpec,
    opts: &DesignOptions,
) -> Result<Trace, DesignError> {
    asm.validate()?;
    cycle.validate()?;
    let mut model = build_model(
        ModelingDepth::PhysicalNonSpatial,
        &PlantSpec::from(asm),
        thresholds,
        opts.settings,
    )?;
    model.set_parameter("d_leak", opts.d_leak_mm)?;
    Ok(Simulation::new(opts.dt).run(model.as_mut(), cycle, cycle.duration())?)
}

/// True when H2, once reached, stays up until blow-off in every cycle.
fn h2_held(trace: &Trace, cycle: &CycleSpec) -> bool {
    (0..cycle.repetitions).all(|k| {
        let s = cycle.cycle_start(k);
        let mut seen = false;
        for f in trace
            .frames
            .iter()
            .skip_while(|f| f.t < s + cycle.suction_on_at)
            .take_while(|f| f.t < s + cycle.blow_off_at)
        {
            if f.part_present {
                seen = true;
            } else if seen {
                return false;
            }
        }
        seen
    })
}

pub fn evaluate_kpis_with(
    asm: &GrippingAssembly,
    process: &ProcessParams,
    cycle: &CycleSpec,
    opts: &DesignOptions,
) -> Result<KpiReport, DesignError> {
    process.validate()?;
    let (req, thresholds) = design_thresholds(asm, process)?;
    let trace = design_trace(asm, thresholds, cycle, opts)?;
    let evac = evacuation_time(&trace)?.seconds();
    let blow = blow_off_time(&trace, opts.release_mbar, true);
    let placement = placement_check(asm, process);

    let reason = match (evac, blow) {
        _ if placement == Placement::Infeasible => Some(format!(
            "generator plus part exceed the robot payload of {} kg",
            process.robot_payload_kg
        )),
        (None, _) => Some(format!("part-present threshold {} mbar never reached", thresholds.h2)),
        _ if !h2_held(&trace, cycle) => Some("vacuum cannot be held until blow-off".to_string()),
        (_, None) => Some("part not released after blow-off".to_string()),
        (Some(e), Some(b)) if e + b > process.max_cycle_time_s => Some(format!(
            "active cycle time {:.3} s exceeds {} s",
            e + b,
            process.max_cycle_time_s
        )),
        _ => None,
    };
    Ok(KpiReport {
        generator: asm.generator.name.clone(),
        type_id: asm.generator.type_id.clone(),
        required_vacuum_mbar: req,
        thresholds,
        evacuation_time_s: evac,
        blow_off_time_s: blow,
        energy_per_cycle_j: energy_per_cycle(&trace, cycle),
        acquisition_cost_eur: asm.generator.cost_eur,
        placement,
        feasible: reason.is_none(),
        reason,
    })
}

/// Lexicographic ranking: feasibility, energy class, cost, then energy.
///
/// Energies within a factor of `energy_band` of the best candidate share a
/// class, so cost decides between generators of similar consumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingSpec {
    pub energy_band: f64,
}

impl Default for RankingSpec {
    fn default() -> Self {
        Self { energy_band: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub rank: usize,
    pub energy_class: Option<u32>,
    pub report: KpiReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub ranked: Vec<RankedCandidate>,
    pub chosen: Option<String>,
}

fn infeasible_report(g: &VacuumGenerator, process: &ProcessParams, asm: &GrippingAssembly, why: String) -> KpiReport {
    KpiReport {
        generator: g.name.clone(),
        type_id: g.type_id.clone(),
        required_vacuum_mbar: required_vacuum(process, &asm.cups).unwrap_or(f64::NAN),
        thresholds: ThresholdConfig {
            h2: 0.0,
            h1: 0.0,
            hysteresis: 0.0,
        },
        evacuation_time_s: None,
        blow_off_time_s: None,
        energy_per_cycle_j: 0.0,
        acquisition_cost_eur: g.cost_eur,
        placement: placement_check(asm, process),
        feasible: false,
        reason: Some(why),
    }
}

/// Evaluate every candidate on the template's hose and cups and rank them.
pub fn select_generator(
    candidates: &[VacuumGenerator],
    template: &GrippingAssembly,
    process: &ProcessParams,
    cycle: &CycleSpec,
    ranking: &RankingSpec,
    opts: &DesignOptions,
) -> Result<Selection, DesignError> {
    if candidates.is_empty() {
        return Err(DesignError::InvalidArgument("no candidate generators".into()));
    }
    if !(ranking.energy_band > 1.0) {
        return Err(DesignError::InvalidArgument("energy band must be > 1".into()));
    }
    let reports: Vec<KpiReport> = candidates
        .par_iter()
        .map(|g| {
            let asm = GrippingAssembly {
                generator: g.clone(),
                ..template.clone()
            };
            match evaluate_kpis_with(&asm, process, cycle, opts) {
                Ok(r) => Ok(r),
                Err(DesignError::Component(e @ ComponentError::GeneratorInfeasible { .. })) => {
                    Ok(infeasible_report(g, process, &asm, e.to_string()))
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, _>>()?;

    let e_min = reports
        .iter()
        .filter(|r| r.feasible && r.energy_per_cycle_j > 0.0)
        .map(|r| r.energy_per_cycle_j)
        .fold(f64::INFINITY, f64::min);
    let class = |r: &KpiReport| -> Option<u32> {
        (r.feasible && e_min.is_finite()).then(|| {
            let ratio = (r.energy_per_cycle_j / e_min).max(1.0);
            (ratio.ln() / ranking.energy_band.ln() + 1e-12).floor() as u32
        })
    };
    let mut ranked: Vec<RankedCandidate> = reports
        .into_iter()
        .map(|r| RankedCandidate {
            rank: 0,
            energy_class: class(&r),
            report: r,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.report
            .feasible
            .cmp(&a.report.feasible)
            .then(a.energy_class.cmp(&b.energy_class))
            .then(a.report.acquisition_cost_eur.total_cmp(&b.report.acquisition_cost_eur))
            .then(a.report.energy_per_cycle_j.total_cmp(&b.report.energy_per_cycle_j))
            .then_with(|| a.report.type_id.cmp(&b.report.type_id))
    });
    for (i, r) in ranked.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    let chosen = ranked
        .first()
        .filter(|r| r.report.feasible)
        .map(|r| r.report.generator.clone());
    Ok(Selection { ranked, chosen })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub diameter_mm: f64,
    pub evacuation_time_s: Option<f64>,
    pub energy_per_cycle_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub argmin_evacuation_mm: Option<f64>,
    pub argmin_energy_mm: Option<f64>,
}

fn argmin_by(points: &[SweepPoint], key: impl Fn(&SweepPoint) -> Option<f64>) -> Option<f64> {
    points
        .iter()
        .filter_map(|p| key(p).map(|k| (p.diameter_mm, k)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
        .map(|(d, _)| d)
}

/// One KPI evaluation per hose inner diameter; thresholds stay fixed.
pub fn sweep_hose_diameter(
    template: &GrippingAssembly,
    process: &ProcessParams,
    cycle: &CycleSpec,
    diameters_mm: &[f64],
    opts: &DesignOptions,
) -> Result<SweepResult, DesignError> {
    if diameters_mm.len() < 3 || diameters_mm.iter().any(|d| !(*d > 0.0)) {
        return Err(DesignError::InvalidArgument(
            "sweep needs at least three diameters, all > 0".into(),
        ));
    }
    let (_, thresholds) = design_thresholds(template, process)?;
    let points: Vec<SweepPoint> = diameters_mm
        .par_iter()
        .map(|&d| {
            let mut asm = template.clone();
            asm.hose.inner_diameter_mm = d;
            let trace = design_trace(&asm, thresholds, cycle, opts)?;
            Ok(SweepPoint {
                diameter_mm: d,
                evacuation_time_s: evacuation_time(&trace)?.seconds(),
                energy_per_cycle_j: energy_per_cycle(&trace, cycle),
            })
        })
        .collect::<Result<_, DesignError>>()?;
    Ok(SweepResult {
        argmin_evacuation_mm: argmin_by(&points, |p| p.evacuation_time_s),
        argmin_energy_mm: argmin_by(&points, |p| Some(p.energy_per_cycle_j)),
        points,
    })
}

/// Feasibility of one (leak, weight) point with thresholds re-derived for
/// that weight.
pub fn leak_feasible(
    asm: &GrippingAssembly,
    process: &ProcessParams,
    cycle: &CycleSpec,
    d_leak_mm: f64,
    weight_kg: f64,
    opts: &DesignOptions,
) -> Result<bool, DesignError> {
    let p = process.with_mass(weight_kg);
    let o = DesignOptions {
        d_leak_mm,
        ..*opts
    };
    match evaluate_kpis_with(asm, &p, cycle, &o) {
        Ok(r) => Ok(r.feasible),
        Err(DesignError::Component(ComponentError::GeneratorInfeasible { .. })) => Ok(false),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub weight_kg: f64,
    /// Largest tolerated leak diameter on the grid (0 when none is).
    pub max_d_leak_mm: f64,
    pub feasible: bool,
}

fn check_sorted(name: &str, grid: &[f64]) -> Result<(), DesignError> {
    if grid.is_empty() || grid.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(Ordering::Greater)) {
        return Err(DesignError::InvalidArgument(format!(
            "{name} grid must be non-empty and strictly ascending"
        )));
    }
    Ok(())
}

/// For every weight, the largest feasible leak diameter on `d_grid`,
/// located by bisection over grid indices.
pub fn leakage_weight_boundary(
    asm: &GrippingAssembly,
    process: &ProcessParams,
    cycle: &CycleSpec,
    d_grid: &[f64],
    w_grid: &[f64],
    opts: &DesignOptions,
) -> Result<Vec<BoundaryPoint>, DesignError> {
    check_sorted("leak", d_grid)?;
    check_sorted("weight", w_grid)?;
    w_grid
        .par_iter()
        .map(|&w| {
            let ok = |i: usize| leak_feasible(asm, process, cycle, d_grid[i], w, opts);
            if !ok(0)? {
                return Ok(BoundaryPoint {
                    weight_kg: w,
                    max_d_leak_mm: 0.0,
                    feasible: false,
                });
            }
            // invariant: ok(lo) holds, ok(hi) fails (hi may be one past the end)
            let (mut lo, mut hi) = (0usize, d_grid.len());
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if ok(mid)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(BoundaryPoint {
                weight_kg: w,
                max_d_leak_mm: d_grid[lo],
                feasible: true,
            })
        })
        .collect()
}

/// Full feasibility matrix, `[weight][leak]`.
pub fn feasibility_grid(
    asm: &GrippingAssembly,
    process: &ProcessParams,
    cycle: &CycleSpec,
    d_grid: &[f64],
    w_grid: &[f64],
    opts: &DesignOptions,
) -> Result<Vec<Vec<bool>>, DesignError> {
    w_grid
        .par_iter()
        .map(|&w| {
            d_grid
                .iter()
                .map(|&d| leak_feasible(asm, process, cycle, d, w, opts))
                .collect()
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(sweep: &SweepResult, mut out: W) -> std::io::Result<()> {
    writeln!(out, "hose_diameter_mm,evacuation_time_s,energy_per_cycle_J")?;
    for p in &sweep.points {
        let evac = p.evacuation_time_s.map_or_else(|| "never".to_string(), |e| format!("{e:.9e}"));
        writeln!(out, "{:.9e},{evac},{:.9e}", p.diameter_mm, p.energy_per_cycle_j)?;
    }
    Ok(())
}

pub fn write_boundary_csv<W: Write>(points: &[BoundaryPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "weight_kg,max_d_leak_mm,feasible")?;
    for p in points {
        writeln!(out, "{:.9e},{:.9e},{}", p.weight_kg, p.max_d_leak_mm, u8::from(p.feasible))?;
    }
    Ok(())
}

pub fn write_selection_csv<W: Write>(sel: &Selection, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "rank,generator,feasible,placement,evacuation_time_s,blow_off_time_s,energy_per_cycle_J,cost_EUR"
    )?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.9e}"));
    for r in &sel.ranked {
        let k = &r.report;
        let placement = serde_json::to_value(k.placement).expect("placement serializes");
        writeln!(
            out,
            "{},{},{},{},{},{},{:.9e},{}",
            r.rank,
            k.generator,
            u8::from(k.feasible),
            placement.as_str().unwrap_or_default(),
            opt(k.evacuation_time_s),
            opt(k.blow_off_time_s),
            k.energy_per_cycle_j,
            k.acquisition_cost_eur
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::Catalog;

    fn asm(name: &str) -> GrippingAssembly {
        GrippingAssembly::with_generator(Catalog::default_catalog().get(name).unwrap().clone())
    }

    fn coarse() -> DesignOptions {
        DesignOptions {
            dt: 1e-3,
            ..Default::default()
        }
    }

    #[test]
    fn ecbpmi_feasible_on_gripper() {
        let r = evaluate_kpis(&asm("ECBPMi"), &ProcessParams::table1(), &CycleSpec::table1()).unwrap();
        assert!(r.feasible, "{r:?}");
        assert_eq!(r.placement, Placement::OnGripper);
        assert!((r.evacuation_time_s.unwrap() - 0.2166).abs() < 2e-3);
        assert!(r.energy_per_cycle_j > 0.0);
    }

    #[test]
    fn weak_generator_is_infeasible_with_reason() {
        let mut g = Catalog::default_catalog().get("ECBPMi").unwrap().clone();
        g.dp_max_mbar = 300.0;
        let a = GrippingAssembly::with_generator(g.clone());
        let err = evaluate_kpis(&a, &ProcessParams::table1(), &CycleSpec::table1());
        assert!(matches!(
            err,
            Err(DesignError::Component(ComponentError::GeneratorInfeasible { .. }))
        ));
        let sel = select_generator(
            &[g],
            &a,
            &ProcessParams::table1(),
            &CycleSpec::table1(),
            &RankingSpec::default(),
            &coarse(),
        )
        .unwrap();
        assert!(sel.chosen.is_none());
        assert!(sel.ranked[0].report.reason.as_deref().unwrap().contains("cannot reach"));
    }

    #[test]
    fn cheaper_twin_wins() {
        let g = Catalog::default_catalog().get("ECBPMi").unwrap().clone();
        let mut cheap = g.clone();
        cheap.name = "cheap".into();
        cheap.type_id = "z.cheap".into();
        cheap.cost_eur -= 100.0;
        let sel = select_generator(
            &[g.clone(), cheap],
            &asm("ECBPMi"),
            &ProcessParams::table1(),
            &CycleSpec::table1(),
            &RankingSpec::default(),
            &coarse(),
        )
        .unwrap();
        assert_eq!(sel.chosen.as_deref(), Some("cheap"));
        let single = select_generator(
            &[g],
            &asm("ECBPMi"),
            &ProcessParams::table1(),
            &CycleSpec::table1(),
            &RankingSpec::default(),
            &coarse(),
        )
        .unwrap();
        assert_eq!(single.chosen.as_deref(), Some("ECBPMi"));
    }

    #[test]
    fn repeated_diameter_gives_flat_curve() {
        let s = sweep_hose_diameter(
            &asm("ECBPI"),
            &ProcessParams::table1(),
            &CycleSpec::table1(),
            &[4.0, 4.0, 4.0],
            &coarse(),
        )
        .unwrap();
        assert!(s.points.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(s.argmin_evacuation_mm, Some(4.0));
        assert!(sweep_hose_diameter(&asm("ECBPI"), &ProcessParams::table1(), &CycleSpec::table1(), &[1.0, 2.0], &coarse()).is_err());
    }

    #[test]
    fn csv_writers_emit_headers() {
        let pts = vec![BoundaryPoint {
            weight_kg: 0.1,
            max_d_leak_mm: 0.2,
            feasible: true,
        }];
        let mut buf = Vec::new();
        write_boundary_csv(&pts, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("weight_kg,max_d_leak_mm,feasible\n"));
        assert!(s.ends_with(",1\n"));
    }
}
