//! Meta-information attached to every behavior model in the pool.
//!
//! A model is described along three axes: modeling depth (fidelity),
//! modeling width (disciplines covered) and modeling range (structural
//! scope). Validity and runtime annotations are used by the adaptation
//! engine to pre-filter the pool before any simulation is run.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Fidelity level of a behavior model.
///
/// Ordered from pure set/reset logic up to spatially resolved physics. No
/// spatial (level 5) model ships with this crate, but the level is still
/// representable so that pool queries can name it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ModelingDepth {
    Discrete = 1,
    DiscreteTemporal = 2,
    ContinuousSimplified = 3,
    PhysicalNonSpatial = 4,
    PhysicalSpatial = 5,
}

impl ModelingDepth {
    pub const ALL: [ModelingDepth; 5] = [
        ModelingDepth::Discrete,
        ModelingDepth::DiscreteTemporal,
        ModelingDepth::ContinuousSimplified,
        ModelingDepth::PhysicalNonSpatial,
        ModelingDepth::PhysicalSpatial,
    ];

    pub fn level(self) -> u8 {
        self as u8
    }

    pub fn from_level(level: u8) -> Option<Self> {
        Self::ALL.get(usize::from(level).wrapping_sub(1)).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelingDepth::Discrete => "discrete",
            ModelingDepth::DiscreteTemporal => "discrete-temporal",
            ModelingDepth::ContinuousSimplified => "continuous-simplified-physical",
            ModelingDepth::PhysicalNonSpatial => "physical-non-spatial",
            ModelingDepth::PhysicalSpatial => "physical-spatial",
        }
    }
}

impl TryFrom<u8> for ModelingDepth {
    type Error = String;

    fn try_from(level: u8) -> Result<Self, Self::Error> {
        Self::from_level(level).ok_or_else(|| format!("modeling depth must be 1..=5, got {level}"))
    }
}

impl From<ModelingDepth> for u8 {
    fn from(d: ModelingDepth) -> u8 {
        d.level()
    }
}

impl fmt::Display for ModelingDepth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{} ({})", self.level(), self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discipline {
    Mechanical,
    Electrical,
    Software,
    Fluidic,
    Thermal,
    Magnetic,
    Other,
}

/// Structural scope of a model. The first four variants form the ordered
/// library substructure (principle, building block, component, system).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelingRange {
    BasicPhysicalPrinciple,
    BuildingBlock,
    Component,
    System,
    FieldDevice,
    ControlDevice,
    Station,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BehaviorKind {
    Ideal,
    ErrorProne,
}

/// A parameter the adaptation engine may tune, with its admissible range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeParameter {
    pub name: String,
    pub unit: String,
    pub lower: f64,
    pub upper: f64,
}

impl FreeParameter {
    pub fn new(name: impl Into<String>, unit: impl Into<String>, lower: f64, upper: f64) -> Self {
        let p = Self {
            name: name.into(),
            unit: unit.into(),
            lower,
            upper,
        };
        debug_assert!(p.lower <= p.upper, "free parameter {} has lower > upper", p.name);
        p
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.lower, self.upper)
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.lower && value <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub model_id: String,
    pub depth: ModelingDepth,
    pub disciplines: BTreeSet<Discipline>,
    pub range: ModelingRange,
    pub behavior: BehaviorKind,
    #[serde(default)]
    pub free_parameters: Vec<FreeParameter>,
    /// Free-text validity note; no numeric scale is implied.
    #[serde(default)]
    pub validity: String,
    /// Static cost hint, 1 is cheapest.
    pub runtime_class: u8,
}

impl ModelMetadata {
    pub fn free_parameter(&self, name: &str) -> Option<&FreeParameter> {
        self.free_parameters.iter().find(|p| p.name == name)
    }

    /// Checks the structural invariants (bounds ordered, runtime class >= 1,
    /// error-prone models expose at least one free parameter).
    pub fn validate(&self) -> Result<(), String> {
        for p in &self.free_parameters {
            if !(p.lower <= p.upper) {
                return Err(format!("{}: bounds of `{}` are not ordered", self.model_id, p.name));
            }
        }
        if self.runtime_class == 0 {
            return Err(format!("{}: runtime_class must be >= 1", self.model_id));
        }
        if self.behavior == BehaviorKind::ErrorProne && self.free_parameters.is_empty() {
            return Err(format!(
                "{}: error-prone model declares no fault parameter",
                self.model_id
            ));
        }
        Ok(())
    }
}

/// Predicate over [`ModelMetadata`]; unset fields are unconstrained.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetadataQuery {
    /// Inclusive depth interval.
    pub depth: Option<(ModelingDepth, ModelingDepth)>,
    /// Disciplines the model must cover (subset check).
    pub disciplines: Option<BTreeSet<Discipline>>,
    pub behavior: Option<BehaviorKind>,
    pub max_runtime_class: Option<u8>,
}

impl MetadataQuery {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn with_depth(mut self, lo: ModelingDepth, hi: ModelingDepth) -> Self {
        self.depth = Some((lo, hi));
        self
    }

    pub fn with_behavior(mut self, behavior: BehaviorKind) -> Self {
        self.behavior = Some(behavior);
        self
    }

    pub fn with_max_runtime_class(mut self, class: u8) -> Self {
        self.max_runtime_class = Some(class);
        self
    }

    pub fn with_disciplines(mut self, d: impl IntoIterator<Item = Discipline>) -> Self {
        self.disciplines = Some(d.into_iter().collect());
        self
    }
}

pub fn matches(query: &MetadataQuery, md: &ModelMetadata) -> bool {
    if let Some((lo, hi)) = query.depth {
        if md.depth < lo || md.depth > hi {
            return false;
        }
    }
    if let Some(required) = &query.disciplines {
        if !required.is_subset(&md.disciplines) {
            return false;
        }
    }
    if let Some(b) = query.behavior {
        if md.behavior != b {
            return false;
        }
    }
    if let Some(max) = query.max_runtime_class {
        if md.runtime_class > max {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn md(depth: ModelingDepth, behavior: BehaviorKind, class: u8) -> ModelMetadata {
        ModelMetadata {
            model_id: format!("m{}", depth.level()),
            depth,
            disciplines: [Discipline::Fluidic].into_iter().collect(),
            range: ModelingRange::System,
            behavior,
            free_parameters: vec![FreeParameter::new("d_leak", "mm", 0.0, 2.0)],
            validity: String::new(),
            runtime_class: class,
        }
    }

    #[test]
    fn empty_query_matches_everything() {
        for d in ModelingDepth::ALL {
            assert!(matches(&MetadataQuery::any(), &md(d, BehaviorKind::Ideal, 1)));
        }
    }

    #[test]
    fn depth_interval_excludes_outside() {
        let q = MetadataQuery::any()
            .with_depth(ModelingDepth::DiscreteTemporal, ModelingDepth::PhysicalNonSpatial);
        assert!(!matches(&q, &md(ModelingDepth::Discrete, BehaviorKind::Ideal, 1)));
        assert!(matches(&q, &md(ModelingDepth::ContinuousSimplified, BehaviorKind::Ideal, 3)));
    }

    #[test]
    fn depth_levels_roundtrip_and_order() {
        for w in ModelingDepth::ALL.windows(2) {
            assert!(w[0] < w[1]);
        }
        for l in 1..=5u8 {
            assert_eq!(ModelingDepth::from_level(l).unwrap().level(), l);
        }
        assert!(ModelingDepth::from_level(0).is_none());
        assert!(ModelingDepth::from_level(6).is_none());
        let json = serde_json::to_string(&ModelingDepth::PhysicalNonSpatial).unwrap();
        assert_eq!(json, "4");
        assert!(serde_json::from_str::<ModelingDepth>("9").is_err());
    }

    #[test]
    fn error_prone_without_parameters_is_invalid() {
        let mut m = md(ModelingDepth::PhysicalNonSpatial, BehaviorKind::ErrorProne, 4);
        assert!(m.validate().is_ok());
        m.free_parameters.clear();
        assert!(m.validate().is_err());
    }

    fn arb_depth() -> impl Strategy<Value = ModelingDepth> {
        (1u8..=5).prop_map(|l| ModelingDepth::from_level(l).unwrap())
    }

    fn arb_query() -> impl Strategy<Value = MetadataQuery> {
        (
            proptest::option::of((arb_depth(), arb_depth())),
            proptest::option::of(any::<bool>()),
            proptest::option::of(1u8..6),
            proptest::option::of(any::<bool>()),
        )
            .prop_map(|(depth, behavior, class, elec)| MetadataQuery {
                depth: depth.map(|(a, b)| (a.min(b), a.max(b))),
                behavior: behavior.map(|e| if e { BehaviorKind::ErrorProne } else { BehaviorKind::Ideal }),
                max_runtime_class: class,
                disciplines: elec.map(|e| {
                    let mut s = BTreeSet::from([Discipline::Fluidic]);
                    if e {
                        s.insert(Discipline::Electrical);
                    }
                    s
                }),
            })
    }

    proptest! {
        #[test]
        fn relaxing_a_constraint_never_flips_true_to_false(
            q in arb_query(),
            d in arb_depth(),
            ep in any::<bool>(),
            class in 1u8..6,
            which in 0usize..4,
        ) {
            let behavior = if ep { BehaviorKind::ErrorProne } else { BehaviorKind::Ideal };
            let m = md(d, behavior, class);
            if matches(&q, &m) {
                let mut relaxed = q.clone();
                match which {
                    0 => relaxed.depth = relaxed.depth.map(|_| (ModelingDepth::Discrete, ModelingDepth::PhysicalSpatial)),
                    1 => relaxed.behavior = None,
                    2 => relaxed.max_runtime_class = relaxed.max_runtime_class.map(|c| c.saturating_add(1)),
                    _ => relaxed.disciplines = None,
                }
                prop_assert!(matches(&relaxed, &m));
            }
        }
    }
}
