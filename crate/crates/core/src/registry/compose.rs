use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::data::{AssetData, ComponentKind, DataBasis, TypeRecord};
use super::graph::{ConnectionKind, Edge, PortRef, SystemGraph};
use super::library::{ModelLibrary, PortSpec};
use super::RegistryError;
use crate::components::{Hose, ProcessParams, ThresholdConfig};
use crate::design::design_thresholds;
use crate::metadata::{ModelMetadata, ModelingDepth};
use crate::models::{
    build_model, BehaviorModel, Inputs, Layout, ModelError, ModelSettings, OutputEvent, Outputs,
    ParamMap, PlantSpec,
};

/// One placed component of a composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submodel {
    pub node_id: String,
    pub type_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    pub ports: Vec<PortSpec>,
    pub parameters: TypeRecord,
}

/// How the pneumatic side is wired, resolved to node ids.
#[derive(Debug, Clone, PartialEq)]
enum Topology {
    Gripper {
        hose: Option<String>,
        cups: String,
    },
    Tank(String),
    Blind(f64),
}

/// Everything that determines the model, without the model itself.
#[derive(Debug, Clone, PartialEq)]
struct Structure {
    name: String,
    depth: ModelingDepth,
    generator: String,
    topology: Topology,
    submodels: BTreeMap<String, Submodel>,
    connections: Vec<Edge>,
    explicit_thresholds: Option<ThresholdConfig>,
    settings: ModelSettings,
    /// Behavior-model parameters that differ from their built values.
    overrides: ParamMap,
}

/// The behavior model built from a [`Structure`].
#[derive(Debug, Clone)]
struct Realized {
    thresholds: ThresholdConfig,
    /// Parameters right after building, before overrides.
    base: ParamMap,
    metadata: ModelMetadata,
    inner: Box<dyn BehaviorModel>,
}

/// A gripping system model assembled from a system graph. It behaves like
/// the model `build_model` produces for the same plant, and additionally
/// exposes each submodel's data as `node.parameter`.
///
/// Plain parameter names go to the behavior model underneath; they survive
/// a change of submodel data.
#[derive(Debug, Clone)]
pub struct ComposedModel {
    s: Structure,
    r: Realized,
}

const THRESHOLD_PARAMS: [&str; 3] = ["h2", "h1", "hysteresis"];

impl Structure {
    fn plant(&self) -> PlantSpec {
        let record = |id: &str| &self.submodels[id].parameters;
        let TypeRecord::Generator(generator) = record(&self.generator) else {
            unreachable!("topology guarantees a generator")
        };
        let layout = match &self.topology {
            Topology::Gripper { hose, cups } => {
                let hose = match hose.as_deref().map(record) {
                    Some(TypeRecord::Hose(h)) => h.clone(),
                    _ => Hose {
                        length_mm: 0.0,
                        inner_diameter_mm: 1.0,
                    },
                };
                let TypeRecord::Cups(cups) = record(cups) else {
                    unreachable!("topology guarantees a cup set")
                };
                Layout::Gripper {
                    hose,
                    cups: cups.clone(),
                }
            }
            Topology::Tank(id) => match record(id) {
                TypeRecord::Tank { volume_cm3 } => Layout::Tank {
                    volume_cm3: *volume_cm3,
                },
                _ => unreachable!("topology guarantees a tank"),
            },
            Topology::Blind(v) => Layout::Tank { volume_cm3: *v },
        };
        PlantSpec {
            generator: generator.clone(),
            layout,
        }
    }

    fn thresholds(&self, plant: &PlantSpec) -> Result<ThresholdConfig, RegistryError> {
        if let Some(t) = self.explicit_thresholds {
            return Ok(t);
        }
        let Some(asm) = plant.as_assembly() else {
            return Err(RegistryError::Graph(format!(
                "`{}` has no cup set to derive thresholds from; state them in the graph",
                self.name
            )));
        };
        design_thresholds(&asm, &ProcessParams::table1())
            .map(|(_, t)| t)
            .map_err(|e| RegistryError::Data(format!("cannot derive thresholds: {e}")))
    }

    fn realize(&self) -> Result<Realized, RegistryError> {
        let plant = self.plant();
        let thresholds = self.thresholds(&plant)?;
        let mut inner = build_model(self.depth, &plant, thresholds, self.settings)?;
        let base = inner.parameters();
        for (k, v) in &self.overrides {
            inner.set_parameter(k, *v)?;
        }
        let mut metadata = inner.metadata().clone();
        metadata.model_id = format!("{}.d{}", self.name, self.depth.level());
        Ok(Realized {
            thresholds,
            base,
            metadata,
            inner,
        })
    }

    fn node_mut(&mut self, node: &str) -> Result<&mut Submodel, RegistryError> {
        self.submodels
            .get_mut(node)
            .ok_or_else(|| RegistryError::UnknownAsset(format!("node `{node}`")))
    }
}

impl ComposedModel {
    /// Assemble from already-parameterized parts, e.g. out of a package.
    pub fn from_parts(
        name: &str,
        depth: ModelingDepth,
        submodels: Vec<Submodel>,
        connections: Vec<Edge>,
        thresholds: Option<ThresholdConfig>,
        settings: ModelSettings,
        blind_volume_cm3: Option<f64>,
    ) -> Result<Self, RegistryError> {
        let mut by_id = BTreeMap::new();
        for s in submodels {
            let id = s.node_id.clone();
            if by_id.insert(id.clone(), s).is_some() {
                return Err(RegistryError::Graph(format!("duplicate submodel `{id}`")));
            }
        }
        let (generator, topology) = resolve_topology(&by_id, &connections, blind_volume_cm3)?;
        Self::new(Structure {
            name: name.to_string(),
            depth,
            generator,
            topology,
            submodels: by_id,
            connections,
            explicit_thresholds: thresholds,
            settings,
            overrides: ParamMap::new(),
        })
    }

    fn new(s: Structure) -> Result<Self, RegistryError> {
        let r = s.realize()?;
        Ok(Self { s, r })
    }

    /// Apply a structural change; on error the model is left as it was.
    fn restructure(
        &mut self,
        change: impl FnOnce(&mut Structure) -> Result<(), RegistryError>,
    ) -> Result<(), RegistryError> {
        let mut s = self.s.clone();
        change(&mut s)?;
        if s != self.s {
            *self = Self::new(s)?;
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.s.name
    }

    pub fn submodels(&self) -> impl Iterator<Item = &Submodel> {
        self.s.submodels.values()
    }

    pub fn connections(&self) -> &[Edge] {
        &self.s.connections
    }

    pub fn settings(&self) -> ModelSettings {
        self.s.settings
    }

    pub fn thresholds(&self) -> ThresholdConfig {
        self.r.thresholds
    }

    /// Thresholds fixed by the graph or by parameter changes, as opposed to
    /// derived from the reference handling task.
    pub fn explicit_thresholds(&self) -> Option<ThresholdConfig> {
        self.s.explicit_thresholds
    }

    /// Behavior-model parameters that differ from their freshly built
    /// values.
    pub fn overrides(&self) -> &ParamMap {
        &self.s.overrides
    }

    pub fn blind_volume_cm3(&self) -> Option<f64> {
        match self.s.topology {
            Topology::Blind(v) => Some(v),
            _ => None,
        }
    }

    /// The asset the model stands for: its generator.
    pub fn asset(&self) -> &Submodel {
        &self.s.submodels[&self.s.generator]
    }

    pub fn plant(&self) -> PlantSpec {
        self.s.plant()
    }

    /// Replace a submodel's data wholesale (same component kind).
    pub fn set_submodel_data(
        &mut self,
        node: &str,
        record: TypeRecord,
        instance_id: Option<String>,
    ) -> Result<(), RegistryError> {
        self.restructure(|s| {
            let sub = s.node_mut(node)?;
            if sub.parameters.kind() != record.kind() {
                return Err(RegistryError::Data(format!(
                    "node `{node}` is a {} and cannot take {} data",
                    sub.parameters.kind().name(),
                    record.kind().name()
                )));
            }
            sub.parameters = record;
            sub.instance_id = instance_id;
            Ok(())
        })
    }

    fn try_set(&mut self, name: &str, value: f64) -> Result<(), RegistryError> {
        if let Some((node, param)) = name.split_once('.') {
            return self.restructure(|s| s.node_mut(node)?.parameters.set_param(param, value));
        }
        if THRESHOLD_PARAMS.contains(&name) {
            let mut t = self.r.thresholds;
            crate::models::set_threshold(&mut t, name, value).expect("threshold name")?;
            if t == self.r.thresholds {
                return Ok(());
            }
            return self.restructure(|s| {
                s.explicit_thresholds = Some(t);
                Ok(())
            });
        }
        self.r.inner.set_parameter(name, value)?;
        if self.r.base.get(name) == Some(&value) {
            self.s.overrides.remove(name);
        } else {
            self.s.overrides.insert(name.to_string(), value);
        }
        Ok(())
    }
}

fn resolve_topology(
    submodels: &BTreeMap<String, Submodel>,
    edges: &[Edge],
    blind_volume_cm3: Option<f64>,
) -> Result<(String, Topology), RegistryError> {
    let wiring = |e: &Edge, reason: String| RegistryError::Wiring {
        edge: e.to_string(),
        reason,
    };
    let mut used: BTreeSet<&PortRef> = BTreeSet::new();
    let mut links: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in edges {
        for end in [&e.from, &e.to] {
            let Some(node) = submodels.get(&end.node) else {
                return Err(wiring(e, format!("node `{}` does not exist", end.node)));
            };
            let Some(PortSpec { kind, .. }) = node.ports.iter().find(|p| p.name == end.port) else {
                return Err(wiring(
                    e,
                    format!(
                        "{} `{}` has no port `{}`",
                        node.parameters.kind().name(),
                        end.node,
                        end.port
                    ),
                ));
            };
            if *kind != e.kind {
                return Err(wiring(
                    e,
                    format!("port `{end}` is {kind:?}, the connection is {:?}", e.kind),
                ));
            }
            if e.kind == ConnectionKind::Pneumatic && !used.insert(end) {
                return Err(wiring(e, format!("port `{end}` is connected twice")));
            }
        }
        if e.from.node == e.to.node {
            return Err(wiring(e, "connects a node to itself".into()));
        }
        if e.kind == ConnectionKind::Pneumatic {
            links.entry(&e.from.node).or_default().push(&e.to.node);
            links.entry(&e.to.node).or_default().push(&e.from.node);
        }
    }

    let of_kind = |k: ComponentKind| -> Vec<&str> {
        submodels
            .values()
            .filter(|s| s.parameters.kind() == k)
            .map(|s| s.node_id.as_str())
            .collect()
    };
    let generators = of_kind(ComponentKind::Generator);
    let [generator] = generators.as_slice() else {
        return Err(RegistryError::Graph(format!(
            "a gripping system needs exactly one vacuum generator, found {}",
            generators.len()
        )));
    };
    let unsupported = |why: &str| {
        Err(RegistryError::Graph(format!("unsupported pneumatic topology: {why}")))
    };

    // Walk the chain outward from the generator.
    let mut chain = vec![*generator];
    loop {
        let last = chain[chain.len() - 1];
        let next: Vec<&str> = links
            .get(last)
            .map(|v| v.iter().copied().filter(|n| !chain.contains(n)).collect())
            .unwrap_or_default();
        match next.as_slice() {
            [] => break,
            [n] => chain.push(n),
            _ => return unsupported("branching lines"),
        }
    }
    if let Some(stray) = submodels.keys().find(|k| !chain.contains(&k.as_str())) {
        return Err(RegistryError::Graph(format!(
            "node `{stray}` is not connected to the generator"
        )));
    }
    let kinds: Vec<ComponentKind> = chain[1..]
        .iter()
        .map(|n| submodels[*n].parameters.kind())
        .collect();
    let topology = match kinds.as_slice() {
        [] => match blind_volume_cm3 {
            Some(v) if v > 0.0 => Topology::Blind(v),
            _ => return unsupported("a lone generator needs a blind port volume"),
        },
        [ComponentKind::Tank] => Topology::Tank(chain[1].to_string()),
        [ComponentKind::Cups] => Topology::Gripper {
            hose: None,
            cups: chain[1].to_string(),
        },
        [ComponentKind::Hose, ComponentKind::Cups] => {
            let hose = chain[1];
            let hose_edges = edges.iter().filter(|e| {
                e.kind == ConnectionKind::Pneumatic && (e.from.node == hose || e.to.node == hose)
            });
            if hose_edges.count() != 2 {
                return unsupported("the hose must join generator and cups");
            }
            Topology::Gripper {
                hose: Some(hose.to_string()),
                cups: chain[2].to_string(),
            }
        }
        _ => return unsupported("expected generator, optional hose, then cups or a tank"),
    };
    Ok((generator.to_string(), topology))
}

/// Assemble the model of `graph` at `depth` from the library's templates.
/// The graph must be semantified; every node's type needs a template at
/// this depth, and every edge must join existing ports of the same kind.
pub fn compose(
    graph: &SystemGraph,
    library: &ModelLibrary,
    depth: ModelingDepth,
) -> Result<ComposedModel, RegistryError> {
    graph.validate()?;
    let mut submodels = Vec::new();
    let mut blind = None;
    let mut unresolved = Vec::new();
    for node in &graph.nodes {
        let Some(type_id) = &node.type_id else {
            unresolved.push(format!("{} (`{}`)", node.node_id, node.name));
            continue;
        };
        let template = library
            .template(type_id, depth)
            .ok_or_else(|| RegistryError::MissingModel {
                type_id: type_id.clone(),
                depth: depth.level(),
            })?;
        if template.kind == ComponentKind::Generator {
            blind = template.blind_volume_cm3;
        }
        submodels.push(Submodel {
            node_id: node.node_id.clone(),
            type_id: type_id.clone(),
            instance_id: node.instance_id.clone(),
            ports: template.ports,
            parameters: template.defaults,
        });
    }
    if !unresolved.is_empty() {
        return Err(RegistryError::UnresolvedSemantics(unresolved));
    }
    ComposedModel::from_parts(
        &graph.name,
        depth,
        submodels,
        graph.edges.clone(),
        graph.thresholds,
        ModelSettings::default(),
        blind,
    )
}

/// Attach data for `id` to every submodel it applies to: a type id sets the
/// type data of all nodes of that type, an instance id sets the node
/// standing for that instance (type data first, then the measured
/// overrides). Returns the node ids that changed.
pub fn parameterize(
    model: &mut ComposedModel,
    data: &DataBasis,
    id: &str,
) -> Result<Vec<String>, RegistryError> {
    let targets: Vec<(String, TypeRecord, Option<String>)> = match data.lookup(id)? {
        AssetData::Type { type_id, record } => model
            .submodels()
            .filter(|s| s.type_id == type_id)
            .map(|s| (s.node_id.clone(), record.clone(), s.instance_id.clone()))
            .collect(),
        AssetData::Instance { record, base } => {
            let mut rec = base.clone();
            for (k, v) in &record.parameter_overrides {
                rec.set_param(k, *v)?;
            }
            model
                .submodels()
                .filter(|s| s.instance_id.as_deref() == Some(id) && s.type_id == record.type_id)
                .map(|s| (s.node_id.clone(), rec.clone(), Some(id.to_string())))
                .collect()
        }
    };
    if targets.is_empty() {
        return Err(RegistryError::UnknownAsset(format!(
            "`{id}` matches no node of `{}`",
            model.name()
        )));
    }
    let mut next = model.clone();
    let mut changed = Vec::new();
    for (node, record, instance) in targets {
        next.set_submodel_data(&node, record, instance)?;
        changed.push(node);
    }
    *model = next;
    Ok(changed)
}

/// The whole creation pipeline for a semantified graph: compose at `depth`,
/// attach type data to every node, then instance data where the graph
/// names an instance.
pub fn create_twin(
    graph: &SystemGraph,
    library: &ModelLibrary,
    data: &DataBasis,
    depth: ModelingDepth,
) -> Result<ComposedModel, RegistryError> {
    let mut model = compose(graph, library, depth)?;
    let types: BTreeSet<&str> = graph.nodes.iter().filter_map(|n| n.type_id.as_deref()).collect();
    for t in types {
        parameterize(&mut model, data, t)?;
    }
    let instances: BTreeSet<&str> = graph.nodes.iter().filter_map(|n| n.instance_id.as_deref()).collect();
    for i in instances {
        parameterize(&mut model, data, i)?;
    }
    Ok(model)
}

impl BehaviorModel for ComposedModel {
    fn metadata(&self) -> &ModelMetadata {
        &self.r.metadata
    }

    fn parameters(&self) -> ParamMap {
        let mut p = self.r.inner.parameters();
        for s in self.s.submodels.values() {
            for (k, v) in s.parameters.params() {
                p.insert(format!("{}.{k}", s.node_id), v);
            }
        }
        p
    }

    fn set_parameter(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        self.try_set(name, value).map_err(|e| match e {
            RegistryError::Model(m) => m,
            RegistryError::UnknownParameter { .. } | RegistryError::UnknownAsset(_) => {
                ModelError::UnknownParameter {
                    model: self.r.metadata.model_id.clone(),
                    name: name.to_string(),
                }
            }
            other => ModelError::InvalidValue {
                name: name.to_string(),
                value,
                reason: other.to_string(),
            },
        })
    }

    fn reset(&mut self) {
        self.r.inner.reset()
    }

    fn apply_inputs(&mut self, t: f64, inputs: Inputs, events: &mut Vec<OutputEvent>) {
        self.r.inner.apply_inputs(t, inputs, events)
    }

    fn advance(&mut self, t: f64, h: f64, events: &mut Vec<OutputEvent>) -> u64 {
        self.r.inner.advance(t, h, events)
    }

    fn outputs(&self) -> Outputs {
        self.r.inner.outputs()
    }

    fn energy_j(&self) -> f64 {
        self.r.inner.energy_j()
    }

    fn vacuum_modeled(&self) -> bool {
        self.r.inner.vacuum_modeled()
    }

    fn box_clone(&self) -> Box<dyn BehaviorModel> {
        Box::new(self.clone())
    }
}
