//! The behavior-model library, organized from the general to the specific:
//! modeling principles, hand-authored building blocks that apply them,
//! component templates wired from building blocks, and the component types
//! that use those templates. Templates per type and depth are generated,
//! never written by hand.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{ComponentKind, TypeRecord};
use super::graph::{ConnectionKind, PortRef};
use super::RegistryError;
use crate::metadata::ModelingDepth;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortSpec {
    pub name: String,
    pub kind: ConnectionKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principle {
    pub id: String,
    pub description: String,
}

/// Smallest hand-authored model element, e.g. a pump characteristic or a
/// lumped volume.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildingBlock {
    pub id: String,
    pub principle: String,
    pub depths: BTreeSet<ModelingDepth>,
    pub ports: Vec<PortSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub name: String,
    pub block: String,
}

/// A port of the component, bound to a port of one of its elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposedPort {
    pub name: String,
    pub kind: ConnectionKind,
    pub binds: PortRef,
}

/// How a component kind is built from building blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTemplate {
    pub kind: ComponentKind,
    pub elements: Vec<Element>,
    /// Internal connections between element ports.
    #[serde(default)]
    pub links: Vec<(PortRef, PortRef)>,
    pub ports: Vec<ExposedPort>,
    /// Data a template starts with before the data basis is attached.
    pub defaults: TypeRecord,
    /// Volume a generator evacuates when nothing is connected to it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blind_volume_cm3: Option<f64>,
}

/// A component type and the template it uses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentEntry {
    pub type_id: String,
    pub template: ComponentKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLibrary {
    pub library_version: String,
    pub principles: Vec<Principle>,
    pub building_blocks: Vec<BuildingBlock>,
    pub component_templates: Vec<ComponentTemplate>,
    pub components: Vec<ComponentEntry>,
}

/// A component model at one depth, ready to be placed in a composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTemplate {
    pub type_id: String,
    pub depth: ModelingDepth,
    pub kind: ComponentKind,
    pub ports: Vec<PortSpec>,
    pub defaults: TypeRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blind_volume_cm3: Option<f64>,
}

impl ModelTemplate {
    pub fn port(&self, name: &str) -> Option<&PortSpec> {
        self.ports.iter().find(|p| p.name == name)
    }
}

fn lib_err<T>(m: String) -> Result<T, RegistryError> {
    Err(RegistryError::Library(m))
}

fn check_ports(owner: &str, ports: impl IntoIterator<Item = (String, ConnectionKind)>) -> Result<(), RegistryError> {
    let mut names = BTreeSet::new();
    for (name, _) in ports {
        if name.is_empty() || name.contains('.') || !names.insert(name.clone()) {
            return lib_err(format!("{owner} has an empty, dotted or duplicate port `{name}`"));
        }
    }
    Ok(())
}

impl ModelLibrary {
    pub fn from_json_file(path: &Path) -> Result<Self, RegistryError> {
        let lib: Self = super::read_json(path)?;
        lib.validate()?;
        Ok(lib)
    }

    pub fn block(&self, id: &str) -> Option<&BuildingBlock> {
        self.building_blocks.iter().find(|b| b.id == id)
    }

    pub fn component_template(&self, kind: ComponentKind) -> Option<&ComponentTemplate> {
        self.component_templates.iter().find(|t| t.kind == kind)
    }

    pub fn component(&self, type_id: &str) -> Option<&ComponentEntry> {
        self.components.iter().find(|c| c.type_id == type_id)
    }

    /// Depths at which every element of the template is available.
    pub fn template_depths(&self, template: &ComponentTemplate) -> BTreeSet<ModelingDepth> {
        let mut depths: BTreeSet<ModelingDepth> = ModelingDepth::ALL.into_iter().collect();
        for e in &template.elements {
            match self.block(&e.block) {
                Some(b) => depths = depths.intersection(&b.depths).copied().collect(),
                None => return BTreeSet::new(),
            }
        }
        depths
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        let principles: BTreeSet<&str> = self.principles.iter().map(|p| p.id.as_str()).collect();
        let mut ids = BTreeSet::new();
        for b in &self.building_blocks {
            if !ids.insert(b.id.as_str()) {
                return lib_err(format!("building block `{}` defined twice", b.id));
            }
            if !principles.contains(b.principle.as_str()) {
                return lib_err(format!("block `{}` cites unknown principle `{}`", b.id, b.principle));
            }
            check_ports(
                &format!("block `{}`", b.id),
                b.ports.iter().map(|p| (p.name.clone(), p.kind)),
            )?;
        }

        let mut kinds = BTreeSet::new();
        for t in &self.component_templates {
            let owner = format!("template `{}`", t.kind.name());
            if !kinds.insert(t.kind) {
                return lib_err(format!("{owner} defined twice"));
            }
            if t.defaults.kind() != t.kind {
                return lib_err(format!("{owner} has defaults of another kind"));
            }
            let mut elements: BTreeMap<&str, &BuildingBlock> = BTreeMap::new();
            for e in &t.elements {
                let Some(b) = self.block(&e.block) else {
                    return lib_err(format!("{owner} uses unknown block `{}`", e.block));
                };
                if elements.insert(e.name.as_str(), b).is_some() {
                    return lib_err(format!("{owner} names element `{}` twice", e.name));
                }
            }
            let element_port = |r: &PortRef| -> Result<ConnectionKind, RegistryError> {
                elements
                    .get(r.node.as_str())
                    .and_then(|b| b.ports.iter().find(|p| p.name == r.port))
                    .map(|p| p.kind)
                    .ok_or_else(|| {
                        RegistryError::Library(format!("{owner} refers to missing element port `{r}`"))
                    })
            };
            for (a, b) in &t.links {
                if element_port(a)? != element_port(b)? {
                    return lib_err(format!("{owner} links `{a}` and `{b}` of different kinds"));
                }
            }
            check_ports(&owner, t.ports.iter().map(|p| (p.name.clone(), p.kind)))?;
            for p in &t.ports {
                if element_port(&p.binds)? != p.kind {
                    return lib_err(format!(
                        "{owner} exposes `{}` with a kind other than `{}`",
                        p.name, p.binds
                    ));
                }
            }
            if !t.ports.iter().any(|p| p.kind == ConnectionKind::Pneumatic) {
                return lib_err(format!("{owner} has no pneumatic port"));
            }
            if self.template_depths(t).is_empty() {
                return lib_err(format!("{owner} is available at no depth"));
            }
        }

        let mut types = BTreeSet::new();
        for c in &self.components {
            if !types.insert(c.type_id.as_str()) {
                return lib_err(format!("component `{}` listed twice", c.type_id));
            }
            if self.component_template(c.template).is_none() {
                return lib_err(format!(
                    "component `{}` uses missing template `{}`",
                    c.type_id,
                    c.template.name()
                ));
            }
        }
        Ok(())
    }

    /// The template of `type_id` at `depth`.
    pub fn template(&self, type_id: &str, depth: ModelingDepth) -> Option<ModelTemplate> {
        let entry = self.component(type_id)?;
        let t = self.component_template(entry.template)?;
        if !self.template_depths(t).contains(&depth) {
            return None;
        }
        let mut defaults = t.defaults.clone();
        if let TypeRecord::Generator(g) = &mut defaults {
            g.type_id = type_id.to_string();
        }
        Some(ModelTemplate {
            type_id: type_id.to_string(),
            depth,
            kind: t.kind,
            ports: t
                .ports
                .iter()
                .map(|p| PortSpec {
                    name: p.name.clone(),
                    kind: p.kind,
                })
                .collect(),
            defaults,
            blind_volume_cm3: t.blind_volume_cm3,
        })
    }

    /// Every generated template, ordered by type id then depth.
    pub fn templates(&self) -> Vec<ModelTemplate> {
        let mut out: Vec<ModelTemplate> = self
            .components
            .iter()
            .flat_map(|c| ModelingDepth::ALL.into_iter().filter_map(|d| self.template(&c.type_id, d)))
            .collect();
        out.sort_by(|a, b| a.type_id.cmp(&b.type_id).then(a.depth.cmp(&b.depth)));
        out
    }
}
