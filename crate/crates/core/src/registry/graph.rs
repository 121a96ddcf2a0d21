use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RegistryError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub node_id: String,
    /// Designation as used in the source system, possibly company-specific.
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
}

/// `node.port`, written as a single string in JSON.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PortRef {
    pub node: String,
    pub port: String,
}

impl TryFrom<String> for PortRef {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        match s.split_once('.') {
            Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok(Self {
                node: n.to_string(),
                port: p.to_string(),
            }),
            _ => Err(format!("port reference `{s}` is not of the form node.port")),
        }
    }
}

impl From<PortRef> for String {
    fn from(p: PortRef) -> Self {
        format!("{}.{}", p.node, p.port)
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.node, self.port)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionKind {
    Pneumatic,
    Signal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: PortRef,
    pub to: PortRef,
    pub kind: ConnectionKind,
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {} ({:?})", self.from, self.to, self.kind)
    }
}

/// Description of a system as found in engineering data: components as
/// nodes, their connections as edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemGraph {
    pub name: String,
    pub nodes: Vec<Node>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    /// Switching thresholds of the application; derived from the reference
    /// handling task when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<crate::components::ThresholdConfig>,
}

impl SystemGraph {
    pub fn from_json_file(path: &Path) -> Result<Self, RegistryError> {
        let g: Self = super::read_json(path)?;
        g.validate()?;
        Ok(g)
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    /// Unique node ids and edges that reference existing nodes.
    pub fn validate(&self) -> Result<(), RegistryError> {
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if n.node_id.is_empty() || n.node_id.contains('.') {
                return Err(RegistryError::Graph(format!(
                    "node id `{}` must be non-empty and contain no dot",
                    n.node_id
                )));
            }
            if !seen.insert(n.node_id.as_str()) {
                return Err(RegistryError::Graph(format!("duplicate node id `{}`", n.node_id)));
            }
        }
        for e in &self.edges {
            for end in [&e.from, &e.to] {
                if !seen.contains(end.node.as_str()) {
                    return Err(RegistryError::Wiring {
                        edge: e.to_string(),
                        reason: format!("node `{}` does not exist", end.node),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Company-specific designation to semantic type id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TranslationTable {
    pub entries: BTreeMap<String, String>,
}

impl TranslationTable {
    pub fn from_json_file(path: &Path) -> Result<Self, RegistryError> {
        let t: Self = super::read_json(path)?;
        t.validate()?;
        Ok(t)
    }

    /// No two designations may map to the same type id.
    pub fn validate(&self) -> Result<(), RegistryError> {
        let mut targets: BTreeMap<&str, &str> = BTreeMap::new();
        for (name, id) in &self.entries {
            if let Some(other) = targets.insert(id.as_str(), name.as_str()) {
                return Err(RegistryError::Graph(format!(
                    "translation table maps both `{other}` and `{name}` to `{id}`"
                )));
            }
        }
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Option<&str> {
        self.entries.get(name).map(String::as_str)
    }
}

/// Resolve the type id of every untyped node through `table`. Typed nodes
/// pass through unchanged.
pub fn semantify(graph: &SystemGraph, table: &TranslationTable) -> Result<SystemGraph, RegistryError> {
    graph.validate()?;
    let mut out = graph.clone();
    let mut unresolved = Vec::new();
    for node in &mut out.nodes {
        if node.type_id.is_some() {
            continue;
        }
        match table.lookup(&node.name) {
            Some(id) => node.type_id = Some(id.to_string()),
            None => unresolved.push(format!("{} (`{}`)", node.node_id, node.name)),
        }
    }
    if unresolved.is_empty() {
        Ok(out)
    } else {
        Err(RegistryError::UnresolvedSemantics(unresolved))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph() -> SystemGraph {
        serde_json::from_str(
            r#"{
              "name": "demo",
              "nodes": [
                {"node_id": "pump", "name": "Pumpe-A7"},
                {"node_id": "hose", "name": "x", "type_id": "hose.t"}
              ],
              "edges": [{"from": "pump.vacuum", "to": "hose.a", "kind": "pneumatic"}]
            }"#,
        )
        .unwrap()
    }

    fn table() -> TranslationTable {
        TranslationTable {
            entries: [("Pumpe-A7".to_string(), "vg.ecbpmi".to_string())].into(),
        }
    }

    #[test]
    fn resolves_company_names() {
        let g = semantify(&graph(), &table()).unwrap();
        assert_eq!(g.node("pump").unwrap().type_id.as_deref(), Some("vg.ecbpmi"));
        assert_eq!(g.node("hose").unwrap().type_id.as_deref(), Some("hose.t"));
        assert_eq!(semantify(&g, &table()).unwrap(), g);
        assert_eq!(semantify(&g, &TranslationTable::default()).unwrap(), g);
    }

    #[test]
    fn unknown_name_is_reported() {
        let err = semantify(&graph(), &TranslationTable::default()).unwrap_err();
        match err {
            RegistryError::UnresolvedSemantics(nodes) => {
                assert_eq!(nodes, vec!["pump (`Pumpe-A7`)".to_string()])
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn structural_checks() {
        let mut g = graph();
        g.nodes.push(g.nodes[0].clone());
        assert!(matches!(g.validate(), Err(RegistryError::Graph(_))));
        let mut g = graph();
        g.edges[0].to.node = "ghost".into();
        assert!(matches!(g.validate(), Err(RegistryError::Wiring { .. })));
        assert!(serde_json::from_str::<PortRef>("\"nodot\"").is_err());
    }

    #[test]
    fn table_must_be_injective() {
        let mut t = table();
        t.entries.insert("Other".into(), "vg.ecbpmi".into());
        assert!(t.validate().is_err());
    }
}
