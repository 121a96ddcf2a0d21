//! Creating behavior models with little effort: interpret a system graph
//! through a translation table, assemble it from library templates, attach
//! type or instance data, and exchange the result as a twin package.

mod compose;
mod data;
mod graph;
mod library;
mod package;

pub use compose::{compose, create_twin, parameterize, ComposedModel, Submodel};
pub use data::{AssetData, ComponentKind, DataBasis, Material, TypeRecord};
pub use graph::{semantify, ConnectionKind, Edge, Node, PortRef, SystemGraph, TranslationTable};
pub use library::{
    BuildingBlock, ComponentEntry, ComponentTemplate, Element, ExposedPort, ModelLibrary,
    ModelTemplate, PortSpec, Principle,
};
pub use package::{
    export_package, import_package, AssetRef, PackageVariant, PackagedMaterial, Provenance,
    TwinPackage, PACKAGE_SCHEMA_VERSION,
};

use std::path::Path;

use thiserror::Error;

use crate::models::ModelError;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("invalid system graph: {0}")]
    Graph(String),
    #[error("unresolved semantics for node(s): {}", .0.join(", "))]
    UnresolvedSemantics(Vec<String>),
    #[error("library has no template for `{type_id}` at depth {depth}")]
    MissingModel { type_id: String, depth: u8 },
    #[error("wiring error at `{edge}`: {reason}")]
    Wiring { edge: String, reason: String },
    #[error("unknown asset {0}")]
    UnknownAsset(String),
    #[error("{component} data has no parameter `{name}`")]
    UnknownParameter { component: String, name: String },
    #[error("parameter `{name}` = {value} is invalid: {reason}")]
    InvalidParameter {
        name: String,
        value: f64,
        reason: String,
    },
    #[error("invalid library: {0}")]
    Library(String),
    #[error("invalid data basis: {0}")]
    Data(String),
    #[error("malformed package at `{path}`: {message}")]
    MalformedPackage { path: String, message: String },
    #[error("cannot read or write {path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, RegistryError> {
    let text = std::fs::read_to_string(path).map_err(|e| RegistryError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| RegistryError::Parse {
        path: format!("{} at `{}`", path.display(), e.path()),
        message: e.into_inner().to_string(),
    })
}

const SHIPPED_LIBRARY: &str = include_str!("../../data/library.json");
const SHIPPED_DATA_BASIS: &str = include_str!("../../data/data_basis.json");
const SHIPPED_TRANSLATION_TABLE: &str = include_str!("../../data/translation_table.json");
const SHIPPED_SYSTEM_GRAPH: &str = include_str!("../../data/system_graph.json");

/// The library that ships with the crate.
pub fn shipped_library() -> ModelLibrary {
    let lib: ModelLibrary = serde_json::from_str(SHIPPED_LIBRARY).expect("shipped library parses");
    lib.validate().expect("shipped library is valid");
    lib
}

/// Type data of the four catalog generators and the reference hose and
/// cups, plus one example instance.
pub fn shipped_data_basis() -> DataBasis {
    let d: DataBasis = serde_json::from_str(SHIPPED_DATA_BASIS).expect("shipped data basis parses");
    d.validate().expect("shipped data basis is valid");
    d
}

pub fn shipped_translation_table() -> TranslationTable {
    let t: TranslationTable =
        serde_json::from_str(SHIPPED_TRANSLATION_TABLE).expect("shipped table parses");
    t.validate().expect("shipped table is injective");
    t
}

/// The reference gripper as found in plant documentation, with
/// company-specific names only.
pub fn shipped_system_graph() -> SystemGraph {
    let g: SystemGraph = serde_json::from_str(SHIPPED_SYSTEM_GRAPH).expect("shipped graph parses");
    g.validate().expect("shipped graph is valid");
    g
}
