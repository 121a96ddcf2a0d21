use std::path::Path;

use serde::{Deserialize, Serialize};

use super::compose::{ComposedModel, Submodel};
use super::data::{DataBasis, Material};
use super::graph::Edge;
use super::RegistryError;
use crate::components::ThresholdConfig;
use crate::metadata::{ModelMetadata, ModelingDepth};
use crate::models::{BehaviorModel, ModelSettings, ParamMap};
use crate::pool::ModelPool;

pub const PACKAGE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRef {
    pub type_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
}

/// The model at one depth: its metadata and the behavior-model parameters
/// that differ from what the structure alone yields (e.g. fitted values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageVariant {
    pub depth: ModelingDepth,
    pub metadata: ModelMetadata,
    #[serde(default)]
    pub parameters: ParamMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackagedMaterial {
    pub node_id: String,
    pub material: String,
    pub mass_g: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub library_version: String,
    pub data_basis_version: String,
    /// Seconds since the Unix epoch. Taken from `SOURCE_DATE_EPOCH` so
    /// builds are reproducible, 0 when unset.
    pub created_unix: u64,
    pub tool: String,
}

impl Provenance {
    pub fn new(library_version: &str, data_basis_version: &str) -> Self {
        Self {
            library_version: library_version.to_string(),
            data_basis_version: data_basis_version.to_string(),
            created_unix: std::env::var("SOURCE_DATE_EPOCH")
                .ok()
                .and_then(|s| s.trim().parse().ok())
                .unwrap_or(0),
            tool: concat!("twinforge ", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }
}

/// A composed, parameterized twin in exchangeable form. One structure,
/// one or more depths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinPackage {
    pub schema_version: u32,
    pub twin_id: String,
    pub asset: AssetRef,
    pub variants: Vec<PackageVariant>,
    pub submodels: Vec<Submodel>,
    pub connections: Vec<Edge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ThresholdConfig>,
    pub settings: ModelSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blind_volume_cm3: Option<f64>,
    #[serde(default)]
    pub materials: Vec<PackagedMaterial>,
    pub provenance: Provenance,
}

impl TwinPackage {
    /// Package `models`, which must be depth variants of one structure.
    pub fn from_models(
        models: &[&ComposedModel],
        data: Option<&DataBasis>,
        provenance: Provenance,
    ) -> Result<Self, RegistryError> {
        let Some(first) = models.first() else {
            return Err(RegistryError::Data("nothing to package".into()));
        };
        let submodels: Vec<Submodel> = first.submodels().cloned().collect();
        let mut variants: Vec<PackageVariant> = Vec::new();
        for m in models {
            let same = m.name() == first.name()
                && m.submodels().eq(first.submodels())
                && m.connections() == first.connections()
                && m.explicit_thresholds() == first.explicit_thresholds()
                && m.settings() == first.settings()
                && m.blind_volume_cm3() == first.blind_volume_cm3();
            if !same {
                return Err(RegistryError::Data(format!(
                    "`{}` differs in structure from `{}`",
                    m.metadata().model_id,
                    first.metadata().model_id
                )));
            }
            if variants.iter().any(|v| v.depth == m.depth()) {
                return Err(RegistryError::Data(format!(
                    "depth {} packaged twice",
                    m.depth().level()
                )));
            }
            variants.push(PackageVariant {
                depth: m.depth(),
                metadata: m.metadata().clone(),
                parameters: m.overrides().clone(),
            });
        }
        variants.sort_by_key(|v| v.depth);
        let asset = first.asset();
        let materials = data
            .map(|d| {
                submodels
                    .iter()
                    .flat_map(|s| {
                        d.materials.get(&s.type_id).into_iter().flatten().map(
                            |Material { material, mass_g }| PackagedMaterial {
                                node_id: s.node_id.clone(),
                                material: material.clone(),
                                mass_g: *mass_g,
                            },
                        )
                    })
                    .collect()
            })
            .unwrap_or_default();
        Ok(Self {
            schema_version: PACKAGE_SCHEMA_VERSION,
            twin_id: first.name().to_string(),
            asset: AssetRef {
                type_id: asset.type_id.clone(),
                instance_id: asset.instance_id.clone(),
            },
            variants,
            submodels,
            connections: first.connections().to_vec(),
            thresholds: first.explicit_thresholds(),
            settings: first.settings(),
            blind_volume_cm3: first.blind_volume_cm3(),
            materials,
            provenance,
        })
    }

    /// Parse and check a package document. Schema violations report the
    /// JSON path they occurred at.
    pub fn from_json_str(text: &str) -> Result<Self, RegistryError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let pkg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            RegistryError::MalformedPackage {
                path,
                message: e.into_inner().to_string(),
            }
        })?;
        if pkg.schema_version != PACKAGE_SCHEMA_VERSION {
            return Err(RegistryError::MalformedPackage {
                path: "schema_version".into(),
                message: format!(
                    "unsupported schema version {} (expected {PACKAGE_SCHEMA_VERSION})",
                    pkg.schema_version
                ),
            });
        }
        if pkg.variants.is_empty() {
            return Err(RegistryError::MalformedPackage {
                path: "variants".into(),
                message: "a package needs at least one depth variant".into(),
            });
        }
        Ok(pkg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("package serializes")
    }

    /// Rebuild every packaged depth. The rebuilt metadata must match what
    /// the package declares.
    pub fn models(&self) -> Result<Vec<ComposedModel>, RegistryError> {
        self.variants
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let malformed = |message: String| RegistryError::MalformedPackage {
                    path: format!("variants[{i}]"),
                    message,
                };
                let mut m = ComposedModel::from_parts(
                    &self.twin_id,
                    v.depth,
                    self.submodels.clone(),
                    self.connections.clone(),
                    self.thresholds,
                    self.settings,
                    self.blind_volume_cm3,
                )
                .map_err(|e| malformed(e.to_string()))?;
                m.set_parameters(&v.parameters).map_err(|e| malformed(e.to_string()))?;
                if m.metadata() != &v.metadata {
                    return Err(malformed(format!(
                        "declared metadata of `{}` does not match the rebuilt model `{}`",
                        v.metadata.model_id,
                        m.metadata().model_id
                    )));
                }
                Ok(m)
            })
            .collect()
    }
}

/// Write `package` as a single JSON document.
pub fn export_package(package: &TwinPackage, path: &Path) -> Result<(), RegistryError> {
    std::fs::write(path, package.to_json_string() + "\n").map_err(|e| RegistryError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Read a package and add each of its depth variants to `pool`. Returns the
/// model ids inserted. Nothing is inserted unless every variant rebuilds.
pub fn import_package(path: &Path, pool: &ModelPool) -> Result<Vec<String>, RegistryError> {
    let text = std::fs::read_to_string(path).map_err(|e| RegistryError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let models = TwinPackage::from_json_str(&text)?.models()?;
    let origin = path.display().to_string();
    Ok(models
        .into_iter()
        .map(|m| {
            let id = m.metadata().model_id.clone();
            pool.insert(Box::new(m), &origin);
            id
        })
        .collect())
}
