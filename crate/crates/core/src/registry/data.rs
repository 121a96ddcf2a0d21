use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RegistryError;
use crate::components::{Hose, InstanceRecord, RatedInput, SuctionCupSet, VacuumGenerator};
use crate::models::ParamMap;

/// The kinds of component a gripping system is assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Generator,
    Hose,
    Cups,
    Tank,
}

impl ComponentKind {
    pub fn name(self) -> &'static str {
        match self {
            ComponentKind::Generator => "generator",
            ComponentKind::Hose => "hose",
            ComponentKind::Cups => "cups",
            ComponentKind::Tank => "tank",
        }
    }
}

/// Type-level data of one component. Besides the typed fields every record
/// has a flat numeric view (`params`) that instance overrides and model
/// parameters address.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TypeRecord {
    Generator(VacuumGenerator),
    Hose(Hose),
    Cups(SuctionCupSet),
    Tank { volume_cm3: f64 },
}

impl TypeRecord {
    pub fn kind(&self) -> ComponentKind {
        match self {
            TypeRecord::Generator(_) => ComponentKind::Generator,
            TypeRecord::Hose(_) => ComponentKind::Hose,
            TypeRecord::Cups(_) => ComponentKind::Cups,
            TypeRecord::Tank { .. } => ComponentKind::Tank,
        }
    }

    pub fn params(&self) -> ParamMap {
        let pairs: Vec<(&str, f64)> = match self {
            TypeRecord::Generator(g) => vec![
                ("q_max", g.q_max_lpm),
                ("dp_max", g.dp_max_mbar),
                ("rated_input", g.rated_input.value()),
                ("cost_eur", g.cost_eur),
                ("weight_g", g.weight_g),
            ],
            TypeRecord::Hose(h) => vec![
                ("length_mm", h.length_mm),
                ("inner_diameter_mm", h.inner_diameter_mm),
            ],
            TypeRecord::Cups(c) => vec![
                ("diameter_mm", c.diameter_mm),
                ("count", f64::from(c.count)),
                ("dead_volume_cm3", c.dead_volume_cm3),
            ],
            TypeRecord::Tank { volume_cm3 } => vec![("volume_cm3", *volume_cm3)],
        };
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Set one numeric parameter. Values are range-checked here so a record
    /// never holds something the plant model would reject later.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<(), RegistryError> {
        let bad = |reason: &str| RegistryError::InvalidParameter {
            name: name.to_string(),
            value,
            reason: reason.to_string(),
        };
        if !value.is_finite() {
            return Err(bad("not finite"));
        }
        let positive = value > 0.0;
        let non_negative = value >= 0.0;
        match (self, name) {
            (TypeRecord::Generator(g), "q_max") if positive => g.q_max_lpm = value,
            (TypeRecord::Generator(g), "dp_max") if positive => g.dp_max_mbar = value,
            (TypeRecord::Generator(g), "rated_input") if non_negative => {
                g.rated_input = match g.rated_input {
                    RatedInput::ElectricW(_) => RatedInput::ElectricW(value),
                    RatedInput::AirLpm(_) => RatedInput::AirLpm(value),
                }
            }
            (TypeRecord::Generator(g), "cost_eur") if non_negative => g.cost_eur = value,
            (TypeRecord::Generator(g), "weight_g") if non_negative => g.weight_g = value,
            (TypeRecord::Hose(h), "length_mm") if non_negative => h.length_mm = value,
            (TypeRecord::Hose(h), "inner_diameter_mm") if positive => h.inner_diameter_mm = value,
            (TypeRecord::Cups(c), "diameter_mm") if positive => c.diameter_mm = value,
            (TypeRecord::Cups(c), "count") => {
                if value < 1.0 || value.fract() != 0.0 || value > f64::from(u32::MAX) {
                    return Err(bad("must be a whole number >= 1"));
                }
                c.count = value as u32;
            }
            (TypeRecord::Cups(c), "dead_volume_cm3") if non_negative => c.dead_volume_cm3 = value,
            (TypeRecord::Tank { volume_cm3 }, "volume_cm3") if positive => *volume_cm3 = value,
            (rec, _) => {
                return Err(if rec.params().contains_key(name) {
                    bad("out of range")
                } else {
                    RegistryError::UnknownParameter {
                        component: rec.kind().name().to_string(),
                        name: name.to_string(),
                    }
                })
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataBasis {
    pub version: String,
    /// Semantic type id to type-level data.
    pub types: BTreeMap<String, TypeRecord>,
    /// Instance id to measured per-unit data.
    #[serde(default)]
    pub instances: BTreeMap<String, InstanceRecord>,
    /// Material composition per type id, carried into twin packages.
    #[serde(default)]
    pub materials: BTreeMap<String, Vec<Material>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub material: String,
    pub mass_g: f64,
}

/// Parameters looked up for one asset id.
#[derive(Debug, Clone, PartialEq)]
pub enum AssetData<'a> {
    Type { type_id: &'a str, record: &'a TypeRecord },
    Instance { record: &'a InstanceRecord, base: &'a TypeRecord },
}

impl DataBasis {
    pub fn from_json_file(path: &Path) -> Result<Self, RegistryError> {
        let d: Self = super::read_json(path)?;
        d.validate()?;
        Ok(d)
    }

    /// Instances must refer to a known type and only override its numeric
    /// parameters; generator records must carry their own key as type id.
    pub fn validate(&self) -> Result<(), RegistryError> {
        for (id, rec) in &self.types {
            if let TypeRecord::Generator(g) = rec {
                if &g.type_id != id {
                    return Err(RegistryError::Data(format!(
                        "generator record under `{id}` declares type id `{}`",
                        g.type_id
                    )));
                }
                g.validate().map_err(|e| RegistryError::Data(e.to_string()))?;
            }
            for (name, value) in rec.params() {
                rec.clone().set_param(&name, value)?;
            }
        }
        for (id, inst) in &self.instances {
            if &inst.instance_id != id {
                return Err(RegistryError::Data(format!(
                    "instance record under `{id}` declares id `{}`",
                    inst.instance_id
                )));
            }
            let base = self.types.get(&inst.type_id).ok_or_else(|| {
                RegistryError::Data(format!(
                    "instance `{id}` refers to unknown type `{}`",
                    inst.type_id
                ))
            })?;
            inst.validate_against(base.params().keys())
                .map_err(|e| RegistryError::Data(e.to_string()))?;
        }
        Ok(())
    }

    /// Look `id` up first as an instance id, then as a type id.
    pub fn lookup(&self, id: &str) -> Result<AssetData<'_>, RegistryError> {
        if let Some(record) = self.instances.get(id) {
            let base = self
                .types
                .get(&record.type_id)
                .ok_or_else(|| RegistryError::UnknownAsset(record.type_id.clone()))?;
            return Ok(AssetData::Instance { record, base });
        }
        self.types
            .get_key_value(id)
            .map(|(type_id, record)| AssetData::Type { type_id, record })
            .ok_or_else(|| RegistryError::UnknownAsset(id.to_string()))
    }
}
