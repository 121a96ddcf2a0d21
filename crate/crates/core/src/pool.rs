//! The model pool: the set of behavior models an application may switch
//! between. Reads are concurrent, writes are serialized.

use std::sync::RwLock;

use crate::metadata::{matches, MetadataQuery};
use crate::models::BehaviorModel;

#[derive(Debug)]
pub struct PoolEntry {
    pub model: Box<dyn BehaviorModel>,
    /// Where the entry came from (package path, "built-in", ...).
    pub origin: String,
}

#[derive(Debug, Default)]
pub struct ModelPool {
    entries: RwLock<Vec<PoolEntry>>,
}

impl ModelPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_models(models: impl IntoIterator<Item = Box<dyn BehaviorModel>>, origin: &str) -> Self {
        let pool = Self::new();
        for m in models {
            pool.insert(m, origin);
        }
        pool
    }

    /// Adds `model`, replacing any entry with the same model id. Returns the
    /// origin of the replaced entry.
    pub fn insert(&self, model: Box<dyn BehaviorModel>, origin: &str) -> Option<String> {
        let mut entries = self.entries.write().expect("model pool lock poisoned");
        let id = model.metadata().model_id.clone();
        let entry = PoolEntry {
            model,
            origin: origin.to_string(),
        };
        match entries.iter_mut().find(|e| e.model.metadata().model_id == id) {
            Some(slot) => Some(std::mem::replace(slot, entry).origin),
            None => {
                entries.push(entry);
                None
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("model pool lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A fresh copy of the model with this id.
    pub fn get(&self, model_id: &str) -> Option<Box<dyn BehaviorModel>> {
        self.entries
            .read()
            .expect("model pool lock poisoned")
            .iter()
            .find(|e| e.model.metadata().model_id == model_id)
            .map(|e| e.model.box_clone())
    }

    /// Copies of all models matching `query`, ordered by depth then id.
    pub fn query(&self, query: &MetadataQuery) -> Vec<Box<dyn BehaviorModel>> {
        let entries = self.entries.read().expect("model pool lock poisoned");
        let mut out: Vec<Box<dyn BehaviorModel>> = entries
            .iter()
            .filter(|e| matches(query, e.model.metadata()))
            .map(|e| e.model.box_clone())
            .collect();
        out.sort_by(|a, b| {
            let (ma, mb) = (a.metadata(), b.metadata());
            ma.depth.cmp(&mb.depth).then_with(|| ma.model_id.cmp(&mb.model_id))
        });
        out
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.query(&MetadataQuery::any())
            .iter()
            .map(|m| m.metadata().model_id.clone())
            .collect()
    }
}
