//! Exact brute-force vector collection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::FabricError;
use crate::embedding::{embed_text_with_dim, tokenize, Embedding};
use crate::parallel::{self, Scored};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VectorStore {
    records: Vec<(String, Embedding)>,
    docs: BTreeMap<String, serde_json::Value>,
}

impl VectorStore {
    pub fn insert(&mut self, id: impl Into<String>, embedding: Embedding, doc: serde_json::Value) {
        let id = id.into();
        self.records.push((id.clone(), embedding));
        self.docs.insert(id, doc);
    }

    /// Loads JSON-lines documents; each is embedded from its `text` field.
    /// Ids come from an `id` field when present, else `doc-NNNN` by line.
    pub fn from_jsonl(input: &str, dim: usize) -> Result<Self, FabricError> {
        let mut store = VectorStore::default();
        for (n, line) in input.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let doc: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| FabricError::Fixture(format!("feedback line {}: {e}", n + 1)))?;
            let text = doc
                .get("text")
                .and_then(|t| t.as_str())
                .ok_or_else(|| FabricError::Fixture(format!("feedback line {}: missing text", n + 1)))?;
            let id = doc
                .get("id")
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .unwrap_or_else(|| format!("doc-{:04}", n + 1));
            let e = embed_text_with_dim(text, dim);
            store.insert(id, e, doc);
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[(String, Embedding)] {
        &self.records
    }

    pub fn doc(&self, id: &str) -> Option<&serde_json::Value> {
        self.docs.get(id)
    }

    pub fn top_k(&self, query: &Embedding, k: usize) -> Result<Vec<Scored>, FabricError> {
        Ok(parallel::top_k(query, &self.records, k)?)
    }

    /// Field names of the stored documents, sorted.
    pub fn field_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .docs
            .values()
            .filter_map(|d| d.as_object())
            .flat_map(|o| o.keys().cloned())
            .collect();
        names.sort();
        names.dedup();
        names
    }

    /// Distinct lowercase tokens over all document texts.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut vocab: Vec<String> = self
            .docs
            .values()
            .filter_map(|d| d.get("text").and_then(|t| t.as_str()))
            .flat_map(tokenize)
            .collect();
        vocab.sort();
        vocab.dedup();
        vocab
    }
}
