//! Task datasets: line-delimited items plus a manifest declaring the
//! task kind, label space, split membership, and the optional
//! content-free template.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::prompt::LabelSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Generation,
}

/// One dataset row. `gold` is a label name for classification and an
/// answer span for generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    pub text: String,
    pub gold: String,
}

/// Wire form of an item: classification rows say `label`, generation
/// rows say `answer`.
#[derive(Debug, Deserialize)]
struct RawItem {
    id: String,
    text: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    answer: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub validation: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

/// Manifest file (JSON) describing a dataset on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task_kind: TaskKind,
    /// Items file path, relative to the manifest's directory.
    pub items_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_map: Option<Vec<String>>,
    pub splits: Splits,
    /// Template with a `{cf}` slot for task-specific content-free
    /// inputs (e.g. a relation phrase around the probe). Absent, the
    /// content-free string is used as the test input directly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cf_template: Option<String>,
}

/// A validated, loaded dataset.
#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub kind: TaskKind,
    items: Vec<DatasetItem>,
    index: BTreeMap<String, usize>,
    pub label_space: Option<LabelSpace>,
    pub splits: Splits,
    pub cf_template: Option<String>,
}

impl TaskDataset {
    /// Loads `manifest_path` and the items file it references.
    pub fn load(manifest_path: &Path) -> Result<Self, HarnessError> {
        let manifest_text = std::fs::read_to_string(manifest_path)
            .map_err(|e| HarnessError::io(manifest_path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&manifest_text)
            .map_err(|e| HarnessError::parse(manifest_path, e))?;
        let items_path = manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&manifest.items_file);
        let items_text =
            std::fs::read_to_string(&items_path).map_err(|e| HarnessError::io(&items_path, e))?;
        let mut items = Vec::new();
        for (i, line) in items_text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawItem = serde_json::from_str(line)
                .map_err(|e| HarnessError::parse_line(&items_path, i + 1, e))?;
            let gold = match manifest.task_kind {
                TaskKind::Classification => raw.label,
                TaskKind::Generation => raw.answer,
            }
            .ok_or_else(|| HarnessError::ItemMissingGold { id: raw.id.clone() })?;
            items.push(DatasetItem {
                id: raw.id,
                text: raw.text,
                gold,
            });
        }
        let label_space = match (&manifest.label_names, &manifest.token_map) {
            (Some(names), Some(tokens)) => {
                Some(LabelSpace::with_token_map(names.clone(), tokens.clone())?)
            }
            (Some(names), None) => Some(LabelSpace::new(names.clone())?),
            (None, _) => None,
        };
        Self::from_parts(
            manifest.task_kind,
            items,
            label_space,
            manifest.splits,
            manifest.cf_template,
        )
    }

    /// Builds and validates a dataset from in-memory parts.
    pub fn from_parts(
        kind: TaskKind,
        items: Vec<DatasetItem>,
        label_space: Option<LabelSpace>,
        splits: Splits,
        cf_template: Option<String>,
    ) -> Result<Self, HarnessError> {
        let mut index = BTreeMap::new();
        for (i, item) in items.iter().enumerate() {
            if index.insert(item.id.clone(), i).is_some() {
                return Err(HarnessError::DuplicateItemId(item.id.clone()));
            }
        }
        if kind == TaskKind::Classification {
            let space = label_space
                .as_ref()
                .ok_or(HarnessError::MissingLabelSpace)?;
            for item in &items {
                if space.class_of_name(&item.gold).is_none() {
                    return Err(HarnessError::GoldOutsideLabelSpace {
                        id: item.id.clone(),
                        label: item.gold.clone(),
                    });
                }
            }
        }
        let mut seen = BTreeMap::new();
        for (split, ids) in [
            ("train", &splits.train),
            ("validation", &splits.validation),
            ("test", &splits.test),
        ] {
            for id in ids {
                if !index.contains_key(id) {
                    return Err(HarnessError::UnknownItemId(id.clone()));
                }
                if let Some(previous) = seen.insert(id.clone(), split) {
                    return Err(HarnessError::OverlappingSplits {
                        id: id.clone(),
                        a: previous,
                        b: split,
                    });
                }
            }
        }
        if let Some(template) = &cf_template {
            if template.matches("{cf}").count() != 1 {
                return Err(HarnessError::CfTemplateSlot);
            }
        }
        Ok(Self {
            kind,
            items,
            index,
            label_space,
            splits,
            cf_template,
        })
    }

    pub fn item(&self, id: &str) -> Result<&DatasetItem, HarnessError> {
        self.index
            .get(id)
            .map(|&i| &self.items[i])
            .ok_or_else(|| HarnessError::UnknownItemId(id.to_string()))
    }

    pub fn items(&self) -> &[DatasetItem] {
        &self.items
    }

    fn split_items(&self, ids: &[String]) -> Vec<DatasetItem> {
        ids.iter()
            .map(|id| self.items[self.index[id]].clone())
            .collect()
    }

    pub fn train_pool(&self) -> Vec<DatasetItem> {
        self.split_items(&self.splits.train)
    }

    pub fn validation_items(&self) -> Vec<DatasetItem> {
        self.split_items(&self.splits.validation)
    }

    pub fn test_items(&self) -> Vec<DatasetItem> {
        self.split_items(&self.splits.test)
    }

    /// The content-free probe input for a content-free string: the
    /// `{cf}` slot of the template when one is declared, the string
    /// itself otherwise.
    pub fn cf_input(&self, cf: &str) -> String {
        match &self.cf_template {
            Some(template) => template.replace("{cf}", cf),
            None => cf.to_string(),
        }
    }
}
