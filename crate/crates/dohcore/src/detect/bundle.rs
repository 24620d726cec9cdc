//! Portable model store: one JSON document per model, versioned so stale
//! artifacts fail loudly instead of scoring differently.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    DetectError, ForestModel, Label, LabelCounts, LinearModel, RuleModel,
};
use crate::flowmeter::{FeatureVector, FEATURE_COUNT};

pub const SCHEMA_VERSION: u64 = 1;

/// A scoring model of any supported kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "lowercase")]
pub enum ModelKind {
    Rule(RuleModel),
    Linear(Box<LinearModel>),
    Forest(ForestModel),
}

impl ModelKind {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelKind::Rule(_) => "rule",
            ModelKind::Linear(_) => "linear",
            ModelKind::Forest(_) => "forest",
        }
    }

    pub fn score_row(&self, row: &[f64; FEATURE_COUNT]) -> Result<f64, DetectError> {
        match self {
            ModelKind::Rule(m) => m.score_row(row),
            ModelKind::Linear(m) => Ok(m.score_row(row)),
            ModelKind::Forest(m) => Ok(m.score_row(row)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ValidationMetrics {
    pub accuracy: f64,
    pub detection_rate: f64,
    pub fpr_percent: f64,
}

/// Provenance stored next to the model: how it was trained and how it
/// performed on the validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BundleMetadata {
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub training: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_counts: Option<LabelCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationMetrics>,
}

/// A named model with its calibrated cutoff and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub name: String,
    pub model: ModelKind,
    pub cutoff: f64,
    pub metadata: BundleMetadata,
}

impl ModelBundle {
    pub fn score(&self, v: &FeatureVector) -> Result<f64, DetectError> {
        self.model.score_row(&v.features)
    }

    pub fn classify(&self, v: &FeatureVector) -> Result<Label, DetectError> {
        Ok(if self.score(v)? >= self.cutoff {
            Label::Malicious
        } else {
            Label::Benign
        })
    }

    pub fn is_rule(&self) -> bool {
        matches!(self.model, ModelKind::Rule(_))
    }
}

#[derive(Serialize, Deserialize)]
struct BundleFile {
    schema_version: u64,
    #[serde(flatten)]
    model: ModelKind,
    cutoff: f64,
    #[serde(default)]
    metadata: BundleMetadata,
}

/// Display name for a model file: the stem minus a trailing `_model`.
pub fn display_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    stem.strip_suffix("_model").unwrap_or(&stem).to_string()
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<(), DetectError> {
    let file = BundleFile {
        schema_version: SCHEMA_VERSION,
        model: bundle.model.clone(),
        cutoff: bundle.cutoff,
        metadata: bundle.metadata.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file)
        .map_err(|e| DetectError::Corrupt(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Load a bundle, or a bare rule-model JSON document, from a file. The
/// bundle name comes from the file name.
pub fn load_bundle(path: &Path) -> Result<ModelBundle, DetectError> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| DetectError::Corrupt(e.to_string()))?;
    let name = display_name(path);

    if let Some(version) = value.get("schema_version") {
        let found = version.as_u64().ok_or_else(|| {
            DetectError::Corrupt("schema_version is not an integer".into())
        })?;
        if found != SCHEMA_VERSION {
            return Err(DetectError::SchemaVersionMismatch { found });
        }
        let file: BundleFile = serde_json::from_value(value)
            .map_err(|e| DetectError::Corrupt(e.to_string()))?;
        if let ModelKind::Rule(model) = &file.model {
            model.validate()?;
        }
        return Ok(ModelBundle {
            name,
            model: file.model,
            cutoff: file.cutoff,
            metadata: file.metadata,
        });
    }

    if value.get("rules").is_some() {
        let model = RuleModel::from_json(&text)?;
        return Ok(ModelBundle {
            name,
            cutoff: model.cutoff,
            model: ModelKind::Rule(model),
            metadata: BundleMetadata::default(),
        });
    }

    Err(DetectError::Corrupt(
        "neither a model bundle nor a rule model".into(),
    ))
}

/// Load every `*_model.json` in a directory: trained models first in
/// alphabetical order, then rule models.
pub fn load_models_dir(dir: &Path) -> Result<Vec<ModelBundle>, DetectError> {
    let mut paths: Vec<std::path::PathBuf> = fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().ends_with("_model.json"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    let mut trained = Vec::new();
    let mut rules = Vec::new();
    for path in paths {
        let bundle = load_bundle(&path)?;
        if bundle.is_rule() {
            rules.push(bundle);
        } else {
            trained.push(bundle);
        }
    }
    trained.extend(rules);
    Ok(trained)
}
