//! Detection engine: weighted-rule scoring, trainable classifiers with
//! class balancing, FPR-targeted cutoff calibration, and a multi-model
//! predictor report.

mod bundle;
mod forest;
mod linear;
mod smote;

pub use bundle::{
    display_name, load_bundle, load_models_dir, save_bundle, BundleMetadata, ModelBundle,
    ModelKind, ValidationMetrics, SCHEMA_VERSION,
};
pub use forest::{train_forest, ForestConfig, ForestModel, TreeNode};
pub use linear::{logreg_loss_and_gradient, train_logreg, LinearModel, LogRegConfig};
pub use smote::smote_balance;

use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flowmeter::{feature_index, FeatureVector, COLUMNS, FEATURE_COUNT, LABEL_COLUMN};

/// Default classification cutoff for rule models.
pub const DEFAULT_RULE_CUTOFF: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("unknown feature: {0}")]
    UnknownFeature(String),
    #[error("class too small to balance: {0}")]
    DegenerateClass(String),
    #[error("training diverged to a non-finite loss")]
    NonFinite,
    #[error("no benign rows")]
    NoBenign,
    #[error("missing feature columns: {}", .0.join(", "))]
    SchemaMismatch(Vec<String>),
    #[error("unsupported model schema version {found}")]
    SchemaVersionMismatch { found: u64 },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Flow class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Benign,
    Malicious,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Benign => "Benign",
            Label::Malicious => "Malicious",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "Benign" => Some(Label::Benign),
            "Malicious" => Some(Label::Malicious),
            _ => None,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub benign: usize,
    pub malicious: usize,
}

/// Feature rows with class labels, the unit of training and evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    pub rows: Vec<[f64; FEATURE_COUNT]>,
    pub labels: Vec<Label>,
}

impl LabeledDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: [f64; FEATURE_COUNT], label: Label) {
        self.rows.push(row);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn counts(&self) -> LabelCounts {
        let benign = self.labels.iter().filter(|l| **l == Label::Benign).count();
        LabelCounts {
            benign,
            malicious: self.labels.len() - benign,
        }
    }

    /// Keep labelled vectors; returns the dataset and how many vectors were
    /// skipped for carrying no parseable label.
    pub fn from_vectors(vectors: &[FeatureVector]) -> (Self, usize) {
        let mut dataset = Self::new();
        let mut skipped = 0;
        for v in vectors {
            match v.label.as_deref().and_then(Label::parse) {
                Some(label) => dataset.push(v.features, label),
                None => skipped += 1,
            }
        }
        (dataset, skipped)
    }

    /// Stratified split by label into train/validation/test parts, shuffled
    /// deterministically by `seed`.
    pub fn split(&self, train_frac: f64, validation_frac: f64, seed: u64) -> (Self, Self, Self) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Self::new();
        let mut validation = Self::new();
        let mut test = Self::new();
        for class in [Label::Benign, Label::Malicious] {
            let mut indices: Vec<usize> = (0..self.len())
                .filter(|i| self.labels[*i] == class)
                .collect();
            indices.shuffle(&mut rng);
            let n = indices.len();
            let n_train = (n as f64 * train_frac).floor() as usize;
            let n_validation = (n as f64 * validation_frac).floor() as usize;
            for (pos, idx) in indices.into_iter().enumerate() {
                let part = if pos < n_train {
                    &mut train
                } else if pos < n_train + n_validation {
                    &mut validation
                } else {
                    &mut test
                };
                part.push(self.rows[idx], self.labels[idx]);
            }
        }
        (train, validation, test)
    }
}

/// Result of a tolerant feature-CSV load.
#[derive(Debug)]
pub struct CsvLoad {
    pub vectors: Vec<FeatureVector>,
    /// Rows dropped for missing, unparseable, or non-finite values.
    pub dropped_rows: usize,
}

/// Load a feature CSV, dropping (and counting) rows with missing or
/// non-finite values. Requires the full feature schema in the header;
/// a Label column is optional.
pub fn load_feature_csv<R: BufRead>(input: R) -> Result<CsvLoad, DetectError> {
    let mut lines = input.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(DetectError::SchemaMismatch(
            COLUMNS.iter().map(|c| c.to_string()).collect(),
        )),
    };
    let names: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();
    let mut sources = Vec::with_capacity(COLUMNS.len());
    let mut missing = Vec::new();
    for column in COLUMNS {
        match names.iter().position(|n| *n == column) {
            Some(idx) => sources.push(idx),
            None => missing.push(column.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(DetectError::SchemaMismatch(missing));
    }
    let label_idx = names.iter().position(|n| *n == LABEL_COLUMN);

    let mut vectors = Vec::new();
    let mut dropped_rows = 0;
    for line in lines {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < names.len() {
            dropped_rows += 1;
            continue;
        }
        let finite = |schema_pos: usize| -> Option<f64> {
            fields[sources[schema_pos]]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
        };
        let mut features = [0.0; FEATURE_COUNT];
        let mut ok = true;
        for (slot, schema_pos) in [(0, 2), (1, 3)] {
            match finite(schema_pos) {
                Some(v) => features[slot] = v,
                None => ok = false,
            }
        }
        for (schema_pos, slot) in (5..COLUMNS.len()).zip(2..FEATURE_COUNT) {
            match finite(schema_pos) {
                Some(v) => features[slot] = v,
                None => ok = false,
            }
        }
        let timestamp = finite(4);
        if !ok || timestamp.is_none() {
            dropped_rows += 1;
            continue;
        }
        vectors.push(FeatureVector {
            source_ip: fields[sources[0]].to_string(),
            destination_ip: fields[sources[1]].to_string(),
            timestamp: timestamp.unwrap(),
            features,
            label: label_idx.map(|i| fields[i].to_string()),
        });
    }
    Ok(CsvLoad {
        vectors,
        dropped_rows,
    })
}

/// Rule comparison operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleOp {
    #[serde(rename = "<")]
    Less,
    #[serde(rename = ">")]
    Greater,
    #[serde(rename = "<=")]
    LessEq,
    #[serde(rename = ">=")]
    GreaterEq,
}

impl RuleOp {
    fn holds(&self, value: f64, threshold: f64) -> bool {
        match self {
            RuleOp::Less => value < threshold,
            RuleOp::Greater => value > threshold,
            RuleOp::LessEq => value <= threshold,
            RuleOp::GreaterEq => value >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub feature: String,
    pub op: RuleOp,
    pub value: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
    Max,
}

/// Weighted threshold rules combined into a clipped score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleModel {
    pub rules: Vec<Rule>,
    pub aggregation: Aggregation,
    pub clip: [f64; 2],
    pub bias: f64,
    #[serde(default = "default_rule_cutoff")]
    pub cutoff: f64,
}

fn default_rule_cutoff() -> f64 {
    DEFAULT_RULE_CUTOFF
}

impl RuleModel {
    /// Check feature names and clip bounds.
    pub fn validate(&self) -> Result<(), DetectError> {
        for rule in &self.rules {
            if feature_index(&rule.feature).is_none() {
                return Err(DetectError::UnknownFeature(rule.feature.clone()));
            }
        }
        if self.clip[0] > self.clip[1] {
            return Err(DetectError::Corrupt(format!(
                "clip range [{}, {}] is inverted",
                self.clip[0], self.clip[1]
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, DetectError> {
        let model: RuleModel =
            serde_json::from_str(text).map_err(|e| DetectError::Corrupt(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rule model serializes")
    }

    /// Aggregate the weights of satisfied rules, add the bias, and clamp
    /// into the clip range.
    pub fn score_row(&self, row: &[f64; FEATURE_COUNT]) -> Result<f64, DetectError> {
        let mut satisfied = Vec::new();
        for rule in &self.rules {
            let idx = feature_index(&rule.feature)
                .ok_or_else(|| DetectError::UnknownFeature(rule.feature.clone()))?;
            if rule.op.holds(row[idx], rule.value) {
                satisfied.push(rule.weight);
            }
        }
        let raw = match self.aggregation {
            Aggregation::Sum => satisfied.iter().sum::<f64>(),
            Aggregation::Max => satisfied.iter().copied().fold(0.0, f64::max),
        } + self.bias;
        Ok(raw.clamp(self.clip[0], self.clip[1]))
    }

    pub fn score(&self, v: &FeatureVector) -> Result<f64, DetectError> {
        self.score_row(&v.features)
    }

    pub fn classify(&self, v: &FeatureVector) -> Result<Label, DetectError> {
        Ok(if self.score(v)? >= self.cutoff {
            Label::Malicious
        } else {
            Label::Benign
        })
    }
}

/// False-positive rate in percent: benign rows predicted malicious over all
/// benign rows, times 100.
pub fn fpr(predictions: &[Label], labels: &[Label]) -> Result<f64, DetectError> {
    assert_eq!(predictions.len(), labels.len());
    let benign = labels.iter().filter(|l| **l == Label::Benign).count();
    if benign == 0 {
        return Err(DetectError::NoBenign);
    }
    let false_positives = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| **l == Label::Benign && **p == Label::Malicious)
        .count();
    Ok(100.0 * false_positives as f64 / benign as f64)
}

/// Smallest cutoff whose false-positive rate on the given benign scores is
/// at or below `target_fpr` (a fraction, e.g. 0.01). Candidates are the
/// distinct benign scores plus 1.0.
pub fn calibrate_cutoff_from_scores(
    benign_scores: &[f64],
    target_fpr: f64,
) -> Result<f64, DetectError> {
    if benign_scores.is_empty() {
        return Err(DetectError::NoBenign);
    }
    let mut candidates = benign_scores.to_vec();
    candidates.push(1.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let n = benign_scores.len() as f64;
    for cutoff in candidates {
        let flagged = benign_scores.iter().filter(|s| **s >= cutoff).count() as f64;
        if flagged / n <= target_fpr {
            return Ok(cutoff);
        }
    }
    unreachable!("cutoff 1.0 flags no benign score below 1.0");
}

/// Calibrate a cutoff for per-row scores against the validation labels.
pub fn calibrate_cutoff(
    scores: &[f64],
    labels: &[Label],
    target_fpr: f64,
) -> Result<f64, DetectError> {
    assert_eq!(scores.len(), labels.len());
    let benign: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == Label::Benign)
        .map(|(s, _)| *s)
        .collect();
    calibrate_cutoff_from_scores(&benign, target_fpr)
}

/// Per-model prediction summary over one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport {
    pub name: String,
    pub benign: usize,
    pub malicious: usize,
    pub total: usize,
    pub threshold: f64,
    pub avg_confidence: f64,
}

/// Score every vector with every bundle and summarize the verdicts.
/// Confidence of one prediction is the score when malicious and one minus
/// the score when benign.
pub fn predict_all(
    bundles: &[ModelBundle],
    vectors: &[FeatureVector],
) -> Result<Vec<ModelReport>, DetectError> {
    let mut reports = Vec::with_capacity(bundles.len());
    for bundle in bundles {
        let mut malicious = 0;
        let mut confidence_sum = 0.0;
        for v in vectors {
            let score = bundle.score(v)?;
            if score >= bundle.cutoff {
                malicious += 1;
                confidence_sum += score;
            } else {
                confidence_sum += 1.0 - score;
            }
        }
        let total = vectors.len();
        reports.push(ModelReport {
            name: bundle.name.clone(),
            benign: total - malicious,
            malicious,
            total,
            threshold: bundle.cutoff,
            avg_confidence: if total > 0 {
                confidence_sum / total as f64
            } else {
                0.0
            },
        });
    }
    Ok(reports)
}

/// Render the aligned summary table: Model, Benign, Malicious, Total,
/// Threshold, Confidence.
pub fn render_summary_table(reports: &[ModelReport]) -> String {
    let model_width = reports
        .iter()
        .map(|r| r.name.len())
        .chain(std::iter::once("Model".len()))
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<model_width$}  {:>6}  {:>9}  {:>5}  {:>9}  {:>10}\n",
        "Model", "Benign", "Malicious", "Total", "Threshold", "Confidence"
    ));
    out.push_str("-----\n");
    for r in reports {
        out.push_str(&format!(
            "{:<model_width$}  {:>6}  {:>9}  {:>5}  {:>9.3}  {:>10.3}\n",
            r.name, r.benign, r.malicious, r.total, r.threshold, r.avg_confidence
        ));
    }
    out
}

#[cfg(test)]
pub(crate) fn vector_from_row(row: [f64; FEATURE_COUNT]) -> FeatureVector {
    FeatureVector {
        source_ip: "172.18.0.2".into(),
        destination_ip: "172.18.0.5".into(),
        timestamp: 0.0,
        features: row,
        label: None,
    }
}
