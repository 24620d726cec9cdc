//! Training command: loads labelled feature CSVs, balances the training
//! split, fits the classifiers, calibrates their cutoffs to a target false
//! positive rate, and writes model bundles plus summary files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use dohcore::detect::{
    calibrate_cutoff, load_feature_csv, save_bundle, smote_balance, train_forest, train_logreg,
    BundleMetadata, ForestConfig, Label, LabelCounts, LabeledDataset, LogRegConfig, ModelBundle,
    ModelKind, ValidationMetrics,
};

/// Knobs for one training run.
pub struct TrainOptions {
    /// Target false positive rate as a fraction (0.01 means 1%).
    pub target_fpr: f64,
    pub seed: u64,
    /// Neighbour count for minority oversampling.
    pub smote_k: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            target_fpr: 0.01,
            seed: 0,
            smote_k: 5,
        }
    }
}

/// One trained model as written to disk.
pub struct ModelSummary {
    pub name: String,
    pub path: PathBuf,
    pub cutoff: f64,
    pub validation: ValidationMetrics,
    pub test: ValidationMetrics,
}

/// Everything a training run produced.
pub struct TrainSummary {
    pub models: Vec<ModelSummary>,
    pub rows: usize,
    pub dropped_rows: usize,
    pub unlabeled_rows: usize,
    pub train_counts: LabelCounts,
    pub balanced_counts: LabelCounts,
    pub validation_rows: usize,
    pub test_rows: usize,
}

/// Fraction of rows used for training; the remainder is split evenly
/// between validation (cutoff calibration) and held-out test.
const TRAIN_FRACTION: f64 = 0.70;
const VALIDATION_FRACTION: f64 = 0.15;

/// Accuracy, detection rate, and false positive rate of `model` at `cutoff`.
fn evaluate(model: &ModelKind, cutoff: f64, data: &LabeledDataset) -> Result<ValidationMetrics> {
    let mut correct = 0usize;
    let mut true_positives = 0usize;
    let mut false_positives = 0usize;
    let counts = data.counts();
    for (row, label) in data.rows.iter().zip(&data.labels) {
        let malicious = model.score_row(row)? >= cutoff;
        let predicted = if malicious {
            Label::Malicious
        } else {
            Label::Benign
        };
        if predicted == *label {
            correct += 1;
        }
        if malicious && *label == Label::Malicious {
            true_positives += 1;
        }
        if malicious && *label == Label::Benign {
            false_positives += 1;
        }
    }
    let n = data.len().max(1);
    Ok(ValidationMetrics {
        accuracy: correct as f64 / n as f64,
        detection_rate: if counts.malicious > 0 {
            true_positives as f64 / counts.malicious as f64
        } else {
            0.0
        },
        fpr_percent: if counts.benign > 0 {
            100.0 * false_positives as f64 / counts.benign as f64
        } else {
            0.0
        },
    })
}

/// Scores every row of `data` with `model`, in row order.
fn score_rows(model: &ModelKind, data: &LabeledDataset) -> Result<Vec<f64>> {
    data.rows
        .iter()
        .map(|row| model.score_row(row).map_err(Into::into))
        .collect()
}

/// Trains the logistic regression and random forest models from the given
/// feature CSVs and writes `<name>_model.json` bundles, `thresholds.json`,
/// and `metadata.json` into `out_dir`. Progress lines go to `log`.
pub fn train_command(
    csv_paths: &[PathBuf],
    out_dir: &Path,
    opts: &TrainOptions,
    log: &mut dyn Write,
) -> Result<TrainSummary> {
    if csv_paths.is_empty() {
        bail!("no training CSVs given");
    }
    let mut vectors = Vec::new();
    let mut dropped_rows = 0usize;
    for path in csv_paths {
        let file =
            fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let load = load_feature_csv(BufReader::new(file))
            .with_context(|| format!("loading {}", path.display()))?;
        dropped_rows += load.dropped_rows;
        vectors.extend(load.vectors);
    }
    let (dataset, unlabeled_rows) = LabeledDataset::from_vectors(&vectors);
    let counts = dataset.counts();
    if counts.benign == 0 || counts.malicious == 0 {
        bail!(
            "training data needs both classes (benign: {}, malicious: {})",
            counts.benign,
            counts.malicious
        );
    }
    writeln!(
        log,
        "Loaded {} labelled rows ({} dropped, {} unlabelled): benign {}, malicious {}",
        dataset.len(),
        dropped_rows,
        unlabeled_rows,
        counts.benign,
        counts.malicious
    )?;

    let (train, validation, test) = dataset.split(TRAIN_FRACTION, VALIDATION_FRACTION, opts.seed);
    let train_counts = train.counts();
    let balanced = smote_balance(&train, opts.smote_k, opts.seed).context("balancing classes")?;
    let balanced_counts = balanced.counts();
    writeln!(
        log,
        "Split {} train / {} validation / {} test; balanced training set: benign {}, malicious {}",
        train.len(),
        validation.len(),
        test.len(),
        balanced_counts.benign,
        balanced_counts.malicious
    )?;

    let logreg_cfg = LogRegConfig::default();
    let forest_cfg = ForestConfig::default();
    let candidates: Vec<(&str, ModelKind, serde_json::Value)> = vec![
        (
            "logistic_regression",
            ModelKind::Linear(Box::new(
                train_logreg(&balanced, &logreg_cfg).context("training logistic regression")?,
            )),
            json!({
                "algorithm": "logistic_regression",
                "learning_rate": logreg_cfg.learning_rate,
                "epochs": logreg_cfg.epochs,
                "l2": logreg_cfg.l2,
            }),
        ),
        (
            "random_forest",
            ModelKind::Forest(
                train_forest(&balanced, &forest_cfg, opts.seed).context("training random forest")?,
            ),
            json!({
                "algorithm": "random_forest",
                "n_trees": forest_cfg.n_trees,
                "max_depth": forest_cfg.max_depth,
                "min_leaf": forest_cfg.min_leaf,
                "features_per_split": forest_cfg.features_per_split,
                "bootstrap": forest_cfg.bootstrap,
            }),
        ),
    ];

    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut models = Vec::new();
    let mut thresholds = BTreeMap::new();
    for (name, model, mut training_meta) in candidates {
        let scores = score_rows(&model, &validation)?;
        let cutoff = calibrate_cutoff(&scores, &validation.labels, opts.target_fpr)
            .with_context(|| format!("calibrating cutoff for {name}"))?;
        let validation_metrics = evaluate(&model, cutoff, &validation)?;
        let test_metrics = evaluate(&model, cutoff, &test)?;
        if let Some(obj) = training_meta.as_object_mut() {
            obj.insert("seed".into(), json!(opts.seed));
            obj.insert("target_fpr".into(), json!(opts.target_fpr));
            obj.insert("smote_k".into(), json!(opts.smote_k));
            obj.insert(
                "split".into(),
                json!([TRAIN_FRACTION, VALIDATION_FRACTION, VALIDATION_FRACTION]),
            );
        }
        let bundle = ModelBundle {
            name: name.to_string(),
            model,
            cutoff,
            metadata: BundleMetadata {
                training: training_meta,
                class_counts: Some(balanced_counts),
                validation: Some(validation_metrics),
            },
        };
        let path = out_dir.join(format!("{name}_model.json"));
        save_bundle(&bundle, &path).with_context(|| format!("writing {}", path.display()))?;
        writeln!(
            log,
            "{name}: cutoff {cutoff:.3}, test accuracy {:.3}, detection rate {:.3}, FPR {:.1}%",
            test_metrics.accuracy, test_metrics.detection_rate, test_metrics.fpr_percent
        )?;
        thresholds.insert(name.to_string(), cutoff);
        models.push(ModelSummary {
            name: name.to_string(),
            path,
            cutoff,
            validation: validation_metrics,
            test: test_metrics,
        });
    }

    let thresholds_path = out_dir.join("thresholds.json");
    fs::write(
        &thresholds_path,
        serde_json::to_string_pretty(&thresholds)? + "\n",
    )
    .with_context(|| format!("writing {}", thresholds_path.display()))?;

    let mut model_meta = BTreeMap::new();
    for m in &models {
        model_meta.insert(
            m.name.clone(),
            json!({
                "cutoff": m.cutoff,
                "validation": {
                    "accuracy": m.validation.accuracy,
                    "detection_rate": m.validation.detection_rate,
                    "fpr_percent": m.validation.fpr_percent,
                },
                "test": {
                    "accuracy": m.test.accuracy,
                    "detection_rate": m.test.detection_rate,
                    "fpr_percent": m.test.fpr_percent,
                },
            }),
        );
    }
    let metadata = json!({
        "seed": opts.seed,
        "target_fpr": opts.target_fpr,
        "smote_k": opts.smote_k,
        "rows": dataset.len(),
        "dropped_rows": dropped_rows,
        "unlabelled_rows": unlabeled_rows,
        "class_counts": { "benign": counts.benign, "malicious": counts.malicious },
        "balanced_counts": {
            "benign": balanced_counts.benign,
            "malicious": balanced_counts.malicious,
        },
        "models": model_meta,
    });
    let metadata_path = out_dir.join("metadata.json");
    fs::write(
        &metadata_path,
        serde_json::to_string_pretty(&metadata)? + "\n",
    )
    .with_context(|| format!("writing {}", metadata_path.display()))?;
    writeln!(log, "Models written to {}", out_dir.display())?;

    Ok(TrainSummary {
        models,
        rows: dataset.len(),
        dropped_rows,
        unlabeled_rows,
        train_counts,
        balanced_counts,
        validation_rows: validation.len(),
        test_rows: test.len(),
    })
}
