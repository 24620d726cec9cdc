//! Prediction command: scores a feature CSV with every model bundle in a
//! directory and renders the predictor log.

use std::fs;
use std::io::{BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use dohcore::detect::{
    load_feature_csv, load_models_dir, predict_all, render_summary_table, ModelBundle,
    ModelReport,
};

use crate::timefmt::info_line;

/// Writes the predictor log for one scoring pass: model load lines, data
/// provenance, per-model prediction blocks, and the aligned summary table.
///
/// Every line up to the summary carries a `timestamp - INFO -` prefix; the
/// summary table itself is rendered bare, separated by one empty INFO line.
pub fn render_prediction_log(
    bundles: &[ModelBundle],
    models_dir: &Path,
    data_path: &Path,
    dropped_rows: usize,
    reports: &[ModelReport],
    epoch: f64,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    let info = |out: &mut dyn Write, msg: &str| writeln!(out, "{}", info_line(epoch, msg));
    for bundle in bundles {
        if bundle.is_rule() {
            let path = models_dir.join(format!("{}_model.json", bundle.name));
            info(
                out,
                &format!("Loaded DoHXP rule-based model from {}", path.display()),
            )?;
        } else {
            info(out, &format!("Loaded model: {}", bundle.name))?;
        }
    }
    info(out, &format!("Loading data: {}", data_path.display()))?;
    if dropped_rows > 0 {
        info(
            out,
            &format!("Dropped {dropped_rows} rows with missing or invalid values"),
        )?;
    }
    info(out, "Features used: 31/31")?;
    info(out, "=== PREDICTIONS ===")?;
    for report in reports {
        info(out, &format!("{}:", report.name.to_uppercase()))?;
        info(out, &format!("- Benign: {}", report.benign))?;
        info(out, &format!("- Malicious: {}", report.malicious))?;
        info(
            out,
            &format!("- Threshold applied: {:.3}", report.threshold),
        )?;
        info(
            out,
            &format!("- Avg confidence: {:.3}", report.avg_confidence),
        )?;
    }
    info(out, "")?;
    writeln!(out, "=== SUMMARY OF PREDICTIONS ===")?;
    writeln!(out)?;
    write!(out, "{}", render_summary_table(reports))?;
    Ok(())
}

/// Loads models and a feature CSV, scores every row with every model, and
/// writes the predictor log to `out`. Returns the per-model reports.
pub fn predict_command(
    models_dir: &Path,
    csv_path: &Path,
    epoch: f64,
    out: &mut dyn Write,
) -> Result<Vec<ModelReport>> {
    let bundles = load_models_dir(models_dir)
        .with_context(|| format!("loading models from {}", models_dir.display()))?;
    if bundles.is_empty() {
        bail!("no models found in {}", models_dir.display());
    }
    let file = fs::File::open(csv_path)
        .with_context(|| format!("opening {}", csv_path.display()))?;
    let load = load_feature_csv(BufReader::new(file))
        .with_context(|| format!("loading {}", csv_path.display()))?;
    let reports = predict_all(&bundles, &load.vectors).context("scoring flows")?;
    render_prediction_log(
        &bundles,
        models_dir,
        csv_path,
        load.dropped_rows,
        &reports,
        epoch,
        out,
    )?;
    Ok(reports)
}
