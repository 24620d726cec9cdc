//! Logistic regression with feature standardization, trained by full-batch
//! gradient descent on L2-regularized cross-entropy.

use serde::{Deserialize, Serialize};

use super::{DetectError, Label, LabeledDataset};
use crate::flowmeter::FEATURE_COUNT;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            learning_rate: 0.1,
            epochs: 400,
            l2: 1e-4,
        }
    }
}

/// Linear classifier emitting malicious probability through the logistic
/// function, with the training set's standardization baked in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: [f64; FEATURE_COUNT],
    pub bias: f64,
    pub means: [f64; FEATURE_COUNT],
    pub stds: [f64; FEATURE_COUNT],
}

impl LinearModel {
    /// All-zero weights and bias: probability 0.5 everywhere.
    pub fn zeroed() -> Self {
        LinearModel {
            weights: [0.0; FEATURE_COUNT],
            bias: 0.0,
            means: [0.0; FEATURE_COUNT],
            stds: [1.0; FEATURE_COUNT],
        }
    }

    fn standardize(&self, row: &[f64; FEATURE_COUNT]) -> [f64; FEATURE_COUNT] {
        let mut out = [0.0; FEATURE_COUNT];
        for i in 0..FEATURE_COUNT {
            if self.stds[i] > 0.0 {
                out[i] = (row[i] - self.means[i]) / self.stds[i];
            }
        }
        out
    }

    pub fn score_row(&self, row: &[f64; FEATURE_COUNT]) -> f64 {
        let x = self.standardize(row);
        let z: f64 = self
            .weights
            .iter()
            .zip(&x)
            .map(|(w, v)| w * v)
            .sum::<f64>()
            + self.bias;
        sigmoid(z)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Regularized cross-entropy loss and its analytic gradient over
/// standardized rows. The bias is not regularized.
pub fn logreg_loss_and_gradient(
    rows: &[[f64; FEATURE_COUNT]],
    targets: &[f64],
    weights: &[f64; FEATURE_COUNT],
    bias: f64,
    l2: f64,
) -> (f64, [f64; FEATURE_COUNT], f64) {
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut grad_w = [0.0; FEATURE_COUNT];
    let mut grad_b = 0.0;
    for (row, y) in rows.iter().zip(targets) {
        let z: f64 = weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>() + bias;
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        let err = sigmoid(z) - y;
        for (g, v) in grad_w.iter_mut().zip(row) {
            *g += err * v;
        }
        grad_b += err;
    }
    loss /= n;
    grad_b /= n;
    for (g, w) in grad_w.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    loss += 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    (loss, grad_w, grad_b)
}

/// Train a logistic-regression model. Features with zero variance in the
/// training set are neutralized by the standardization.
pub fn train_logreg(d: &LabeledDataset, cfg: &LogRegConfig) -> Result<LinearModel, DetectError> {
    let counts = d.counts();
    if counts.benign == 0 || counts.malicious == 0 {
        return Err(DetectError::DegenerateClass(
            "training requires both classes".into(),
        ));
    }
    if d.rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(DetectError::NonFinite);
    }
    let n = d.len() as f64;
    let mut means = [0.0; FEATURE_COUNT];
    let mut stds = [0.0; FEATURE_COUNT];
    for row in &d.rows {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    for row in &d.rows {
        for i in 0..FEATURE_COUNT {
            stds[i] += (row[i] - means[i]).powi(2);
        }
    }
    for s in &mut stds {
        *s = (*s / n).sqrt();
    }

    let mut model = LinearModel {
        weights: [0.0; FEATURE_COUNT],
        bias: 0.0,
        means,
        stds,
    };
    let rows: Vec<[f64; FEATURE_COUNT]> = d.rows.iter().map(|r| model.standardize(r)).collect();
    let targets: Vec<f64> = d
        .labels
        .iter()
        .map(|l| if *l == Label::Malicious { 1.0 } else { 0.0 })
        .collect();

    for _ in 0..cfg.epochs {
        let (loss, grad_w, grad_b) =
            logreg_loss_and_gradient(&rows, &targets, &model.weights, model.bias, cfg.l2);
        if !loss.is_finite() {
            return Err(DetectError::NonFinite);
        }
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= cfg.learning_rate * g;
        }
        model.bias -= cfg.learning_rate * grad_b;
    }
    if !model.bias.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
        return Err(DetectError::NonFinite);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable_dataset(n_per_class: usize, seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = LabeledDataset::new();
        for class in [Label::Benign, Label::Malicious] {
            let center = if class == Label::Malicious { 3.0 } else { -3.0 };
            for _ in 0..n_per_class {
                let mut row = [0.0; FEATURE_COUNT];
                for v in row.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                row[3] = center + rng.gen_range(-0.5..0.5);
                d.push(row, class);
            }
        }
        d
    }

    #[test]
    fn zero_model_scores_one_half_everywhere() {
        let model = LinearModel::zeroed();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mut row = [0.0; FEATURE_COUNT];
            for v in row.iter_mut() {
                *v = rng.gen_range(-1e4..1e4);
            }
            assert_eq!(model.score_row(&row), 0.5);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let rows: Vec<[f64; FEATURE_COUNT]> = (0..10)
            .map(|_| {
                let mut row = [0.0; FEATURE_COUNT];
                for v in row.iter_mut() {
                    *v = rng.gen_range(-2.0..2.0);
                }
                row
            })
            .collect();
        let targets: Vec<f64> = (0..10).map(|_| f64::from(rng.gen_range(0..2))).collect();
        let mut weights = [0.0; FEATURE_COUNT];
        for w in weights.iter_mut() {
            *w = rng.gen_range(-1.0..1.0);
        }
        let bias = rng.gen_range(-1.0..1.0);
        let l2 = 0.01;

        let (_, grad_w, grad_b) = logreg_loss_and_gradient(&rows, &targets, &weights, bias, l2);
        let eps = 1e-5;
        let loss_at = |weights: &[f64; FEATURE_COUNT], bias: f64| {
            logreg_loss_and_gradient(&rows, &targets, weights, bias, l2).0
        };
        let check = |analytic: f64, numeric: f64, what: &str| {
            let scale = analytic.abs().max(numeric.abs()).max(1e-4);
            assert!(
                (analytic - numeric).abs() / scale <= 1e-5,
                "{what}: analytic {analytic}, numeric {numeric}"
            );
        };
        for i in 0..FEATURE_COUNT {
            let mut plus = weights;
            plus[i] += eps;
            let mut minus = weights;
            minus[i] -= eps;
            let numeric = (loss_at(&plus, bias) - loss_at(&minus, bias)) / (2.0 * eps);
            check(grad_w[i], numeric, &format!("weight {i}"));
        }
        let numeric = (loss_at(&weights, bias + eps) - loss_at(&weights, bias - eps)) / (2.0 * eps);
        check(grad_b, numeric, "bias");
    }

    #[test]
    fn separable_clusters_train_to_high_accuracy() {
        let d = separable_dataset(100, 7);
        let model = train_logreg(&d, &LogRegConfig::default()).unwrap();
        let correct = d
            .rows
            .iter()
            .zip(&d.labels)
            .filter(|(row, label)| {
                let predicted = if model.score_row(row) >= 0.5 {
                    Label::Malicious
                } else {
                    Label::Benign
                };
                predicted == **label
            })
            .count();
        assert!(correct as f64 / d.len() as f64 >= 0.99);
    }

    #[test]
    fn training_loss_decreases() {
        let d = separable_dataset(50, 9);
        let short = train_logreg(
            &d,
            &LogRegConfig {
                epochs: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let long = train_logreg(&d, &LogRegConfig::default()).unwrap();
        let loss_of = |m: &LinearModel| {
            let rows: Vec<_> = d.rows.iter().map(|r| m.standardize(r)).collect();
            let targets: Vec<f64> = d
                .labels
                .iter()
                .map(|l| if *l == Label::Malicious { 1.0 } else { 0.0 })
                .collect();
            logreg_loss_and_gradient(&rows, &targets, &m.weights, m.bias, 1e-4).0
        };
        assert!(loss_of(&long) < loss_of(&short));
    }

    #[test]
    fn non_finite_input_is_reported() {
        let mut d = separable_dataset(5, 3);
        d.rows[0][0] = f64::INFINITY;
        assert!(matches!(
            train_logreg(&d, &LogRegConfig::default()),
            Err(DetectError::NonFinite)
        ));
    }

    #[test]
    fn single_class_input_is_rejected() {
        let mut d = LabeledDataset::new();
        d.push([0.0; FEATURE_COUNT], Label::Benign);
        d.push([1.0; FEATURE_COUNT], Label::Benign);
        assert!(matches!(
            train_logreg(&d, &LogRegConfig::default()),
            Err(DetectError::DegenerateClass(_))
        ));
    }

    #[test]
    fn constant_features_are_neutralized() {
        let mut d = separable_dataset(30, 11);
        for row in &mut d.rows {
            row[7] = 42.0;
        }
        let model = train_logreg(&d, &LogRegConfig::default()).unwrap();
        let mut probe = d.rows[0];
        let base = model.score_row(&probe);
        probe[7] = -1e6;
        assert_eq!(model.score_row(&probe), base);
    }
}
