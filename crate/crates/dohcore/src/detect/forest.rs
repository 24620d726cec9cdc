//! Random forest of Gini-greedy binary trees over bootstrap resamples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DetectError, Label, LabeledDataset};
use crate::flowmeter::FEATURE_COUNT;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Random features considered per split.
    pub features_per_split: usize,
    /// Fit each tree on a bootstrap resample; turning this off fits every
    /// tree on the full training set.
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 10,
            min_leaf: 1,
            features_per_split: (FEATURE_COUNT as f64).sqrt().ceil() as usize,
            bootstrap: true,
        }
    }
}

/// Binary decision tree node; splits send `value <= threshold` left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        probability: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    fn probability_for(&self, row: &[f64; FEATURE_COUNT]) -> f64 {
        match self {
            TreeNode::Leaf { probability } => *probability,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if row[*feature] <= *threshold {
                    left.probability_for(row)
                } else {
                    right.probability_for(row)
                }
            }
        }
    }
}

/// Tree ensemble scoring the mean leaf probability across trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
}

impl ForestModel {
    pub fn score_row(&self, row: &[f64; FEATURE_COUNT]) -> f64 {
        if self.trees.is_empty() {
            return 0.5;
        }
        let sum: f64 = self.trees.iter().map(|t| t.probability_for(row)).sum();
        sum / self.trees.len() as f64
    }
}

fn gini(malicious: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = malicious as f64 / total as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

fn grow(
    d: &LabeledDataset,
    indices: &[usize],
    depth: usize,
    cfg: &ForestConfig,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let malicious = indices
        .iter()
        .filter(|i| d.labels[**i] == Label::Malicious)
        .count();
    let total = indices.len();
    let probability = malicious as f64 / total as f64;
    if depth >= cfg.max_depth
        || malicious == 0
        || malicious == total
        || total < 2 * cfg.min_leaf
    {
        return TreeNode::Leaf { probability };
    }

    let m = cfg.features_per_split.clamp(1, FEATURE_COUNT);
    let candidates = rand::seq::index::sample(rng, FEATURE_COUNT, m);

    // The best split is the lowest weighted Gini impurity; zero-gain splits
    // are still taken so structure like XOR can resolve at deeper levels.
    let mut best: Option<(f64, usize, f64)> = None;
    for feature in candidates {
        let mut values: Vec<(f64, bool)> = indices
            .iter()
            .map(|i| (d.rows[*i][feature], d.labels[*i] == Label::Malicious))
            .collect();
        values.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_malicious = 0usize;
        for i in 0..total - 1 {
            if values[i].1 {
                left_malicious += 1;
            }
            if values[i].0 >= values[i + 1].0 {
                continue;
            }
            let left_n = i + 1;
            let right_n = total - left_n;
            if left_n < cfg.min_leaf || right_n < cfg.min_leaf {
                continue;
            }
            let weighted = (left_n as f64 * gini(left_malicious, left_n)
                + right_n as f64 * gini(malicious - left_malicious, right_n))
                / total as f64;
            if best.is_none() || weighted < best.unwrap().0 {
                best = Some((weighted, feature, values[i].0));
            }
        }
    }

    let Some((_, feature, threshold)) = best else {
        return TreeNode::Leaf { probability };
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|i| d.rows[**i][feature] <= threshold);
    TreeNode::Split {
        feature,
        threshold,
        left: Box::new(grow(d, &left_idx, depth + 1, cfg, rng)),
        right: Box::new(grow(d, &right_idx, depth + 1, cfg, rng)),
    }
}

/// Train a random forest; deterministic given the seed.
pub fn train_forest(
    d: &LabeledDataset,
    cfg: &ForestConfig,
    seed: u64,
) -> Result<ForestModel, DetectError> {
    let counts = d.counts();
    if counts.benign == 0 || counts.malicious == 0 {
        return Err(DetectError::DegenerateClass(
            "training requires both classes".into(),
        ));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let n = d.len();
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for _ in 0..cfg.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
        let indices: Vec<usize> = if cfg.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        trees.push(grow(d, &indices, 0, cfg, &mut rng));
    }
    Ok(ForestModel { trees })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{train_logreg, LogRegConfig};
    use proptest::prelude::*;

    fn xor_dataset(jitter: f64) -> LabeledDataset {
        let mut d = LabeledDataset::new();
        for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            let label = if (a > 0.5) != (b > 0.5) {
                Label::Malicious
            } else {
                Label::Benign
            };
            for i in 0..40 {
                let mut row = [0.0; FEATURE_COUNT];
                row[0] = a + jitter * (i as f64 / 40.0 - 0.5);
                row[1] = b + jitter * (i as f64 / 40.0 - 0.5);
                d.push(row, label);
            }
        }
        d
    }

    fn accuracy(d: &LabeledDataset, score: impl Fn(&[f64; FEATURE_COUNT]) -> f64) -> f64 {
        let correct = d
            .rows
            .iter()
            .zip(&d.labels)
            .filter(|(row, label)| {
                let predicted = if score(row) >= 0.5 {
                    Label::Malicious
                } else {
                    Label::Benign
                };
                predicted == **label
            })
            .count();
        correct as f64 / d.len() as f64
    }

    #[test]
    fn depth_zero_tree_predicts_the_class_prior() {
        let mut d = LabeledDataset::new();
        for i in 0..10 {
            let label = if i < 3 { Label::Malicious } else { Label::Benign };
            d.push([i as f64; FEATURE_COUNT], label);
        }
        let cfg = ForestConfig {
            n_trees: 1,
            max_depth: 0,
            bootstrap: false,
            ..Default::default()
        };
        let model = train_forest(&d, &cfg, 1).unwrap();
        assert_eq!(model.score_row(&[0.0; FEATURE_COUNT]), 0.3);
        assert_eq!(model.score_row(&[99.0; FEATURE_COUNT]), 0.3);
    }

    #[test]
    fn xor_resolves_at_depth_two_where_linear_cannot() {
        let d = xor_dataset(0.0);
        let cfg = ForestConfig {
            n_trees: 5,
            max_depth: 2,
            min_leaf: 1,
            features_per_split: FEATURE_COUNT,
            bootstrap: false,
        };
        let forest = train_forest(&d, &cfg, 3).unwrap();
        assert_eq!(accuracy(&d, |row| forest.score_row(row)), 1.0);

        let linear = train_logreg(&d, &LogRegConfig::default()).unwrap();
        assert!(accuracy(&d, |row| linear.score_row(row)) <= 0.75);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let d = xor_dataset(0.3);
        let cfg = ForestConfig {
            n_trees: 7,
            max_depth: 4,
            ..Default::default()
        };
        let a = train_forest(&d, &cfg, 11).unwrap();
        let b = train_forest(&d, &cfg, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn predictions_are_invariant_under_monotone_feature_transforms() {
        let d = xor_dataset(0.4);
        let mut transformed = d.clone();
        for row in &mut transformed.rows {
            row[1] = row[1].exp();
        }
        let cfg = ForestConfig {
            n_trees: 10,
            max_depth: 5,
            ..Default::default()
        };
        let plain = train_forest(&d, &cfg, 5).unwrap();
        let warped = train_forest(&transformed, &cfg, 5).unwrap();
        for (row, twisted) in d.rows.iter().zip(&transformed.rows) {
            assert_eq!(plain.score_row(row), warped.score_row(twisted));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn leaf_probabilities_stay_within_bounds(
            seed in 0u64..1000,
            rows in proptest::collection::vec(
                (proptest::collection::vec(-5.0f64..5.0, FEATURE_COUNT), any::<bool>()),
                4..40,
            ),
        ) {
            let mut d = LabeledDataset::new();
            for (values, malicious) in &rows {
                let mut row = [0.0; FEATURE_COUNT];
                row.copy_from_slice(values);
                d.push(row, if *malicious { Label::Malicious } else { Label::Benign });
            }
            let counts = d.counts();
            prop_assume!(counts.benign > 0 && counts.malicious > 0);
            let cfg = ForestConfig { n_trees: 5, max_depth: 3, ..Default::default() };
            let model = train_forest(&d, &cfg, seed).unwrap();
            for row in &d.rows {
                let p = model.score_row(row);
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }
}
