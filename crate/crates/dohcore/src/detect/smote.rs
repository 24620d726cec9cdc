//! Synthetic minority oversampling: new minority rows are interpolated
//! between a minority row and one of its nearest same-class neighbors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DetectError, LabeledDataset};
use crate::flowmeter::FEATURE_COUNT;

/// Oversample the minority class up to the majority count. Neighbor
/// distances are Euclidean over features standardized on the full dataset;
/// interpolation happens in the original feature space. `k` shrinks to the
/// available neighbor count for tiny classes.
pub fn smote_balance(
    d: &LabeledDataset,
    k: usize,
    seed: u64,
) -> Result<LabeledDataset, DetectError> {
    let counts = d.counts();
    if counts.benign == counts.malicious {
        return Ok(d.clone());
    }
    let minority_label = if counts.benign < counts.malicious {
        super::Label::Benign
    } else {
        super::Label::Malicious
    };
    let minority: Vec<usize> = (0..d.len())
        .filter(|i| d.labels[*i] == minority_label)
        .collect();
    if minority.len() < 2 {
        return Err(DetectError::DegenerateClass(format!(
            "{} {} rows, need at least 2 to interpolate",
            minority.len(),
            minority_label
        )));
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
    let standardized: Vec<[f64; FEATURE_COUNT]> = minority
        .iter()
        .map(|i| {
            let mut out = [0.0; FEATURE_COUNT];
            for (j, v) in d.rows[*i].iter().enumerate() {
                if stds[j] > 0.0 {
                    out[j] = (v - means[j]) / stds[j];
                }
            }
            out
        })
        .collect();

    let k = k.min(minority.len() - 1).max(1);
    let neighbors: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| {
            let mut by_distance: Vec<(f64, usize)> = (0..minority.len())
                .filter(|j| *j != i)
                .map(|j| {
                    let dist: f64 = standardized[i]
                        .iter()
                        .zip(&standardized[j])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    (dist, j)
                })
                .collect();
            by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            by_distance.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();

    let mut out = d.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let needed = counts.benign.abs_diff(counts.malicious);
    for _ in 0..needed {
        let base = rng.gen_range(0..minority.len());
        let nn = neighbors[base][rng.gen_range(0..k)];
        let lambda: f64 = rng.gen();
        let a = &d.rows[minority[base]];
        let b = &d.rows[minority[nn]];
        let mut synthetic = [0.0; FEATURE_COUNT];
        for i in 0..FEATURE_COUNT {
            synthetic[i] = a[i] + lambda * (b[i] - a[i]);
        }
        out.push(synthetic, minority_label);
    }
    Ok(out)
}
