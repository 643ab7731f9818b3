//! Small synthetic classification sets with label noise.

use rand::Rng;
use rand_distr::StandardNormal;

use super::reweighting::{ReweightingConfig, ReweightingProblem};
use super::sparse::{SparseDataset, SparseRow};
use crate::error::{invalid, Result};
use crate::rng::{stream, StreamKind, StreamRng};

fn linear_labels(rng: &mut StreamRng, n_rows: usize, w_true: &[f64], flip: f64) -> Vec<SparseRow> {
    (0..n_rows)
        .map(|_| {
            let features: Vec<(u32, f64)> = (0..w_true.len())
                .map(|k| (k as u32 + 1, rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let score: f64 = features.iter().zip(w_true).map(|(&(_, v), w)| v * w).sum();
            let mut label = if score >= 0.0 { 1.0 } else { -1.0 };
            if rng.random::<f64>() < flip {
                label = -label;
            }
            SparseRow { label, features }
        })
        .collect()
}

/// `n_rows` Gaussian points labelled by a random hyperplane, each label
/// flipped with probability `label_noise`.
pub fn toy_dataset(n_rows: usize, n_features: usize, label_noise: f64, rng: &mut StreamRng) -> Result<SparseDataset> {
    if n_features == 0 || !(0.0..=1.0).contains(&label_noise) {
        return Err(invalid("toy dataset needs n_features >= 1 and label_noise in [0, 1]"));
    }
    let w_true: Vec<f64> = (0..n_features).map(|_| rng.sample(StandardNormal)).collect();
    SparseDataset::new(linear_labels(rng, n_rows, &w_true, label_noise), n_features)
}

/// Reweighting instance whose training labels are noisy and whose
/// validation labels are clean, both drawn from the same hyperplane.
pub fn toy_reweighting(
    n_train: usize,
    n_val: usize,
    n_features: usize,
    label_noise: f64,
    seed: u64,
    config: ReweightingConfig,
) -> Result<ReweightingProblem> {
    if n_features == 0 || !(0.0..=1.0).contains(&label_noise) {
        return Err(invalid("toy dataset needs n_features >= 1 and label_noise in [0, 1]"));
    }
    let mut rng = stream(seed, 0, 0, StreamKind::Problem);
    let w_true: Vec<f64> = (0..n_features).map(|_| rng.sample(StandardNormal)).collect();
    let train = SparseDataset::new(linear_labels(&mut rng, n_train, &w_true, label_noise), n_features)?;
    let val = SparseDataset::new(linear_labels(&mut rng, n_val, &w_true, 0.0), n_features)?;
    ReweightingProblem::new(train, val, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let a = toy_reweighting(20, 10, 10, 0.3, 4, ReweightingConfig::default()).unwrap();
        let b = toy_reweighting(20, 10, 10, 0.3, 4, ReweightingConfig::default()).unwrap();
        assert_eq!(a.train(), b.train());
        assert_eq!(a.train().n_rows(), 20);
        assert_eq!(a.validation().n_rows(), 10);
        assert_eq!(a.n_features(), 10);
    }

    #[test]
    fn full_noise_flips_every_label() {
        let mut r1 = stream(1, 0, 0, StreamKind::Problem);
        let mut r2 = stream(1, 0, 0, StreamKind::Problem);
        let clean = toy_dataset(50, 3, 0.0, &mut r1).unwrap();
        let flipped = toy_dataset(50, 3, 1.0, &mut r2).unwrap();
        for (a, b) in clean.rows.iter().zip(&flipped.rows) {
            assert_eq!(a.label, -b.label);
        }
    }
}
