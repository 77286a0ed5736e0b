//! Standard scaler fitted on the training partition only.

use std::collections::HashSet;

use crate::error::{Error, Result};

use super::record::Dataset;

/// Per-feature mean and standard deviation. Stds are floored at 1e-8 so
/// constant features map to zero instead of dividing by zero.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub(crate) const STD_FLOOR: f64 = 1e-8;

impl ScalerParams {
    /// Fits per-feature moments over the records whose ids are in
    /// `train_ids`. Population standard deviation (divide by n).
    pub fn fit(dataset: &Dataset, train_ids: &[u64]) -> Result<Self> {
        let dim = dataset.feature_dim();
        let train: HashSet<u64> = train_ids.iter().copied().collect();
        let rows: Vec<&[f64]> = dataset
            .records()
            .iter()
            .filter(|r| train.contains(&r.id))
            .map(|r| r.features.as_slice())
            .collect();
        if rows.is_empty() {
            return Err(Error::Empty(
                "scaler needs a non-empty train partition".into(),
            ));
        }

        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in &rows {
            for (m, x) in mean.iter_mut().zip(*row) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n;
        }

        let mut var = vec![0.0; dim];
        for row in &rows {
            for ((v, x), m) in var.iter_mut().zip(*row).zip(&mean) {
                let d = x - m;
                *v += d * d;
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();

        Ok(Self { mean, std })
    }

    /// Applies `(x - mean) / std` elementwise.
    pub fn apply(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "scaler fitted on {} features, got {}",
                self.mean.len(),
                features.len()
            )));
        }
        Ok(features
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }
}
