//! Target value definition and its inverse.

use crate::error::{Error, Result};

use super::record::PropertyRecord;

/// What the model regresses on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// v = ln(price) / scale
    LogPrice,
    /// v = ln(price / surface) / scale — used when a surface column exists
    /// and errors should be reported per square meter.
    LogPricePerSqm,
}

/// Invertible map from a transaction to the regression target v.
///
/// `scale` is 1.0 for the minimal model; the extended model divides by the
/// mean train-set log value so v stays strictly positive and the
/// multiplicative adjustment band remains well conditioned.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TargetTransform {
    pub kind: TargetKind,
    pub scale: f64,
}

impl TargetTransform {
    pub fn new(kind: TargetKind, scale: f64) -> Result<Self> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "transform scale {scale} must be positive and finite"
            )));
        }
        Ok(Self { kind, scale })
    }

    /// Scale 1.0 (no normalization).
    pub fn plain(kind: TargetKind) -> Self {
        Self { kind, scale: 1.0 }
    }

    /// Fits the normalization divisor as the mean log value over `records`
    /// (the train partition).
    pub fn fit_normalized<'a>(
        kind: TargetKind,
        records: impl IntoIterator<Item = &'a PropertyRecord>,
    ) -> Result<Self> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for rec in records {
            sum += Self::plain(kind).apply(rec)?;
            n += 1;
        }
        if n == 0 {
            return Err(Error::Empty(
                "cannot fit transform on empty train set".into(),
            ));
        }
        let mean = sum / n as f64;
        if mean.is_nan() || mean <= 0.0 {
            return Err(Error::Numerical(format!(
                "mean train log value {mean} is not positive; normalization undefined"
            )));
        }
        Self::new(kind, mean)
    }

    /// Unit value the metrics are reported in: raw price for `LogPrice`,
    /// price per square meter for `LogPricePerSqm`.
    pub fn unit_truth(&self, record: &PropertyRecord) -> Result<f64> {
        match self.kind {
            TargetKind::LogPrice => Ok(record.price),
            TargetKind::LogPricePerSqm => {
                let surface = record.surface.ok_or_else(|| {
                    Error::Unsupported(format!(
                        "record {} has no surface; per-sqm target unavailable",
                        record.id
                    ))
                })?;
                Ok(record.price / surface)
            }
        }
    }

    /// Transforms a record's price into target space.
    pub fn apply(&self, record: &PropertyRecord) -> Result<f64> {
        Ok(self.unit_truth(record)?.ln() / self.scale)
    }

    /// Inverse of [`apply`](Self::apply) into the metric unit space
    /// (price, or price per square meter).
    pub fn unit_value(&self, v: f64) -> f64 {
        (v * self.scale).exp()
    }

    /// Recovers the full price from a target value, given the surface when
    /// the target is per square meter.
    pub fn invert(&self, v: f64, surface: Option<f64>) -> Result<f64> {
        match self.kind {
            TargetKind::LogPrice => Ok(self.unit_value(v)),
            TargetKind::LogPricePerSqm => {
                let s = surface.ok_or_else(|| {
                    Error::Unsupported("surface required to invert a per-sqm target".into())
                })?;
                Ok(self.unit_value(v) * s)
            }
        }
    }
}
