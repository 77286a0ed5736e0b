//! Transaction records and the immutable dataset container.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// One past transaction.
///
/// `date` counts days since 1970-01-01; `features` holds the raw
/// (pre-scaling) attribute vector, whose length is identical across a
/// dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PropertyRecord {
    pub id: u64,
    pub lat: f64,
    pub lon: f64,
    pub date: Option<i64>,
    pub price: f64,
    pub surface: Option<f64>,
    pub features: Vec<f64>,
}

impl PropertyRecord {
    /// Checks the per-record invariants against an expected feature length.
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::InvalidArgument(format!(
                "record {}: latitude {} out of [-90, 90]",
                self.id, self.lat
            )));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::InvalidArgument(format!(
                "record {}: longitude {} out of [-180, 180]",
                self.id, self.lon
            )));
        }
        if !self.price.is_finite() || self.price <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "record {}: price {} must be positive and finite",
                self.id, self.price
            )));
        }
        if let Some(s) = self.surface {
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "record {}: surface {} must be positive and finite",
                    self.id, s
                )));
            }
        }
        if self.features.len() != feature_dim {
            return Err(Error::Dimension(format!(
                "record {}: {} features, dataset has {}",
                self.id,
                self.features.len(),
                feature_dim
            )));
        }
        if self.features.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "record {}: non-finite feature value",
                self.id
            )));
        }
        Ok(())
    }
}

/// Immutable collection of records with unique ids and a fixed feature
/// dimension. Safe to share read-only across threads.
#[derive(Debug, Clone)]
pub struct Dataset {
    records: Vec<PropertyRecord>,
    feature_dim: usize,
    by_id: HashMap<u64, usize>,
}

impl Dataset {
    /// Builds a dataset, enforcing unique ids and uniform feature length.
    /// An empty record list yields an empty dataset with `feature_dim` 0.
    pub fn new(records: Vec<PropertyRecord>) -> Result<Self> {
        let feature_dim = records.first().map_or(0, |r| r.features.len());
        let mut by_id = HashMap::with_capacity(records.len());
        for (idx, rec) in records.iter().enumerate() {
            rec.validate(feature_dim)?;
            if by_id.insert(rec.id, idx).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate id {}", rec.id)));
            }
        }
        Ok(Self {
            records,
            feature_dim,
            by_id,
        })
    }

    pub fn records(&self) -> &[PropertyRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn get(&self, id: u64) -> Option<&PropertyRecord> {
        self.by_id.get(&id).map(|&i| &self.records[i])
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    /// True when every record carries a transaction date.
    pub fn fully_dated(&self) -> bool {
        self.records.iter().all(|r| r.date.is_some())
    }
}
