//! Checkpoint files: a JSON manifest header followed by the flat
//! little-endian f64 parameter array.
//!
//! Layout: `u64 LE header length | manifest JSON | params`. The manifest
//! carries everything needed to rebuild the model and reproduce
//! evaluation-time retrieval: layer shapes, the fitted scaler and target
//! transform, and the training configuration echo.

use std::io::{Read, Write};
use std::path::Path;

use crate::data::{ScalerParams, TargetTransform};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Variant};
use crate::neural::{DenseStack, LayerShape};
use crate::train::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

/// What a weight snapshot is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointRole {
    /// Final weights, used for the forward pass.
    Final,
    /// Weights at the penultimate refresh; rebuilding the embedding table
    /// with them reproduces the previous-to-last retrieval index.
    RefreshPrev,
    /// Weights at the last refresh (latest-table diagnostics).
    RefreshLast,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub role: CheckpointRole,
    /// Refresh epoch stamp for table-rebuilding roles.
    pub epoch: Option<usize>,
    pub variant: Variant,
    pub feature_dim: usize,
    pub rel_dim: usize,
    pub embed_dim: usize,
    pub encoder_shapes: Vec<LayerShape>,
    pub gate_shapes: Option<Vec<LayerShape>>,
    pub decoder_shapes: Option<Vec<LayerShape>>,
    /// Meaning of each relative-feature slot.
    pub relative_schema: Vec<String>,
    pub transform: TargetTransform,
    pub scaler: ScalerParams,
    pub train_config: TrainConfig,
    pub param_count: usize,
}

/// The relative-feature slots every checkpoint of this crate uses.
pub fn relative_schema() -> Vec<String> {
    vec!["haversine_km".into(), "delta_years".into()]
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &ModelParams,
    scaler: &ScalerParams,
    transform: TargetTransform,
    config: &TrainConfig,
    role: CheckpointRole,
    epoch: Option<usize>,
) -> Result<()> {
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        role,
        epoch,
        variant: model.variant,
        feature_dim: model.feature_dim,
        rel_dim: model.rel_dim,
        embed_dim: model.embed_dim,
        encoder_shapes: model.encoder.shapes(),
        gate_shapes: model.gate.as_ref().map(|g| g.shapes()),
        decoder_shapes: model.decoder.as_ref().map(|d| d.shapes()),
        relative_schema: relative_schema(),
        transform,
        scaler: scaler.clone(),
        train_config: config.clone(),
        param_count: model.param_count(),
    };
    let header = serde_json::to_vec(&manifest)?;
    let flat = model.flatten();

    let mut file = std::fs::File::create(path.as_ref())?;
    file.write_all(&(header.len() as u64).to_le_bytes())?;
    file.write_all(&header)?;
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, CheckpointManifest)> {
    let mut file = std::fs::File::open(path.as_ref())?;
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes).map_err(|_| {
        Error::Schema(format!(
            "{}: truncated checkpoint header",
            path.as_ref().display()
        ))
    })?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    file.read_exact(&mut header).map_err(|_| {
        Error::Schema(format!(
            "{}: truncated checkpoint manifest",
            path.as_ref().display()
        ))
    })?;
    let manifest: CheckpointManifest = serde_json::from_slice(&header)?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::Unsupported(format!(
            "checkpoint format {} (expected {CHECKPOINT_VERSION})",
            manifest.format_version
        )));
    }

    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() != manifest.param_count * 8 {
        return Err(Error::Schema(format!(
            "checkpoint payload holds {} bytes, manifest declares {} parameters",
            payload.len(),
            manifest.param_count
        )));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let encoder = DenseStack::zeros(&manifest.encoder_shapes)?;
    let gate = manifest
        .gate_shapes
        .as_ref()
        .map(|s| DenseStack::zeros(s))
        .transpose()?;
    let decoder = manifest
        .decoder_shapes
        .as_ref()
        .map(|s| DenseStack::zeros(s))
        .transpose()?;
    let mut model = ModelParams {
        variant: manifest.variant,
        feature_dim: manifest.feature_dim,
        rel_dim: manifest.rel_dim,
        embed_dim: manifest.embed_dim,
        encoder,
        gate,
        decoder,
    };
    model.set_flat(&flat)?;
    Ok((model, manifest))
}
