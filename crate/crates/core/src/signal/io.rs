//! Dataset manifests (JSON) and raw IQ payload files (little-endian `f32`,
//! interleaved I then Q).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetRole, EmitterId, IqSignal, SignalDataset};
use crate::error::{CashError, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Path relative to the manifest's directory.
    pub file: String,
    pub emitter_id: EmitterId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub sample_rate_hz: f64,
    pub records: Vec<ManifestRecord>,
}

fn read_iq_file(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| CashError::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(CashError::Malformed {
            path: path.into(),
            reason: format!("{} bytes is not a whole number of f32 values", bytes.len()),
        });
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    if values.len() % 2 != 0 {
        return Err(CashError::Malformed {
            path: path.into(),
            reason: format!("odd float count {} (truncated I/Q pair)", values.len()),
        });
    }
    Ok(values)
}

pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<SignalDataset> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| CashError::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(CashError::Version { what: "manifest", found: manifest.version });
    }
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut signals = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let path = root.join(&rec.file);
        let values = read_iq_file(&path)?;
        let signal = IqSignal::from_interleaved(&values, Some(rec.emitter_id), manifest.sample_rate_hz)
            .map_err(|e| CashError::Malformed { path: path.clone(), reason: e.to_string() })?;
        signals.push(signal);
    }
    Ok(SignalDataset::from_signals(signals, DatasetRole::Train))
}

/// Writes `dataset` as `dir/manifest.json` plus one `.iq` file per signal
/// and returns the manifest path. Unlabeled signals are rejected.
pub fn write_dataset(dataset: &SignalDataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let data_dir = dir.join("iq");
    fs::create_dir_all(&data_dir).map_err(|e| CashError::io(&data_dir, e))?;
    let sample_rate_hz = dataset.signals.first().map_or(1.0, |s| s.sample_rate_hz);
    let mut records = Vec::with_capacity(dataset.len());
    for (k, s) in dataset.signals.iter().enumerate() {
        let emitter_id =
            s.emitter_id.ok_or_else(|| CashError::InvalidParameter(format!("signal {k} has no emitter label")))?;
        let file = format!("iq/rec_{k:06}.iq");
        let bytes: Vec<u8> = s.to_interleaved_f32().iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| CashError::io(&path, e))?;
        records.push(ManifestRecord { file, emitter_id });
    }
    let manifest = Manifest { version: MANIFEST_VERSION, sample_rate_hz, records };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| CashError::io(&path, e))?;
    Ok(path)
}
