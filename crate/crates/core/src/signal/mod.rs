//! IQ signals, datasets, augmentation by slicing, a synthetic emitter
//! simulator and on-disk dataset ingestion.

mod io;
mod simulate;
mod slicing;
mod split;

pub use io::{load_dataset, write_dataset, Manifest, ManifestRecord, MANIFEST_VERSION};
pub use simulate::{
    clean_payload, profile_bank, profile_bank_in, simulate_emitter_signal, simulate_with, EmitterProfile,
    ProfileRanges, SimulatorParams,
};
pub use slicing::{center_slice, center_start, random_slice};
pub use split::{split_dataset, SeenSelection, Split, SplitConfig, SplitMode};

use std::collections::BTreeSet;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CashError, Result};

pub type EmitterId = u32;

/// Complex baseband capture.
#[derive(Debug, Clone, PartialEq)]
pub struct IqSignal {
    samples: Vec<Complex64>,
    pub emitter_id: Option<EmitterId>,
    pub sample_rate_hz: f64,
}

impl IqSignal {
    pub fn new(samples: Vec<Complex64>, emitter_id: Option<EmitterId>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(CashError::Empty("signal samples"));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(CashError::InvalidParameter(format!("sample rate {sample_rate_hz}")));
        }
        if samples.iter().any(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(CashError::InvalidParameter("non-finite IQ sample".into()));
        }
        Ok(Self { samples, emitter_id, sample_rate_hz })
    }

    /// Builds a signal from interleaved `[i0, q0, i1, q1, ...]` values.
    pub fn from_interleaved(values: &[f32], emitter_id: Option<EmitterId>, sample_rate_hz: f64) -> Result<Self> {
        if values.len() % 2 != 0 {
            return Err(CashError::InvalidParameter(format!("odd number of interleaved values ({})", values.len())));
        }
        let samples = values.chunks_exact(2).map(|c| Complex64::new(f64::from(c[0]), f64::from(c[1]))).collect();
        Self::new(samples, emitter_id, sample_rate_hz)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn to_interleaved_f32(&self) -> Vec<f32> {
        self.samples.iter().flat_map(|s| [s.re as f32, s.im as f32]).collect()
    }

    /// Rounds every sample to `f32` precision, the on-disk resolution.
    pub fn quantize_f32(&mut self) {
        for s in &mut self.samples {
            *s = Complex64::new(f64::from(s.re as f32), f64::from(s.im as f32));
        }
    }

    /// Channel-major `2 x len` network input: the I row then the Q row.
    pub fn to_channels(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.re).chain(self.samples.iter().map(|s| s.im)).collect()
    }

    pub(crate) fn window(&self, start: usize, len: usize) -> IqSignal {
        IqSignal {
            samples: self.samples[start..start + len].to_vec(),
            emitter_id: self.emitter_id,
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalDataset {
    pub signals: Vec<IqSignal>,
    pub class_space: BTreeSet<EmitterId>,
    pub role: DatasetRole,
}

impl SignalDataset {
    /// Collects the class space from the signals' labels.
    pub fn from_signals(signals: Vec<IqSignal>, role: DatasetRole) -> Self {
        let class_space = signals.iter().filter_map(|s| s.emitter_id).collect();
        Self { signals, class_space, role }
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    /// Signals whose label is in `classes`.
    pub fn restrict(&self, classes: &BTreeSet<EmitterId>) -> SignalDataset {
        let signals =
            self.signals.iter().filter(|s| s.emitter_id.is_some_and(|e| classes.contains(&e))).cloned().collect();
        SignalDataset { signals, class_space: classes.clone(), role: self.role }
    }

    pub fn labels(&self) -> Vec<Option<EmitterId>> {
        self.signals.iter().map(|s| s.emitter_id).collect()
    }
}
