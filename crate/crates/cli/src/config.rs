//! Run configuration files (JSON). Every numeric hyperparameter lives here;
//! command-line flags only pick files, seeds and ablations.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cash_core::encoder::EncoderConfig;
use cash_core::eval::sweep::SweepAxis;
use cash_core::experiment::simulate_bank;
use cash_core::model::ModelMode;
use cash_core::signal::{
    load_dataset, profile_bank_in, ProfileRanges, SeenSelection, SignalDataset, SplitConfig, SplitMode,
};
use cash_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub profiles: usize,
    pub per_class: usize,
    pub signal_length: usize,
    pub snr_db: f64,
    /// Seeds the emitter impairments; the run seed drives the captures.
    pub bank_seed: u64,
    pub ranges: ProfileRanges,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            profiles: 10,
            per_class: 250,
            signal_length: 192,
            snr_db: 20.0,
            bank_seed: 2024,
            ranges: ProfileRanges::separated(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Simulated(SimulationConfig),
    /// Relative paths resolve against `CASH_DATA_DIR` when it is set.
    Manifest {
        path: PathBuf,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Simulated(SimulationConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub seen: SeenSelection,
    pub shots_per_novel: usize,
    pub test_per_class: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { seen: SeenSelection::Count(5), shots_per_novel: 5, test_per_class: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Adsb,
    Oracle,
}

impl Preset {
    pub fn train(self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig::desk(),
            Preset::Adsb => TrainConfig::adsb(),
            Preset::Oracle => TrainConfig::oracle(),
        }
    }

    pub fn encoder(self) -> EncoderConfig {
        match self {
            Preset::Desk => EncoderConfig::desk(),
            Preset::Adsb | Preset::Oracle => EncoderConfig::paper(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub data: DataSource,
    pub split: SplitSection,
    pub mode: ModelMode,
    /// Overrides the preset's encoder.
    pub encoder: Option<EncoderConfig>,
    pub code_length: usize,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    /// Overrides the preset's training schedule.
    pub train: Option<TrainConfig>,
    /// Few-shot runs pretrain on the unlabeled seen emitters first.
    pub fsl_pretrain: bool,
    pub trials: usize,
    pub sweep: Option<SweepSection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Desk,
            data: DataSource::default(),
            split: SplitSection::default(),
            mode: ModelMode::Gzsl,
            encoder: None,
            code_length: 12,
            lambda: None,
            gamma: None,
            train: None,
            fsl_pretrain: true,
            trials: 10,
            sweep: None,
        }
    }
}

/// Ablation and seed flags applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub no_identifier: bool,
    pub fsl: bool,
    pub freeze_encoder: Option<bool>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Folds the flags in and materializes the preset so the stored snapshot
    /// is self-contained.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if o.fsl && o.no_identifier {
            bail!("--fsl and --no-identifier are mutually exclusive");
        }
        if o.fsl {
            self.mode = ModelMode::Fsl;
        } else if o.no_identifier {
            self.mode = ModelMode::Vanilla;
        }
        let mut train = self.train.take().unwrap_or_else(|| self.preset.train());
        if let Some(seed) = o.seed {
            train.seed = seed;
        }
        if let Some(f) = o.freeze_encoder {
            train.freeze_encoder = f;
        }
        train.fsl_mode = self.mode == ModelMode::Fsl;
        train.validate()?;
        self.train = Some(train);
        if self.encoder.is_none() {
            self.encoder = Some(self.preset.encoder());
        }
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        Ok(self)
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.clone().unwrap_or_else(|| self.preset.train())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        self.encoder.clone().unwrap_or_else(|| self.preset.encoder())
    }

    pub fn seed(&self) -> u64 {
        self.train_config().seed
    }

    pub fn split_config(&self, seed: u64) -> SplitConfig {
        let fsl = self.mode == ModelMode::Fsl;
        SplitConfig {
            mode: if fsl { SplitMode::Fsl } else { SplitMode::Gzsl },
            seen: self.split.seen.clone(),
            shots_per_novel: if fsl { self.split.shots_per_novel } else { 0 },
            test_per_class: self.split.test_per_class,
            seed,
        }
    }

    /// The dataset for a given seed: simulated captures or a manifest on disk.
    pub fn dataset(&self, seed: u64) -> Result<SignalDataset> {
        match &self.data {
            DataSource::Simulated(sim) => simulate(sim, seed),
            DataSource::Manifest { path } => {
                let path = resolve_data_path(path);
                load_dataset(&path).with_context(|| format!("loading dataset {}", path.display()))
            }
        }
    }
}

pub fn simulate(sim: &SimulationConfig, seed: u64) -> Result<SignalDataset> {
    let bank = profile_bank_in(sim.profiles, &sim.ranges, sim.bank_seed);
    Ok(simulate_bank(&bank, sim.per_class, sim.signal_length, sim.snr_db, seed)?)
}

pub fn resolve_data_path(path: &Path) -> PathBuf {
    match std::env::var_os("CASH_DATA_DIR") {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}
