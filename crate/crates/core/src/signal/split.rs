use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DatasetRole, EmitterId, SignalDataset};
use crate::error::{CashError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Gzsl,
    Fsl,
}

/// How the seen emitters are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeenSelection {
    /// `round(fraction * #classes)` emitters drawn with the split seed.
    Fraction(f64),
    Count(usize),
    List(Vec<EmitterId>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub mode: SplitMode,
    pub seen: SeenSelection,
    #[serde(default)]
    pub shots_per_novel: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == SplitMode::Gzsl && self.shots_per_novel != 0 {
            return Err(CashError::InvalidParameter("gzsl split cannot have novel shots".into()));
        }
        if self.test_per_class == 0 {
            return Err(CashError::InvalidParameter("test_per_class must be positive".into()));
        }
        if let SeenSelection::Fraction(f) = self.seen {
            if !(0.0..=1.0).contains(&f) {
                return Err(CashError::InvalidParameter(format!("seen fraction {f}")));
            }
        }
        Ok(())
    }
}

/// Result of a split. In FSL mode the test set holds novel classes only and
/// the training set holds every remaining seen sample plus the novel shots.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: SignalDataset,
    pub test: SignalDataset,
    pub seen: BTreeSet<EmitterId>,
    pub novel: BTreeSet<EmitterId>,
}

impl Split {
    /// Novel-class samples of the training set (the FSL shots).
    pub fn novel_shots(&self) -> SignalDataset {
        self.train.restrict(&self.novel)
    }

    pub fn seen_train(&self) -> SignalDataset {
        self.train.restrict(&self.seen)
    }
}

fn choose_seen(classes: &[EmitterId], sel: &SeenSelection, seed: u64) -> Result<BTreeSet<EmitterId>> {
    let count = match sel {
        SeenSelection::List(list) => {
            if let Some(bad) = list.iter().find(|c| !classes.contains(c)) {
                return Err(CashError::InvalidParameter(format!("seen emitter {bad} not in dataset")));
            }
            return Ok(list.iter().copied().collect());
        }
        SeenSelection::Count(c) => *c,
        SeenSelection::Fraction(f) => (f * classes.len() as f64).round() as usize,
    };
    if count > classes.len() {
        return Err(CashError::InvalidParameter(format!("{count} seen emitters requested from {}", classes.len())));
    }
    let mut shuffled = classes.to_vec();
    shuffled.shuffle(&mut rng::stream(seed, "seen-emitters"));
    Ok(shuffled.into_iter().take(count).collect())
}

pub fn split_dataset(dataset: &SignalDataset, cfg: &SplitConfig) -> Result<Split> {
    cfg.validate()?;
    let mut by_class: BTreeMap<EmitterId, Vec<usize>> = BTreeMap::new();
    for (k, s) in dataset.signals.iter().enumerate() {
        let id = s.emitter_id.ok_or_else(|| CashError::InvalidParameter(format!("signal {k} has no emitter label")))?;
        by_class.entry(id).or_default().push(k);
    }
    let classes: Vec<EmitterId> = by_class.keys().copied().collect();
    let seen = choose_seen(&classes, &cfg.seen, cfg.seed)?;
    let novel: BTreeSet<EmitterId> = classes.iter().copied().filter(|c| !seen.contains(c)).collect();

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (&class, indices) in &by_class {
        let mut idx = indices.clone();
        idx.shuffle(&mut rng::indexed_stream(cfg.seed, "split-class", u64::from(class)));
        let is_seen = seen.contains(&class);
        let shots = if is_seen { 0 } else { cfg.shots_per_novel };
        let required = cfg.test_per_class + if is_seen { 1 } else { shots };
        if idx.len() < required {
            return Err(CashError::InsufficientSamples { class, available: idx.len(), required });
        }
        let (test_idx, rest) = idx.split_at(cfg.test_per_class);
        let in_test = is_seen && cfg.mode == SplitMode::Gzsl || !is_seen;
        if in_test {
            test.extend(test_idx.iter().map(|&k| dataset.signals[k].clone()));
        }
        let train_idx = if is_seen { rest } else { &rest[..shots] };
        train.extend(train_idx.iter().map(|&k| dataset.signals[k].clone()));
    }

    let mut train_space = seen.clone();
    if cfg.mode == SplitMode::Fsl && cfg.shots_per_novel > 0 {
        train_space.extend(novel.iter().copied());
    }
    let test_space = match cfg.mode {
        SplitMode::Gzsl => classes.iter().copied().collect(),
        SplitMode::Fsl => novel.clone(),
    };
    Ok(Split {
        train: SignalDataset { signals: train, class_space: train_space, role: DatasetRole::Train },
        test: SignalDataset { signals: test, class_space: test_space, role: DatasetRole::Test },
        seen,
        novel,
    })
}
