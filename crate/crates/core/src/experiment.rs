//! Synthetic desk-scale experiments: simulated emitter banks, seeded splits
//! and end-to-end trials shared by the CLI and the acceptance suite.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::eval::{evaluate_both, EvalReport};
use crate::hasher::Hasher;
use crate::model::{CashModel, ModelConfig, ModelMode};
use crate::rng;
use crate::signal::{
    profile_bank_in, simulate_emitter_signal, split_dataset, DatasetRole, EmitterId, EmitterProfile, IqSignal,
    ProfileRanges, SeenSelection, SignalDataset, Split, SplitConfig, SplitMode,
};
use crate::trainer::{finetune_fsl, pretrain_fsl, train, train_step2, EpochRecord, TrainConfig};

/// `per_class` captures of every profile; emitter ids are profile indices.
pub fn simulate_bank(
    profiles: &[EmitterProfile],
    per_class: usize,
    length: usize,
    snr_db: f64,
    seed: u64,
) -> Result<SignalDataset> {
    let mut signals = Vec::with_capacity(profiles.len() * per_class);
    for (id, p) in profiles.iter().enumerate() {
        for k in 0..per_class {
            let capture_seed = rng::derive_seed(seed, &format!("capture-{id}-{k}"));
            let mut s: IqSignal = simulate_emitter_signal(p, length, snr_db, capture_seed)?;
            s.emitter_id = Some(id as EmitterId);
            s.quantize_f32();
            signals.push(s);
        }
    }
    Ok(SignalDataset::from_signals(signals, DatasetRole::Train))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GzslFixture {
    pub profiles: usize,
    pub seen: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub signal_length: usize,
    pub snr_db: f64,
    pub bank_seed: u64,
    pub ranges: ProfileRanges,
    pub encoder: EncoderConfig,
    pub code_length: usize,
}

impl Default for GzslFixture {
    fn default() -> Self {
        Self {
            profiles: 10,
            seen: 5,
            train_per_class: 200,
            test_per_class: 50,
            signal_length: 192,
            snr_db: 20.0,
            bank_seed: 2024,
            ranges: ProfileRanges::separated(),
            encoder: EncoderConfig::desk(),
            code_length: 12,
        }
    }
}

impl GzslFixture {
    /// Simulates the bank with a per-trial capture seed and splits it.
    pub fn split(&self, seed: u64) -> Result<Split> {
        let bank = profile_bank_in(self.profiles, &self.ranges, self.bank_seed);
        let ds =
            simulate_bank(&bank, self.train_per_class + self.test_per_class, self.signal_length, self.snr_db, seed)?;
        split_dataset(
            &ds,
            &SplitConfig {
                mode: SplitMode::Gzsl,
                seen: SeenSelection::Count(self.seen),
                shots_per_novel: 0,
                test_per_class: self.test_per_class,
                seed,
            },
        )
    }

    pub fn model(&self, mode: ModelMode, seen: &BTreeSet<EmitterId>, seed: u64) -> Result<CashModel> {
        let cfg = ModelConfig::new(mode, self.encoder.clone(), self.code_length, seen.iter().copied().collect());
        CashModel::new(cfg, seed)
    }
}

/// Reports for one trained model: `[task_aware, task_agnostic]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReports {
    pub task_aware: EvalReport,
    pub task_agnostic: EvalReport,
}

impl From<[EvalReport; 2]> for TrialReports {
    fn from([task_aware, task_agnostic]: [EvalReport; 2]) -> Self {
        Self { task_aware, task_agnostic }
    }
}

/// Trains one model of the given mode on a split and scores it.
pub fn run_gzsl(
    fixture: &GzslFixture,
    split: &Split,
    mode: ModelMode,
    cfg: &TrainConfig,
) -> Result<(CashModel, TrialReports, Vec<EpochRecord>)> {
    let mut model = fixture.model(mode, &split.seen, cfg.seed)?;
    let log = train(&mut model, &split.train, cfg)?;
    let reports = evaluate_both(&model, &split.test, &split.seen, cfg.seed)?;
    Ok((model, reports.into(), log))
}

/// Replaces the hasher of a step-one model with a fresh one of another code
/// length, retrains step two and scores it.
pub fn retrain_code_length(
    trained: &CashModel,
    split: &Split,
    code_length: usize,
    cfg: &TrainConfig,
) -> Result<TrialReports> {
    let mut model = trained.clone();
    model.config.hasher.code_length = code_length;
    model.hasher = Hasher::new(model.config.hasher.clone(), &mut rng::stream(cfg.seed, "init-hasher"))?;
    train_step2(&mut model, &split.train, cfg, &mut Vec::new())?;
    Ok(evaluate_both(&model, &split.test, &split.seen, cfg.seed)?.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FslFixture {
    /// Disjoint emitters used only for pretraining.
    pub seen_profiles: usize,
    pub novel_profiles: usize,
    pub pretrain_per_class: usize,
    pub shots: usize,
    pub test_per_class: usize,
    pub signal_length: usize,
    pub snr_db: f64,
    pub bank_seed: u64,
    pub ranges: ProfileRanges,
    pub encoder: EncoderConfig,
    pub code_length: usize,
}

impl Default for FslFixture {
    fn default() -> Self {
        Self {
            seen_profiles: 10,
            novel_profiles: 10,
            pretrain_per_class: 100,
            shots: 5,
            test_per_class: 30,
            signal_length: 256,
            snr_db: 20.0,
            bank_seed: 77,
            ranges: ProfileRanges::separated(),
            encoder: EncoderConfig::desk(),
            code_length: 5,
        }
    }
}

impl FslFixture {
    pub fn split(&self, seed: u64) -> Result<Split> {
        let total = self.seen_profiles + self.novel_profiles;
        let bank = profile_bank_in(total, &self.ranges, self.bank_seed);
        let per_class = self.pretrain_per_class.max(self.shots) + self.test_per_class;
        let ds = simulate_bank(&bank, per_class, self.signal_length, self.snr_db, seed)?;
        // the first block of profiles is seen, so the novel block is fixed
        let seen: Vec<EmitterId> = (0..self.seen_profiles as EmitterId).collect();
        let mut split = split_dataset(
            &ds,
            &SplitConfig {
                mode: SplitMode::Fsl,
                seen: SeenSelection::List(seen),
                shots_per_novel: self.shots,
                test_per_class: self.test_per_class,
                seed,
            },
        )?;
        let seen_train = split.seen_train();
        let mut per_class = std::collections::BTreeMap::<EmitterId, usize>::new();
        let shots = split.novel_shots();
        let mut kept: Vec<IqSignal> = seen_train
            .signals
            .into_iter()
            .filter(|s| {
                let c = per_class.entry(s.emitter_id.unwrap_or_default()).or_default();
                *c += 1;
                *c <= self.pretrain_per_class
            })
            .collect();
        kept.extend(shots.signals);
        split.train = SignalDataset::from_signals(kept, DatasetRole::Train);
        Ok(split)
    }
}

/// Few-shot model: optional pretraining on the unlabeled seen emitters of
/// `split`, then finetuning on its novel shots.
pub fn train_fsl_model(
    encoder: EncoderConfig,
    code_length: usize,
    split: &Split,
    pretrain: bool,
    cfg: &TrainConfig,
) -> Result<(CashModel, Vec<EpochRecord>)> {
    let cfg = cfg.clone().with_fsl();
    let mut model = CashModel::new(ModelConfig::new(ModelMode::Fsl, encoder, code_length, Vec::new()), cfg.seed)?;
    let mut log = Vec::new();
    if pretrain {
        let mut pool = split.seen_train();
        for s in &mut pool.signals {
            s.emitter_id = None;
        }
        pretrain_fsl(&mut model.encoder, &pool, &cfg, &mut log)?;
    }
    finetune_fsl(&mut model, &split.novel_shots(), &cfg, &mut log)?;
    Ok((model, log))
}

/// Few-shot trial on the fixture. Returns the task-agnostic report, which
/// over a novel-only test set is the plain clustering accuracy.
pub fn run_fsl(fixture: &FslFixture, split: &Split, pretrain: bool, cfg: &TrainConfig) -> Result<EvalReport> {
    let (model, _) = train_fsl_model(fixture.encoder.clone(), fixture.code_length, split, pretrain, cfg)?;
    let [_, agnostic] = evaluate_both(&model, &split.test, &split.seen, cfg.seed)?;
    Ok(agnostic)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gzsl_split_has_expected_sizes() {
        let fixture = GzslFixture { train_per_class: 6, test_per_class: 3, ..GzslFixture::default() };
        let split = fixture.split(1).unwrap();
        assert_eq!(split.seen.len(), 5);
        assert_eq!(split.train.len(), 30);
        assert_eq!(split.test.len(), 30);
        assert!(split.train.signals.iter().all(|s| split.seen.contains(&s.emitter_id.unwrap())));
        assert_eq!(fixture.split(1).unwrap().train.signals, split.train.signals);
    }

    #[test]
    fn fsl_split_keeps_shots_and_pretraining_pool() {
        let fixture = FslFixture { pretrain_per_class: 4, test_per_class: 2, ..FslFixture::default() };
        let split = fixture.split(3).unwrap();
        assert_eq!(split.novel_shots().len(), 50);
        assert_eq!(split.seen_train().len(), 40);
        assert_eq!(split.test.len(), 20);
        assert!(split.test.signals.iter().all(|s| split.novel.contains(&s.emitter_id.unwrap())));
    }
}
