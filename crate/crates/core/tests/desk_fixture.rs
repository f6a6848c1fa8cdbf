use cash_core::encoder::{BackboneConfig, EncoderConfig};
use cash_core::experiment::{run_fsl, run_gzsl, FslFixture, GzslFixture};
use cash_core::model::{CashModel, ModelConfig, ModelMode};
use cash_core::nn::Parameterized;
use cash_core::online::encode;
use cash_core::rng;
use cash_core::signal::{random_slice, simulate_emitter_signal, DatasetRole, EmitterProfile, SignalDataset};
use cash_core::trainer::{step1_objective, step2_objective, train_step1, train_step2, two_views, Phase, TrainConfig};

#[test]
fn trained_desk_model_is_slice_stable_and_accepts_seen_emitters() {
    let fixture = GzslFixture::default();
    let split = fixture.split(0).unwrap();
    let cfg = TrainConfig::desk();
    let (model, _, _) = run_gzsl(&fixture, &split, ModelMode::Gzsl, &cfg).unwrap();

    let seen_test: Vec<_> = split.test.signals.iter().filter(|s| split.seen.contains(&s.emitter_id.unwrap())).collect();
    let accepted = seen_test.iter().filter(|s| encode(&model, s).unwrap().indicator() == 1).count();
    let rate = accepted as f64 / seen_test.len() as f64;
    assert!(rate >= 0.80, "seen acceptance {rate}");

    let mut r = rng::stream(1, "slice-pairs");
    let l = model.input_length();
    let code = |s| model.hard_hash(&model.encoder.extract_embedding(&s).unwrap()).unwrap();
    let stable = seen_test
        .iter()
        .take(100)
        .filter(|s| code(random_slice(s, l, &mut r).unwrap()) == code(random_slice(s, l, &mut r).unwrap()))
        .count();
    assert!(stable >= 95, "stable slice pairs {stable}/100");
}

fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        backbone: BackboneConfig::DeskSmall { channels: [4, 8, 8], kernel: 5, stride: 2 },
        input_length: 32,
        embedding_dim: 8,
        enhancer_hidden: 8,
        enhancer_dim: 4,
        normalize_enhanced: true,
        temperature: 0.5,
    }
}

/// Two otherwise ideal emitters at 0 and 100 ppm.
fn two_emitters(seed: u64) -> SignalDataset {
    let mut signals = Vec::new();
    for (id, ppm) in [0.0, 100.0].into_iter().enumerate() {
        let profile = EmitterProfile { freq_offset_ppm: ppm, ..EmitterProfile::ideal(seed + id as u64) };
        for k in 0..8 {
            let mut s = simulate_emitter_signal(&profile, 48, 25.0, seed * 100 + (id * 8 + k) as u64).unwrap();
            s.emitter_id = Some(id as u32);
            signals.push(s);
        }
    }
    SignalDataset::from_signals(signals, DatasetRole::Train)
}

#[test]
fn encoder_loss_falls_on_two_separable_emitters() {
    for seed in 0..5 {
        let data = two_emitters(seed);
        let mut model = CashModel::new(ModelConfig::new(ModelMode::Fsl, small_encoder(), 4, Vec::new()), seed).unwrap();
        let sigs: Vec<_> = data.signals.iter().collect();
        let labels: Vec<u32> = sigs.iter().map(|s| s.emitter_id.unwrap()).collect();
        let (views, view_labels) = two_views(&sigs, &labels, 32, &mut rng::stream(seed, "fixed-views")).unwrap();
        let l_e = |m: &CashModel| {
            let mut g = m.encoder.zeros_like();
            step1_objective(&m.encoder, None, &views, &view_labels, 0.0, &mut g, None).unwrap().total
        };
        let before = l_e(&model);
        let cfg = TrainConfig { step1: vec![Phase::adam(1e-3, 50)], batch_size: 8, seed, ..TrainConfig::desk() };
        train_step1(&mut model, &data, &cfg, &mut Vec::new()).unwrap();
        let after = l_e(&model);
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn binary_constraint_falls_during_hasher_training() {
    let data = two_emitters(3);
    let mut model = CashModel::new(ModelConfig::new(ModelMode::Gzsl, small_encoder(), 4, vec![0, 1]), 3).unwrap();
    let sigs: Vec<_> = data.signals.iter().collect();
    let labels: Vec<u32> = sigs.iter().map(|s| s.emitter_id.unwrap()).collect();
    let (views, view_labels) = two_views(&sigs, &labels, 32, &mut rng::stream(3, "fixed-views")).unwrap();
    let c_bin = |m: &CashModel| {
        let mut g = m.hasher.zeros_like();
        let parts = step2_objective(&m.encoder, &m.hasher, &views, &view_labels, 1.0, &mut g, None).unwrap();
        parts.components.iter().find(|(k, _)| *k == "c_bin").unwrap().1
    };
    let cfg = TrainConfig {
        step1: vec![Phase::adam(1e-3, 5)],
        step2: Some(vec![Phase::adam(1e-3, 40)]),
        batch_size: 8,
        ..TrainConfig::desk()
    };
    train_step1(&mut model, &data, &cfg, &mut Vec::new()).unwrap();
    let before = c_bin(&model);
    train_step2(&mut model, &data, &cfg, &mut Vec::new()).unwrap();
    let after = c_bin(&model);
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn five_shot_desk_run_beats_chance() {
    let fixture = FslFixture::default();
    let split = fixture.split(0).unwrap();
    let report = run_fsl(&fixture, &split, false, &TrainConfig::desk()).unwrap();
    assert!(report.acc_all > 0.10, "accuracy {}", report.acc_all);
}
