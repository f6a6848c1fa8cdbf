//! Two-step training. Step one fits the encoder (and the identifier) with
//! `L1 = L_E + α·L_I`; step two fits the hasher on the frozen encoder with
//! `L2 = L_H + β·L_R`. Few-shot mode adds instance-contrastive pretraining
//! on disjoint seen emitters and a short finetune on the novel shots.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::encoder::{instance_contrastive_loss, supcon_loss, Embedding, EncoderPass, SignalEncoder};
use crate::error::{CashError, Result};
use crate::hasher::{hasher_loss, regularizer, Hasher, HasherPass};
use crate::identifier::{arpl_ce_loss, arpl_margin_loss, Identifier, IdentifierState};
use crate::model::{CashModel, ModelMode};
use crate::nn::{Optimizer, OptimizerKind, Parameterized};
use crate::rng::{self, Rng};
use crate::signal::{random_slice, EmitterId, IqSignal, SignalDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub epochs: usize,
}

impl Phase {
    pub fn adam(lr: f64, epochs: usize) -> Self {
        Self { optimizer: OptimizerKind::Adam, lr, epochs }
    }

    pub fn sgd(lr: f64, epochs: usize) -> Self {
        Self { optimizer: OptimizerKind::Sgd, lr, epochs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub step1: Vec<Phase>,
    /// Falls back to `step1` when absent.
    pub step2: Option<Vec<Phase>>,
    /// Signals per batch; every signal contributes two sliced views.
    pub batch_size: usize,
    pub freeze_encoder: bool,
    pub fsl_mode: bool,
    pub fsl_pretrain: Vec<Phase>,
    pub fsl_finetune: Vec<Phase>,
    pub fsl_batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    fn paper_schedule(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            step1: vec![Phase::adam(1e-3, 500), Phase::sgd(1e-4, 100)],
            step2: None,
            batch_size: 128,
            freeze_encoder: true,
            fsl_mode: false,
            fsl_pretrain: vec![Phase::adam(1e-3, 300)],
            fsl_finetune: vec![Phase::adam(1e-3, 300)],
            fsl_batch_size: 10,
            seed: 0,
        }
    }

    pub fn adsb() -> Self {
        Self::paper_schedule(0.1, 100.0)
    }

    pub fn oracle() -> Self {
        Self::paper_schedule(1e-4, 15000.0)
    }

    /// `(α, β)` candidates for a grid search: every pairing of
    /// α in {1e-4, 1e-2, 0.1, 1} with β in {1, 100, 1000, 15000}.
    pub fn weight_grid() -> Vec<(f64, f64)> {
        let alphas = [1e-4, 1e-2, 0.1, 1.0];
        let betas = [1.0, 100.0, 1000.0, 15000.0];
        alphas.iter().flat_map(|&a| betas.iter().map(move |&b| (a, b))).collect()
    }

    /// The ADSB weights on a schedule short enough for a laptop CPU.
    pub fn desk() -> Self {
        Self {
            step1: vec![Phase::adam(1e-3, 25)],
            step2: Some(vec![Phase::adam(1e-3, 40)]),
            batch_size: 16,
            fsl_pretrain: vec![Phase::adam(1e-3, 30)],
            fsl_finetune: vec![Phase::adam(1e-3, 40)],
            ..Self::adsb()
        }
    }

    pub fn with_fsl(mut self) -> Self {
        self.fsl_mode = true;
        self
    }

    /// `α`, forced to zero in few-shot mode.
    pub fn effective_alpha(&self) -> f64 {
        if self.fsl_mode {
            0.0
        } else {
            self.alpha
        }
    }

    pub fn step2_schedule(&self) -> &[Phase] {
        self.step2.as_deref().unwrap_or(&self.step1)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(CashError::InvalidParameter(format!("{name} must be nonnegative, got {w}")));
            }
        }
        if self.batch_size == 0 || self.fsl_batch_size == 0 {
            return Err(CashError::InvalidParameter("batch sizes must be positive".into()));
        }
        let phases = self.step1.iter().chain(self.step2_schedule()).chain(&self.fsl_pretrain).chain(&self.fsl_finetune);
        for p in phases {
            if !(p.lr.is_finite() && p.lr > 0.0) {
                return Err(CashError::InvalidParameter(format!("learning rate {}", p.lr)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Step1,
    Step2,
    Pretrain,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub optimizer: OptimizerKind,
    pub loss: f64,
    pub components: BTreeMap<String, f64>,
    pub wall_seconds: f64,
}

/// Loss value of one batch with named parts.
#[derive(Debug, Clone, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub components: Vec<(&'static str, f64)>,
}

/// Batches of signal indices built from same-class groups of two (three
/// when a class has an odd count), so every class present in a batch
/// contributes at least two signals whenever it has them.
pub fn pair_group_batches(labels: &[EmitterId], batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut by_class: BTreeMap<EmitterId, Vec<usize>> = BTreeMap::new();
    for (k, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(k);
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for idx in by_class.values_mut() {
        idx.shuffle(rng);
        let mut class_groups: Vec<Vec<usize>> = idx.chunks(2).map(<[usize]>::to_vec).collect();
        if class_groups.len() > 1 && class_groups.last().is_some_and(|g| g.len() == 1) {
            let last = class_groups.pop().unwrap();
            class_groups.last_mut().unwrap().extend(last);
        }
        groups.extend(class_groups);
    }
    groups.shuffle(rng);
    let mut batches = Vec::new();
    let mut current = Vec::new();
    for g in groups {
        current.extend(g);
        if current.len() >= batch_size {
            batches.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Two random windows per signal as channel buffers, with repeated labels.
pub fn two_views<L: Copy>(
    signals: &[&IqSignal],
    labels: &[L],
    l: usize,
    rng: &mut Rng,
) -> Result<(Vec<Vec<f64>>, Vec<L>)> {
    let mut views = Vec::with_capacity(2 * signals.len());
    let mut out = Vec::with_capacity(2 * signals.len());
    for (s, &y) in signals.iter().zip(labels) {
        for _ in 0..2 {
            views.push(random_slice(s, l, rng)?.to_channels());
            out.push(y);
        }
    }
    Ok((views, out))
}

/// Rotates a channel-major I/Q view by `theta` radians.
pub fn rotate_channels(view: &mut [f64], theta: f64) {
    let (sin, cos) = theta.sin_cos();
    let (re, im) = view.split_at_mut(view.len() / 2);
    for (i, q) in re.iter_mut().zip(im) {
        (*i, *q) = (*i * cos - *q * sin, *i * sin + *q * cos);
    }
}

fn labels_of(ds: &SignalDataset) -> Result<Vec<EmitterId>> {
    ds.signals
        .iter()
        .map(|s| s.emitter_id.ok_or_else(|| CashError::InvalidParameter("unlabeled signal in training set".into())))
        .collect()
}

fn check_finite(value: f64, epoch: usize, component: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(CashError::Diverged { epoch, component: component.into() })
    }
}

/// `L1` on a batch of views. Accumulates `∂L1` into the gradient modules and
/// returns the loss parts. `identifier` is ignored when `alpha` is zero.
pub fn step1_objective(
    encoder: &SignalEncoder,
    identifier: Option<&Identifier>,
    views: &[Vec<f64>],
    labels: &[EmitterId],
    alpha: f64,
    grad_encoder: &mut SignalEncoder,
    grad_identifier: Option<&mut Identifier>,
) -> Result<LossParts> {
    let passes: Vec<EncoderPass> = views.iter().map(|v| encoder.forward_cached(v)).collect::<Result<_>>()?;
    let feats: Vec<_> = passes.iter().map(|p| p.feature.clone()).collect();
    let le = supcon_loss(&feats, labels, encoder.config.temperature)?;
    let mut components = vec![("l_e", le.value)];
    let mut total = le.value;
    let mut d_emb: Vec<Option<Vec<f64>>> = vec![None; views.len()];
    if let (Some(id), true) = (identifier, alpha > 0.0) {
        let projected: Vec<_> = passes.iter().map(|p| id.project_cached(&p.embedding)).collect::<Result<_>>()?;
        let zs: Vec<Vec<f64>> = projected.iter().map(|(z, _)| z.clone()).collect();
        let ce = arpl_ce_loss(&zs, labels, &id.points)?;
        let amc = arpl_margin_loss(&zs, labels, &id.points)?;
        let li = ce.value + id.points.lambda * amc.value;
        components.extend([("l_i", li), ("l_ce", ce.value), ("l_amc", amc.value)]);
        total += alpha * li;
        let w_amc = alpha * id.points.lambda;
        let mut scratch = id.zeros_like();
        let gid = match grad_identifier {
            Some(g) => g,
            None => &mut scratch,
        };
        for (k, (_, cache)) in projected.iter().enumerate() {
            let dz: Vec<f64> = ce.dz[k].iter().zip(&amc.dz[k]).map(|(a, b)| alpha * a + w_amc * b).collect();
            d_emb[k] = Some(id.project_backward(cache, &dz, gid));
        }
        for ((g, a), b) in gid.points.points.iter_mut().zip(&ce.dpoints).zip(&amc.dpoints) {
            *g += alpha * a + w_amc * b;
        }
        gid.points.radius[0] += alpha * ce.dradius + w_amc * amc.dradius;
    }
    for (k, pass) in passes.iter().enumerate() {
        encoder.backward(pass, Some(&le.grads[k]), d_emb[k].as_deref(), grad_encoder);
    }
    components.push(("total", total));
    Ok(LossParts { total, components })
}

/// `L2` on a batch of views. With `grad_encoder` absent the encoder is
/// treated as frozen.
pub fn step2_objective(
    encoder: &SignalEncoder,
    hasher: &Hasher,
    views: &[Vec<f64>],
    labels: &[EmitterId],
    beta: f64,
    grad_hasher: &mut Hasher,
    grad_encoder: Option<&mut SignalEncoder>,
) -> Result<LossParts> {
    let enc_passes: Option<Vec<EncoderPass>> = match grad_encoder {
        Some(_) => Some(views.iter().map(|v| encoder.forward_cached(v)).collect::<Result<_>>()?),
        None => None,
    };
    let embeddings: Vec<Embedding> = match &enc_passes {
        Some(p) => p.iter().map(|p| p.embedding.clone()).collect(),
        None => views.iter().map(|v| encoder.embed_channels(v)).collect(),
    };
    let hpasses: Vec<HasherPass> = embeddings.iter().map(|e| hasher.forward_cached(e)).collect::<Result<_>>()?;
    let soft: Vec<_> = hpasses.iter().map(|p| p.soft.clone()).collect();
    let lh = hasher_loss(&soft, labels)?;
    let mut components = vec![("l_h", lh.value)];
    let loss = if beta > 0.0 {
        let lr = regularizer(&soft, labels)?;
        let c_bin = crate::hasher::binary_constraint(&soft)?.value;
        components.extend([("l_r", lr.value), ("c_bin", c_bin), ("c_sim", lr.value - c_bin)]);
        lh.add_scaled(&lr, beta)
    } else {
        lh
    };
    let mut d_embs = Vec::with_capacity(views.len());
    for (k, p) in hpasses.iter().enumerate() {
        d_embs.push(hasher.backward(p, &loss.dh[k], &loss.dc[k], grad_hasher));
    }
    if let (Some(passes), Some(genc)) = (enc_passes, grad_encoder) {
        for (p, de) in passes.iter().zip(&d_embs) {
            encoder.backward(p, None, Some(de), genc);
        }
    }
    components.push(("total", loss.value));
    Ok(LossParts { total: loss.value, components })
}

fn optimizer_step(opt: &mut Optimizer, params: Vec<&mut [f64]>, grads: &[&dyn Parameterized]) {
    let views: Vec<_> = grads.iter().flat_map(|m| m.params()).collect();
    let g: Vec<&[f64]> = views.iter().map(|(_, v)| v.data).collect();
    opt.step(params, g);
}

/// Runs every phase of a schedule. `epoch_fn` performs one pass over the
/// data and returns the batch-averaged loss parts.
fn run_schedule<F>(phases: &[Phase], stage: Stage, log: &mut Vec<EpochRecord>, mut epoch_fn: F) -> Result<()>
where
    F: FnMut(&mut Optimizer, usize) -> Result<BTreeMap<String, f64>>,
{
    let mut epoch = 0;
    for phase in phases {
        let mut opt = Optimizer::new(phase.optimizer, phase.lr);
        for _ in 0..phase.epochs {
            let start = Instant::now();
            let components = epoch_fn(&mut opt, epoch)?;
            let loss = components.get("total").copied().unwrap_or(f64::NAN);
            check_finite(loss, epoch, &format!("{stage:?} loss"))?;
            log.push(EpochRecord {
                stage,
                epoch,
                optimizer: phase.optimizer,
                loss,
                components,
                wall_seconds: start.elapsed().as_secs_f64(),
            });
            epoch += 1;
        }
    }
    Ok(())
}

fn average(sum: &mut BTreeMap<String, f64>, parts: &LossParts, batches: usize) {
    for (k, v) in &parts.components {
        *sum.entry((*k).to_string()).or_insert(0.0) += v / batches as f64;
    }
}

/// Step one on `train`, then calibrates the identifier threshold on two
/// fresh views of every training signal.
pub fn train_step1(
    model: &mut CashModel,
    train: &SignalDataset,
    cfg: &TrainConfig,
    log: &mut Vec<EpochRecord>,
) -> Result<()> {
    step1_with(model, train, cfg, &cfg.step1, cfg.batch_size, log)
}

fn step1_with(
    model: &mut CashModel,
    train: &SignalDataset,
    cfg: &TrainConfig,
    phases: &[Phase],
    batch_size: usize,
    log: &mut Vec<EpochRecord>,
) -> Result<()> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(CashError::Empty("training set"));
    }
    let labels = labels_of(train)?;
    let alpha = cfg.effective_alpha();
    let l = model.input_length();
    let mut rng = rng::stream(cfg.seed, "step1");
    let CashModel { encoder, identifier, .. } = model;
    let train_identifier = alpha > 0.0 && identifier.is_some();
    run_schedule(phases, Stage::Step1, log, |opt, epoch| {
        let batches = pair_group_batches(&labels, batch_size, &mut rng);
        let mut sums = BTreeMap::new();
        for batch in &batches {
            let sigs: Vec<&IqSignal> = batch.iter().map(|&k| &train.signals[k]).collect();
            let ys: Vec<EmitterId> = batch.iter().map(|&k| labels[k]).collect();
            let (views, vy) = two_views(&sigs, &ys, l, &mut rng)?;
            let mut genc = encoder.zeros_like();
            let mut gid = identifier.as_ref().filter(|_| train_identifier).map(|i| i.zeros_like());
            let parts = step1_objective(encoder, identifier.as_ref(), &views, &vy, alpha, &mut genc, gid.as_mut())?;
            check_finite(parts.total, epoch, "step one batch")?;
            match (identifier.as_mut(), gid.as_ref()) {
                (Some(id), Some(g)) => {
                    let mut params = encoder.params_mut();
                    params.extend(id.params_mut());
                    optimizer_step(opt, params, &[&genc, g]);
                    id.points.clamp_radius();
                }
                _ => optimizer_step(opt, encoder.params_mut(), &[&genc]),
            }
            average(&mut sums, &parts, batches.len());
        }
        Ok(sums)
    })?;
    if model.mode() == ModelMode::Gzsl {
        calibrate(model, train, cfg.seed)?;
    }
    Ok(())
}

/// Sets the identifier threshold from two random views of each signal.
pub fn calibrate(model: &mut CashModel, train: &SignalDataset, seed: u64) -> Result<IdentifierState> {
    let labels = labels_of(train)?;
    let sigs: Vec<&IqSignal> = train.signals.iter().collect();
    let (views, _) = two_views(&sigs, &labels, model.input_length(), &mut rng::stream(seed, "calibrate"))?;
    let embeddings: Vec<Embedding> = views.iter().map(|v| model.encoder.embed_channels(v)).collect();
    let id = model.identifier.as_mut().ok_or_else(|| CashError::InvalidParameter("model has no identifier".into()))?;
    id.calibrate(&embeddings)
}

pub fn train_step2(
    model: &mut CashModel,
    train: &SignalDataset,
    cfg: &TrainConfig,
    log: &mut Vec<EpochRecord>,
) -> Result<()> {
    step2_with(model, train, cfg, cfg.step2_schedule(), cfg.batch_size, log)
}

fn step2_with(
    model: &mut CashModel,
    train: &SignalDataset,
    cfg: &TrainConfig,
    phases: &[Phase],
    batch_size: usize,
    log: &mut Vec<EpochRecord>,
) -> Result<()> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(CashError::Empty("training set"));
    }
    let labels = labels_of(train)?;
    let beta = if model.mode() == ModelMode::Vanilla { 0.0 } else { cfg.beta };
    let l = model.input_length();
    let mut rng = rng::stream(cfg.seed, "step2");
    let CashModel { encoder, hasher, .. } = model;
    run_schedule(phases, Stage::Step2, log, |opt, epoch| {
        let batches = pair_group_batches(&labels, batch_size, &mut rng);
        let mut sums = BTreeMap::new();
        for batch in &batches {
            let sigs: Vec<&IqSignal> = batch.iter().map(|&k| &train.signals[k]).collect();
            let ys: Vec<EmitterId> = batch.iter().map(|&k| labels[k]).collect();
            let (views, vy) = two_views(&sigs, &ys, l, &mut rng)?;
            let mut gh = hasher.zeros_like();
            let parts = if cfg.freeze_encoder {
                let parts = step2_objective(encoder, hasher, &views, &vy, beta, &mut gh, None)?;
                check_finite(parts.total, epoch, "step two batch")?;
                optimizer_step(opt, hasher.params_mut(), &[&gh]);
                parts
            } else {
                let mut genc = encoder.zeros_like();
                let parts = step2_objective(encoder, hasher, &views, &vy, beta, &mut gh, Some(&mut genc))?;
                check_finite(parts.total, epoch, "step two batch")?;
                let mut params = hasher.params_mut();
                params.extend(encoder.params_mut());
                optimizer_step(opt, params, &[&gh, &genc]);
                parts
            };
            average(&mut sums, &parts, batches.len());
        }
        Ok(sums)
    })
}

/// Both steps on a labeled training set.
pub fn train(model: &mut CashModel, train: &SignalDataset, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    let mut log = Vec::new();
    train_step1(model, train, cfg, &mut log)?;
    train_step2(model, train, cfg, &mut log)?;
    Ok(log)
}

/// Instance-contrastive pretraining: the two views of a signal are the only
/// positives. Labels, if present, are ignored.
pub fn pretrain_fsl(
    encoder: &mut SignalEncoder,
    unlabeled: &SignalDataset,
    cfg: &TrainConfig,
    log: &mut Vec<EpochRecord>,
) -> Result<()> {
    cfg.validate()?;
    if unlabeled.is_empty() {
        return Err(CashError::Empty("pretraining set"));
    }
    let l = encoder.config.input_length;
    let temperature = encoder.config.temperature;
    let mut rng = rng::stream(cfg.seed, "pretrain");
    let mut order: Vec<usize> = (0..unlabeled.len()).collect();
    run_schedule(&cfg.fsl_pretrain, Stage::Pretrain, log, |opt, epoch| {
        order.shuffle(&mut rng);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let mut sums = BTreeMap::new();
        for batch in &batches {
            let sigs: Vec<&IqSignal> = batch.iter().map(|&k| &unlabeled.signals[k]).collect();
            let (mut views, ids) = two_views(&sigs, batch, l, &mut rng)?;
            for v in &mut views {
                rotate_channels(v, rng.random_range(0.0..std::f64::consts::TAU));
            }
            let passes: Vec<EncoderPass> = views.iter().map(|v| encoder.forward_cached(v)).collect::<Result<_>>()?;
            let feats: Vec<&[f64]> = passes.iter().map(|p| p.feature.0.as_slice()).collect();
            let lg = instance_contrastive_loss(&feats, &ids, temperature)?;
            check_finite(lg.value, epoch, "pretraining batch")?;
            let mut genc = encoder.zeros_like();
            for (p, g) in passes.iter().zip(&lg.grads) {
                encoder.backward(p, Some(g), None, &mut genc);
            }
            optimizer_step(opt, encoder.params_mut(), &[&genc]);
            let parts = LossParts { total: lg.value, components: vec![("instance", lg.value), ("total", lg.value)] };
            average(&mut sums, &parts, batches.len());
        }
        Ok(sums)
    })
}

/// Two-step training on the novel shots with `α = 0`, the finetune schedule
/// and the few-shot batch size.
pub fn finetune_fsl(
    model: &mut CashModel,
    shots: &SignalDataset,
    cfg: &TrainConfig,
    log: &mut Vec<EpochRecord>,
) -> Result<()> {
    if model.mode() != ModelMode::Fsl {
        return Err(CashError::InvalidParameter("finetuning needs a few-shot model".into()));
    }
    let cfg = TrainConfig { fsl_mode: true, ..cfg.clone() };
    step1_with(model, shots, &cfg, &cfg.fsl_finetune, cfg.fsl_batch_size, log)?;
    step2_with(model, shots, &cfg, &cfg.fsl_finetune, cfg.fsl_batch_size, log)
}
