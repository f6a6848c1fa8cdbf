//! Signal encoder: an embedding extractor over `2 x l` IQ windows and a
//! small enhancer MLP whose output feeds the supervised contrastive loss.

use serde::{Deserialize, Serialize};

use crate::contrastive::{supervised_contrastive, LossGrad};
use crate::error::{CashError, Result};
use crate::nn::{
    l2_normalize, l2_normalize_backward, prefixed, ComplexConv1d, Conv1d, Layer, Linear, Mlp, MlpCache, Network,
    NetworkCache, ParamView, Parameterized, Shape,
};
use crate::rng::Rng;
use crate::signal::IqSignal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneConfig {
    /// Three real 1-D convolution blocks, global average pooling and a
    /// dense layer.
    DeskSmall { channels: [usize; 3], kernel: usize, stride: usize },
    /// Complex-valued CNN: `layers` blocks of complex convolution, ReLU on
    /// both parts and max pooling, then a dense layer.
    PaperCvcnn { layers: usize, channels: usize, kernel: usize, pool: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub backbone: BackboneConfig,
    pub input_length: usize,
    pub embedding_dim: usize,
    pub enhancer_hidden: usize,
    pub enhancer_dim: usize,
    pub normalize_enhanced: bool,
    /// Divisor of the inner products in the contrastive loss; 1 keeps the
    /// raw inner product.
    pub temperature: f64,
}

impl EncoderConfig {
    /// 9-layer CVCNN, l = 4000, 768-d embeddings, 12-d enhanced features.
    pub fn paper() -> Self {
        Self {
            backbone: BackboneConfig::PaperCvcnn { layers: 9, channels: 64, kernel: 3, pool: 2 },
            input_length: 4000,
            embedding_dim: 768,
            enhancer_hidden: 256,
            enhancer_dim: 12,
            normalize_enhanced: true,
            temperature: 1.0,
        }
    }

    pub fn desk() -> Self {
        Self {
            backbone: BackboneConfig::DeskSmall { channels: [16, 32, 32], kernel: 5, stride: 2 },
            input_length: 128,
            embedding_dim: 32,
            enhancer_hidden: 32,
            enhancer_dim: 12,
            normalize_enhanced: true,
            temperature: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.input_length, self.embedding_dim, self.enhancer_hidden, self.enhancer_dim];
        if positive.contains(&0) {
            return Err(CashError::InvalidParameter("encoder dimensions must be positive".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(CashError::InvalidParameter(format!("temperature {}", self.temperature)));
        }
        match &self.backbone {
            BackboneConfig::DeskSmall { channels, kernel, stride } => {
                if channels.contains(&0) || *kernel == 0 || *stride == 0 {
                    return Err(CashError::InvalidParameter("desk backbone sizes must be positive".into()));
                }
            }
            BackboneConfig::PaperCvcnn { layers, channels, kernel, pool } => {
                if *layers == 0 || *channels == 0 || *kernel == 0 || *pool == 0 {
                    return Err(CashError::InvalidParameter("cvcnn sizes must be positive".into()));
                }
                if self.input_length / pool.pow(*layers as u32) == 0 {
                    return Err(CashError::InvalidParameter(format!(
                        "input length {} vanishes after {layers} pooling stages",
                        self.input_length
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Output of the extractor, `e = E(r̃)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

/// Output of the enhancer, `A(e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedFeature(pub Vec<f64>);

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for EnhancedFeature {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn build_backbone(cfg: &EncoderConfig, rng: &mut Rng) -> Network {
    let input = Shape { channels: 2, len: cfg.input_length };
    let mut layers = Vec::new();
    let mut shape = input;
    let push = |layer: Layer, layers: &mut Vec<Layer>, shape: &mut Shape| {
        *shape = layer.output_shape(*shape);
        layers.push(layer);
    };
    match &cfg.backbone {
        BackboneConfig::DeskSmall { channels, kernel, stride } => {
            let mut cin = 2;
            for &cout in channels {
                push(Layer::Conv(Conv1d::new(cin, cout, *kernel, *stride, rng)), &mut layers, &mut shape);
                push(Layer::Relu, &mut layers, &mut shape);
                cin = cout;
            }
            push(Layer::GlobalAvgPool, &mut layers, &mut shape);
        }
        BackboneConfig::PaperCvcnn { layers: depth, channels, kernel, pool } => {
            let mut cin = 1;
            for _ in 0..*depth {
                let conv = ComplexConv1d::new(cin, *channels, *kernel, 1, rng);
                push(Layer::ComplexConv(conv), &mut layers, &mut shape);
                push(Layer::Relu, &mut layers, &mut shape);
                push(Layer::MaxPool(*pool), &mut layers, &mut shape);
                cin = *channels;
            }
        }
    }
    let dense = Linear::new(shape.size(), cfg.embedding_dim, rng);
    push(Layer::Dense(dense), &mut layers, &mut shape);
    Network::new(input, layers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalEncoder {
    pub config: EncoderConfig,
    pub extractor: Network,
    pub enhancer: Mlp,
}

/// Cached forward pass of one input window.
#[derive(Debug, Clone)]
pub struct EncoderPass {
    pub embedding: Embedding,
    pub feature: EnhancedFeature,
    extractor_cache: NetworkCache,
    enhancer_cache: MlpCache,
    /// Pre-normalization enhancer output and its norm.
    raw: Option<(Vec<f64>, f64)>,
}

impl SignalEncoder {
    pub fn new(config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let extractor = build_backbone(&config, rng);
        let enhancer = Mlp::new(
            &[config.embedding_dim, config.enhancer_hidden, config.enhancer_hidden, config.enhancer_dim],
            false,
            rng,
        );
        Ok(Self { config, extractor, enhancer })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        let expected = 2 * self.config.input_length;
        if x.len() != expected {
            return Err(CashError::DimensionMismatch { context: "encoder input", expected, actual: x.len() });
        }
        Ok(())
    }

    pub fn extract_embedding(&self, signal: &IqSignal) -> Result<Embedding> {
        if signal.len() != self.config.input_length {
            return Err(CashError::DimensionMismatch {
                context: "signal length",
                expected: self.config.input_length,
                actual: signal.len(),
            });
        }
        Ok(self.embed_channels(&signal.to_channels()))
    }

    /// Embedding of a channel-major `2 x l` buffer.
    pub fn embed_channels(&self, x: &[f64]) -> Embedding {
        Embedding(self.extractor.forward(x))
    }

    pub fn enhance(&self, e: &Embedding) -> Result<EnhancedFeature> {
        if e.0.len() != self.config.embedding_dim {
            return Err(CashError::DimensionMismatch {
                context: "enhancer input",
                expected: self.config.embedding_dim,
                actual: e.0.len(),
            });
        }
        let raw = self.enhancer.forward(&e.0);
        Ok(EnhancedFeature(if self.config.normalize_enhanced { l2_normalize(&raw).0 } else { raw }))
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<EncoderPass> {
        self.check_input(x)?;
        let (emb, extractor_cache) = self.extractor.forward_cached(x);
        let (out, enhancer_cache) = self.enhancer.forward_cached(&emb);
        let (feature, raw) = if self.config.normalize_enhanced {
            let (y, norm) = l2_normalize(&out);
            (y, Some((out, norm)))
        } else {
            (out, None)
        };
        Ok(EncoderPass {
            embedding: Embedding(emb),
            feature: EnhancedFeature(feature),
            extractor_cache,
            enhancer_cache,
            raw,
        })
    }

    /// Back-propagates gradients arriving at the enhanced feature and, from
    /// other heads, directly at the embedding.
    pub fn backward(
        &self,
        pass: &EncoderPass,
        d_feature: Option<&[f64]>,
        d_embedding: Option<&[f64]>,
        grad: &mut SignalEncoder,
    ) {
        let mut d_emb = vec![0.0; self.config.embedding_dim];
        if let Some(df) = d_feature {
            let d_out = match &pass.raw {
                Some((_, norm)) => l2_normalize_backward(&pass.feature.0, *norm, df),
                None => df.to_vec(),
            };
            let de = self.enhancer.backward(&pass.enhancer_cache, &d_out, &mut grad.enhancer);
            for (a, b) in d_emb.iter_mut().zip(de) {
                *a += b;
            }
        }
        if let Some(de) = d_embedding {
            for (a, b) in d_emb.iter_mut().zip(de) {
                *a += b;
            }
        }
        self.extractor.backward(&pass.extractor_cache, &d_emb, &mut grad.extractor);
    }
}

impl Parameterized for SignalEncoder {
    fn params(&self) -> Vec<(String, ParamView<'_>)> {
        let mut v = prefixed("extractor", self.extractor.params());
        v.extend(prefixed("enhancer", self.enhancer.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.extractor.params_mut();
        v.extend(self.enhancer.params_mut());
        v
    }
}

/// `L_E` over a batch of enhanced features (two views per signal).
pub fn supcon_loss<L: PartialEq>(features: &[EnhancedFeature], labels: &[L], temperature: f64) -> Result<LossGrad> {
    supervised_contrastive(features, labels, temperature)
}

/// Instance discrimination: the contrastive loss with one positive per
/// anchor, its other view. Every instance id must occur exactly twice.
pub fn instance_contrastive_loss<F: AsRef<[f64]>>(
    features: &[F],
    instance_ids: &[usize],
    temperature: f64,
) -> Result<LossGrad> {
    let mut counts = std::collections::BTreeMap::new();
    for &id in instance_ids {
        *counts.entry(id).or_insert(0usize) += 1;
    }
    if let Some((&instance, &views)) = counts.iter().find(|(_, &c)| c != 2) {
        return Err(CashError::ViewCount { instance, views });
    }
    supervised_contrastive(features, instance_ids, temperature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::tests::reference;
    use crate::gradcheck::{central_difference, check_module, max_relative_error};
    use crate::rng;
    use rand::Rng as _;

    fn tiny_config(backbone: BackboneConfig, normalize: bool) -> EncoderConfig {
        EncoderConfig {
            backbone,
            input_length: 24,
            embedding_dim: 6,
            enhancer_hidden: 5,
            enhancer_dim: 4,
            normalize_enhanced: normalize,
            temperature: 1.0,
        }
    }

    fn desk_tiny() -> BackboneConfig {
        BackboneConfig::DeskSmall { channels: [3, 4, 4], kernel: 3, stride: 2 }
    }

    fn cvcnn_tiny() -> BackboneConfig {
        BackboneConfig::PaperCvcnn { layers: 2, channels: 2, kernel: 3, pool: 2 }
    }

    fn random_input(r: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn paper_preset_shapes() {
        let mut r = rng::stream(0, "enc");
        let enc = SignalEncoder::new(EncoderConfig::paper(), &mut r).unwrap();
        assert_eq!(enc.extractor.output_shape().channels, 768);
        // 9 complex conv blocks each followed by ReLU and pooling, plus the dense layer
        let convs = enc.extractor.layers.iter().filter(|l| matches!(l, Layer::ComplexConv(_))).count();
        assert_eq!(convs, 9);
        let e = Embedding(vec![0.1; 768]);
        assert_eq!(enc.enhance(&e).unwrap().0.len(), 12);
    }

    #[test]
    fn paper_preset_embeds_a_4000_sample_window() {
        let mut r = rng::stream(0, "enc");
        let cfg = EncoderConfig {
            backbone: BackboneConfig::PaperCvcnn { layers: 9, channels: 4, kernel: 3, pool: 2 },
            ..EncoderConfig::paper()
        };
        let enc = SignalEncoder::new(cfg, &mut r).unwrap();
        let x = random_input(&mut r, 8000);
        assert_eq!(enc.embed_channels(&x).0.len(), 768);
    }

    #[test]
    fn embedding_is_deterministic_and_length_checked() {
        let mut r = rng::stream(1, "enc");
        let enc = SignalEncoder::new(tiny_config(desk_tiny(), true), &mut r).unwrap();
        let p = crate::signal::profile_bank(1, 0)[0].clone();
        let s = crate::signal::simulate_emitter_signal(&p, 24, 20.0, 1).unwrap();
        assert_eq!(enc.extract_embedding(&s).unwrap(), enc.extract_embedding(&s).unwrap());
        let short = crate::signal::simulate_emitter_signal(&p, 20, 20.0, 1).unwrap();
        assert!(enc.extract_embedding(&short).is_err());
        assert!(enc.enhance(&Embedding(vec![0.0; 5])).is_err());
    }

    #[test]
    fn normalized_features_have_unit_norm() {
        let mut r = rng::stream(2, "enc");
        let enc = SignalEncoder::new(tiny_config(desk_tiny(), true), &mut r).unwrap();
        for _ in 0..10 {
            let e = Embedding(random_input(&mut r, 6));
            let f = enc.enhance(&e).unwrap();
            let norm = crate::nn::dot(&f.0, &f.0).sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    /// Gradient of a random linear functional of the embedding (and of the
    /// feature) against central differences, for both backbones.
    #[test]
    fn encoder_gradients_match_finite_differences() {
        for (backbone, normalize) in [(desk_tiny(), true), (cvcnn_tiny(), false), (desk_tiny(), false)] {
            let mut r = rng::stream(3, "enc-grad");
            let enc = SignalEncoder::new(tiny_config(backbone, normalize), &mut r).unwrap();
            let x = random_input(&mut r, 48);
            let we = random_input(&mut r, 6);
            let wf = random_input(&mut r, 4);
            let objective = |m: &SignalEncoder| {
                let p = m.forward_cached(&x).unwrap();
                crate::nn::dot(&p.embedding.0, &we) + crate::nn::dot(&p.feature.0, &wf)
            };
            let pass = enc.forward_cached(&x).unwrap();
            let mut grad = enc.zeros_like();
            enc.backward(&pass, Some(&wf), Some(&we), &mut grad);
            let err = check_module(&enc, &grad, 40, &mut r, objective);
            assert!(err <= 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn identical_unit_features_give_4_log_3() {
        let f = vec![EnhancedFeature(vec![1.0, 0.0]); 4];
        let l = supcon_loss(&f, &[0, 0, 1, 1], 1.0).unwrap().value;
        assert!((l - 4.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn collinear_orthogonal_fixture() {
        // class 0 along e1, class 1 along e2. For each anchor the candidates
        // are one positive (dot 1) and two negatives (dot 0):
        // term = −log(e / (e + 2)), four anchors.
        let e1 = EnhancedFeature(vec![1.0, 0.0]);
        let e2 = EnhancedFeature(vec![0.0, 1.0]);
        let f = vec![e1.clone(), e1, e2.clone(), e2];
        let l = supcon_loss(&f, &[0, 0, 1, 1], 1.0).unwrap().value;
        let e = std::f64::consts::E;
        let expected = -4.0 * (e / (e + 2.0)).ln();
        assert!((l - expected).abs() < 1e-9);
        assert!((expected - 2.2057789).abs() < 1e-6);
    }

    #[test]
    fn clustered_features_beat_permuted_labels() {
        for seed in 0..20 {
            let mut r = rng::stream(seed, "perm");
            let centers: Vec<Vec<f64>> = (0..3).map(|_| random_input(&mut r, 4)).collect();
            let labels: Vec<usize> = (0..12).map(|k| k % 3).collect();
            let feats: Vec<EnhancedFeature> = labels
                .iter()
                .map(|&c| {
                    let noisy: Vec<f64> = centers[c].iter().map(|v| v + 0.05 * r.random_range(-1.0..1.0)).collect();
                    EnhancedFeature(l2_normalize(&noisy).0)
                })
                .collect();
            let mut permuted = labels.clone();
            use rand::seq::SliceRandom;
            permuted.shuffle(&mut r);
            let a = supcon_loss(&feats, &labels, 1.0).unwrap().value;
            let b = supcon_loss(&feats, &permuted, 1.0).unwrap().value;
            assert!(a < b || permuted == labels, "seed {seed}: {a} vs {b}");
        }
    }

    #[test]
    fn supcon_gradient_matches_finite_differences() {
        let mut r = rng::stream(5, "sc");
        let feats: Vec<Vec<f64>> = (0..8).map(|_| random_input(&mut r, 4)).collect();
        let labels = [0usize, 1, 2, 0, 1, 2, 0, 1];
        let lg = supervised_contrastive(&feats, &labels, 1.0).unwrap();
        let flat: Vec<f64> = feats.concat();
        let numeric = central_difference(
            |x| {
                let f: Vec<Vec<f64>> = x.chunks(4).map(<[f64]>::to_vec).collect();
                reference(&f, &labels, 1.0)
            },
            &flat,
        );
        assert!(max_relative_error(&lg.grads.concat(), &numeric) <= 1e-4);
    }

    #[test]
    fn instance_loss_reduces_to_supcon() {
        let mut r = rng::stream(6, "inst");
        let feats: Vec<Vec<f64>> = (0..6).map(|_| random_input(&mut r, 3)).collect();
        let ids = [0usize, 1, 2, 0, 1, 2];
        let a = instance_contrastive_loss(&feats, &ids, 1.0).unwrap();
        let b = supervised_contrastive(&feats, &ids, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            instance_contrastive_loss(&feats, &[0, 0, 0, 1, 1, 2], 1.0),
            Err(CashError::ViewCount { instance: 0, views: 3 })
        ));
    }

    #[test]
    fn instance_loss_hand_fixture() {
        // two instances, identical views within, orthogonal across:
        // each anchor: −log(e / (e + 2)) as in the supervised fixture.
        let f = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let l = instance_contrastive_loss(&f, &[0, 1, 0, 1], 1.0).unwrap().value;
        let e = std::f64::consts::E;
        assert!((l + 4.0 * (e / (e + 2.0)).ln()).abs() < 1e-9);
    }
}
