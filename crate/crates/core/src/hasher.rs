//! Online signal hasher. A shared fully connected trunk feeds a sign head
//! `H_s` (binary attribute logits) and a confidence head `H_c`. Training
//! uses the relaxations `h = tanh(H_s(e))` and `c = tanh(H_c(e)) ⊙ H_c(e)`.

use serde::{Deserialize, Serialize};

use crate::contrastive::supervised_contrastive;
use crate::encoder::Embedding;
use crate::error::{CashError, Result};
use crate::nn::{prefixed, Linear, Mlp, MlpCache, ParamView, Parameterized};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HasherConfig {
    pub code_length: usize,
    pub input_dim: usize,
    /// Widths of the three shared trunk layers.
    pub trunk_widths: [usize; 3],
    /// With `false` the hasher is a single sign projector whose relaxed
    /// output is used directly (the vanilla hash).
    pub confidence_head: bool,
}

impl HasherConfig {
    pub fn paper_gzsl(input_dim: usize) -> Self {
        Self { code_length: 12, input_dim, trunk_widths: [512, 256, 128], confidence_head: true }
    }

    pub fn paper_fsl(input_dim: usize) -> Self {
        Self { code_length: 5, ..Self::paper_gzsl(input_dim) }
    }

    pub fn desk(input_dim: usize, code_length: usize) -> Self {
        Self { code_length, input_dim, trunk_widths: [64, 64, 32], confidence_head: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.code_length == 0 {
            return Err(CashError::InvalidParameter("code length must be at least 1".into()));
        }
        if self.input_dim == 0 || self.trunk_widths.contains(&0) {
            return Err(CashError::InvalidParameter("hasher widths must be positive".into()));
        }
        Ok(())
    }
}

/// `{−1, +1}^F` code.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryCode(pub Vec<i8>);

impl BinaryCode {
    /// `+1` for strictly positive values and `−1` for everything else.
    pub fn from_logits(logits: &[f64]) -> Self {
        BinaryCode(logits.iter().map(|&v| if v > 0.0 { 1 } else { -1 }).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Relaxed hasher outputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftHash {
    pub h_soft: Vec<f64>,
    /// All ones for the vanilla hasher.
    pub c_soft: Vec<f64>,
}

impl SoftHash {
    /// `z' = h ⊙ c`.
    pub fn feature(&self) -> Vec<f64> {
        self.h_soft.iter().zip(&self.c_soft).map(|(h, c)| h * c).collect()
    }
}

/// Smooth magnitude `x · tanh(x)` and its derivative.
fn smooth_abs(x: f64) -> (f64, f64) {
    let t = x.tanh();
    (x * t, t + x * (1.0 - t * t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hasher {
    pub config: HasherConfig,
    pub trunk: Mlp,
    pub sign_head: Linear,
    pub confidence_head: Option<Linear>,
}

#[derive(Debug, Clone)]
pub struct HasherPass {
    pub soft: SoftHash,
    trunk_cache: MlpCache,
    trunk_out: Vec<f64>,
    confidence_logits: Option<Vec<f64>>,
}

impl Hasher {
    pub fn new(config: HasherConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let [a, b, c] = config.trunk_widths;
        let trunk = Mlp::new(&[config.input_dim, a, b, c], true, rng);
        let sign_head = Linear::new(c, config.code_length, rng);
        let confidence_head = config.confidence_head.then(|| Linear::new(c, config.code_length, rng));
        Ok(Self { config, trunk, sign_head, confidence_head })
    }

    pub fn code_length(&self) -> usize {
        self.config.code_length
    }

    fn check(&self, e: &Embedding) -> Result<()> {
        if e.0.len() != self.config.input_dim {
            return Err(CashError::DimensionMismatch {
                context: "hasher input",
                expected: self.config.input_dim,
                actual: e.0.len(),
            });
        }
        Ok(())
    }

    /// Raw sign-head output `H_s(e)`.
    pub fn sign_project(&self, e: &Embedding) -> Result<Vec<f64>> {
        self.check(e)?;
        Ok(self.sign_head.forward(&self.trunk.forward(&e.0)))
    }

    pub fn hard_hash(&self, e: &Embedding) -> Result<BinaryCode> {
        Ok(BinaryCode::from_logits(&self.sign_project(e)?))
    }

    pub fn soft_hash(&self, e: &Embedding) -> Result<SoftHash> {
        Ok(self.forward_cached(e)?.soft)
    }

    pub fn forward_cached(&self, e: &Embedding) -> Result<HasherPass> {
        self.check(e)?;
        let (trunk_out, trunk_cache) = self.trunk.forward_cached(&e.0);
        let h_soft: Vec<f64> = self.sign_head.forward(&trunk_out).iter().map(|v| v.tanh()).collect();
        let (c_soft, confidence_logits) = match &self.confidence_head {
            Some(head) => {
                let logits = head.forward(&trunk_out);
                (logits.iter().map(|&x| smooth_abs(x).0).collect(), Some(logits))
            }
            None => (vec![1.0; self.code_length()], None),
        };
        Ok(HasherPass { soft: SoftHash { h_soft, c_soft }, trunk_cache, trunk_out, confidence_logits })
    }

    /// Accumulates parameter gradients and returns `dL/de`.
    pub fn backward(&self, pass: &HasherPass, dh: &[f64], dc: &[f64], grad: &mut Hasher) -> Vec<f64> {
        let ds: Vec<f64> = dh.iter().zip(&pass.soft.h_soft).map(|(g, h)| g * (1.0 - h * h)).collect();
        let mut d_trunk = self.sign_head.backward(&pass.trunk_out, &ds, &mut grad.sign_head);
        if let (Some(head), Some(logits), Some(ghead)) =
            (&self.confidence_head, &pass.confidence_logits, grad.confidence_head.as_mut())
        {
            let dx: Vec<f64> = dc.iter().zip(logits).map(|(g, &x)| g * smooth_abs(x).1).collect();
            for (a, b) in d_trunk.iter_mut().zip(head.backward(&pass.trunk_out, &dx, ghead)) {
                *a += b;
            }
        }
        self.trunk.backward(&pass.trunk_cache, &d_trunk, &mut grad.trunk)
    }
}

impl Parameterized for Hasher {
    fn params(&self) -> Vec<(String, ParamView<'_>)> {
        let mut v = prefixed("trunk", self.trunk.params());
        v.extend(prefixed("sign_head", self.sign_head.params()));
        if let Some(h) = &self.confidence_head {
            v.extend(prefixed("confidence_head", h.params()));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.trunk.params_mut();
        v.extend(self.sign_head.params_mut());
        if let Some(h) = &mut self.confidence_head {
            v.extend(h.params_mut());
        }
        v
    }
}

/// Batch loss with gradients for the sign relaxation `h` and confidence `c`
/// of every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HashLoss {
    pub value: f64,
    pub dh: Vec<Vec<f64>>,
    pub dc: Vec<Vec<f64>>,
}

impl HashLoss {
    fn zeros(batch: &[SoftHash]) -> Self {
        let f = batch.first().map_or(0, |s| s.h_soft.len());
        Self { value: 0.0, dh: vec![vec![0.0; f]; batch.len()], dc: vec![vec![0.0; f]; batch.len()] }
    }

    /// `self + weight · other`.
    pub fn add_scaled(mut self, other: &HashLoss, weight: f64) -> Self {
        self.value += weight * other.value;
        for (a, b) in self.dh.iter_mut().flatten().zip(other.dh.iter().flatten()) {
            *a += weight * b;
        }
        for (a, b) in self.dc.iter_mut().flatten().zip(other.dc.iter().flatten()) {
            *a += weight * b;
        }
        self
    }
}

/// `L_H`: the contrastive loss over `z' = h ⊙ c`.
pub fn hasher_loss<L: PartialEq>(batch: &[SoftHash], labels: &[L]) -> Result<HashLoss> {
    let feats: Vec<Vec<f64>> = batch.iter().map(SoftHash::feature).collect();
    let lg = supervised_contrastive(&feats, labels, 1.0)?;
    let mut out = HashLoss::zeros(batch);
    out.value = lg.value;
    for ((s, dz), (dh, dc)) in batch.iter().zip(&lg.grads).zip(out.dh.iter_mut().zip(out.dc.iter_mut())) {
        for i in 0..dz.len() {
            dh[i] = dz[i] * s.c_soft[i];
            dc[i] = dz[i] * s.h_soft[i];
        }
    }
    Ok(out)
}

/// `C_BIN = 1/B Σ_p (1 − ‖h_p‖₁ / F)`.
pub fn binary_constraint(batch: &[SoftHash]) -> Result<HashLoss> {
    if batch.is_empty() {
        return Err(CashError::Empty("hash batch"));
    }
    let b = batch.len() as f64;
    let mut out = HashLoss::zeros(batch);
    for (s, dh) in batch.iter().zip(out.dh.iter_mut()) {
        let f = s.h_soft.len() as f64;
        let l1: f64 = s.h_soft.iter().map(|v| v.abs()).sum();
        out.value += (1.0 - l1 / f) / b;
        for (g, v) in dh.iter_mut().zip(&s.h_soft) {
            *g = -v.signum() / (b * f);
        }
    }
    Ok(out)
}

/// `C_SIM`: the contrastive loss applied directly to the relaxed codes.
pub fn similarity_constraint<L: PartialEq>(batch: &[SoftHash], labels: &[L]) -> Result<HashLoss> {
    let feats: Vec<&[f64]> = batch.iter().map(|s| s.h_soft.as_slice()).collect();
    let lg = supervised_contrastive(&feats, labels, 1.0)?;
    let mut out = HashLoss::zeros(batch);
    out.value = lg.value;
    out.dh = lg.grads;
    Ok(out)
}

/// `L_R = C_BIN + C_SIM`.
pub fn regularizer<L: PartialEq>(batch: &[SoftHash], labels: &[L]) -> Result<HashLoss> {
    Ok(binary_constraint(batch)?.add_scaled(&similarity_constraint(batch, labels)?, 1.0))
}
