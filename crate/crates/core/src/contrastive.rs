//! Supervised contrastive objective shared by the encoder, the hasher and
//! the hash-code similarity constraint:
//!
//! `L = −Σ_p 1/|I(p)| Σ_{q∈I(p)} log( exp(s_pq) / Σ_{k≠p} exp(s_pk) )`,
//! `s_pk = f_p · f_k / τ`, where `I(p)` holds the other samples sharing
//! anchor `p`'s label. The sum runs over anchors without normalization.

use crate::error::{CashError, Result};
use crate::nn::dot;

/// A loss value together with its gradient for every input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

pub fn supervised_contrastive<F, L>(features: &[F], labels: &[L], temperature: f64) -> Result<LossGrad>
where
    F: AsRef<[f64]>,
    L: PartialEq,
{
    let n = features.len();
    if labels.len() != n {
        return Err(CashError::DimensionMismatch { context: "contrastive labels", expected: n, actual: labels.len() });
    }
    if n == 0 {
        return Err(CashError::Empty("contrastive batch"));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(CashError::InvalidParameter(format!("temperature {temperature}")));
    }
    let dim = features[0].as_ref().len();
    if let Some(bad) = features.iter().find(|f| f.as_ref().len() != dim) {
        return Err(CashError::DimensionMismatch {
            context: "contrastive features",
            expected: dim,
            actual: bad.as_ref().len(),
        });
    }

    let f: Vec<&[f64]> = features.iter().map(|v| v.as_ref()).collect();
    let mut sims = vec![0.0; n * n];
    for p in 0..n {
        for k in p + 1..n {
            let s = dot(f[p], f[k]) / temperature;
            sims[p * n + k] = s;
            sims[k * n + p] = s;
        }
    }

    let mut value = 0.0;
    let mut grads = vec![vec![0.0; dim]; n];
    let mut coeff = vec![0.0; n];
    for p in 0..n {
        let positives = (0..n).filter(|&q| q != p && labels[q] == labels[p]).count();
        if positives == 0 {
            return Err(CashError::NoPositive { anchor: p });
        }
        let row = &sims[p * n..(p + 1) * n];
        let max = (0..n).filter(|&k| k != p).map(|k| row[k]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&k| k != p).map(|k| (row[k] - max).exp()).sum();
        let lse = max + denom.ln();
        let inv_pos = 1.0 / positives as f64;
        let mut pos_sum = 0.0;
        for k in 0..n {
            if k == p {
                coeff[k] = 0.0;
                continue;
            }
            let is_pos = labels[k] == labels[p];
            if is_pos {
                pos_sum += row[k];
            }
            coeff[k] = (row[k] - lse).exp() - if is_pos { inv_pos } else { 0.0 };
        }
        value += lse - pos_sum * inv_pos;
        for k in 0..n {
            let c = coeff[k] / temperature;
            if c == 0.0 {
                continue;
            }
            for d in 0..dim {
                grads[p][d] += c * f[k][d];
                grads[k][d] += c * f[p][d];
            }
        }
    }
    Ok(LossGrad { value, grads })
}
