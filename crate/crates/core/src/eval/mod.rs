//! Clustering accuracy of online identities against ground truth, split by
//! seen and novel emitters, plus collision measurement and sweeps.

mod hungarian;
pub mod sweep;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use hungarian::{hungarian_accuracy, hungarian_assignment, max_weight_assignment, Assignment};

use crate::error::{CashError, Result};
use crate::model::CashModel;
use crate::online::{encode, CollisionCode, HashTable};
use crate::rng;
use crate::signal::{EmitterId, SignalDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Seen and novel test subsets are identified with separate tables.
    TaskAware,
    /// One table over the whole test stream.
    TaskAgnostic,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::TaskAware => "task_aware",
            Criterion::TaskAgnostic => "task_agnostic",
        })
    }
}

/// Counts of predicted identity (rows) against true emitter (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub predicted: Vec<usize>,
    pub truth: Vec<EmitterId>,
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn new(preds: &[usize], truths: &[EmitterId]) -> Self {
        let predicted: Vec<usize> = preds.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let truth: Vec<EmitterId> = truths.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let mut counts = vec![vec![0; truth.len()]; predicted.len()];
        for (p, t) in preds.iter().zip(truths) {
            let i = predicted.binary_search(p).unwrap();
            let j = truth.binary_search(t).unwrap();
            counts[i][j] += 1;
        }
        Self { predicted, truth, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub criterion: Criterion,
    pub acc_all: f64,
    /// Absent when the test set has no samples of that kind.
    pub acc_seen: Option<f64>,
    pub acc_novel: Option<f64>,
    /// Only defined for the joint (task-agnostic) assignment.
    pub collision_rate: Option<f64>,
    pub n_seen: usize,
    pub n_novel: usize,
    pub correct_seen: usize,
    pub correct_novel: usize,
    pub identities: usize,
    pub confusion: Confusion,
}

/// Fraction of samples whose predicted identity also holds samples of the
/// other kind (seen versus novel).
pub fn collision_rate(assignments: &[usize], truths: &[EmitterId], seen: &BTreeSet<EmitterId>) -> f64 {
    if assignments.is_empty() {
        return 0.0;
    }
    let mut kinds: BTreeMap<usize, (bool, bool)> = BTreeMap::new();
    for (a, t) in assignments.iter().zip(truths) {
        let k = kinds.entry(*a).or_default();
        if seen.contains(t) {
            k.0 = true;
        } else {
            k.1 = true;
        }
    }
    let mixed = assignments.iter().filter(|a| kinds[a] == (true, true)).count();
    mixed as f64 / assignments.len() as f64
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Identities for `indices` in order from a fresh table.
fn stream_labels(codes: &[CollisionCode], indices: &[usize]) -> Result<Vec<usize>> {
    let mut table = HashTable::new();
    indices.iter().map(|&i| table.identify(&codes[i])).collect()
}

/// Scores precomputed codes. The arrival order is a seeded shuffle of the
/// test set.
pub fn evaluate_codes(
    codes: &[CollisionCode],
    truths: &[EmitterId],
    seen: &BTreeSet<EmitterId>,
    criterion: Criterion,
    seed: u64,
) -> Result<EvalReport> {
    if codes.len() != truths.len() {
        return Err(CashError::DimensionMismatch {
            context: "codes vs truths",
            expected: truths.len(),
            actual: codes.len(),
        });
    }
    if codes.is_empty() {
        return Err(CashError::Empty("test set"));
    }
    let mut order: Vec<usize> = (0..codes.len()).collect();
    order.shuffle(&mut rng::stream(seed, "stream-order"));
    let is_seen = |i: &usize| seen.contains(&truths[*i]);
    let n_seen = order.iter().filter(|i| is_seen(i)).count();
    let n_novel = order.len() - n_seen;

    let (preds, ordered_truths, correct_seen, correct_novel, collision) = match criterion {
        Criterion::TaskAgnostic => {
            let preds = stream_labels(codes, &order)?;
            let t: Vec<EmitterId> = order.iter().map(|&i| truths[i]).collect();
            let a = hungarian_assignment(&preds, &t)?;
            let (mut cs, mut cn) = (0, 0);
            for (k, i) in order.iter().enumerate() {
                if a.is_correct(&preds[k], &t[k]) {
                    if is_seen(i) {
                        cs += 1;
                    } else {
                        cn += 1;
                    }
                }
            }
            let c = collision_rate(&preds, &t, seen);
            (preds, t, cs, cn, Some(c))
        }
        Criterion::TaskAware => {
            let mut preds = Vec::new();
            let mut t = Vec::new();
            let mut correct = [0usize; 2];
            let subsets: [Vec<usize>; 2] = [
                order.iter().copied().filter(is_seen).collect(),
                order.iter().copied().filter(|i| !is_seen(i)).collect(),
            ];
            for (k, subset) in subsets.iter().enumerate() {
                if subset.is_empty() {
                    continue;
                }
                let offset = preds.iter().max().map_or(0, |m| m + 1);
                let p = stream_labels(codes, subset)?;
                let st: Vec<EmitterId> = subset.iter().map(|&i| truths[i]).collect();
                correct[k] = hungarian_assignment(&p, &st)?.correct;
                preds.extend(p.iter().map(|x| x + offset));
                t.extend(st);
            }
            (preds, t, correct[0], correct[1], None)
        }
    };
    Ok(EvalReport {
        criterion,
        acc_all: (correct_seen + correct_novel) as f64 / codes.len() as f64,
        acc_seen: ratio(correct_seen, n_seen),
        acc_novel: ratio(correct_novel, n_novel),
        collision_rate: collision,
        n_seen,
        n_novel,
        correct_seen,
        correct_novel,
        identities: preds.iter().collect::<BTreeSet<_>>().len(),
        confusion: Confusion::new(&preds, &ordered_truths),
    })
}

pub fn encode_all(model: &CashModel, test: &SignalDataset) -> Result<(Vec<CollisionCode>, Vec<EmitterId>)> {
    let mut codes = Vec::with_capacity(test.len());
    let mut truths = Vec::with_capacity(test.len());
    for s in &test.signals {
        truths.push(s.emitter_id.ok_or_else(|| CashError::InvalidParameter("unlabeled test signal".into()))?);
        codes.push(encode(model, s)?);
    }
    Ok((codes, truths))
}

pub fn evaluate(
    model: &CashModel,
    test: &SignalDataset,
    seen: &BTreeSet<EmitterId>,
    criterion: Criterion,
    seed: u64,
) -> Result<EvalReport> {
    let (codes, truths) = encode_all(model, test)?;
    evaluate_codes(&codes, &truths, seen, criterion, seed)
}

/// Both criteria from a single encoding pass.
pub fn evaluate_both(
    model: &CashModel,
    test: &SignalDataset,
    seen: &BTreeSet<EmitterId>,
    seed: u64,
) -> Result<[EvalReport; 2]> {
    let (codes, truths) = encode_all(model, test)?;
    Ok([
        evaluate_codes(&codes, &truths, seen, Criterion::TaskAware, seed)?,
        evaluate_codes(&codes, &truths, seen, Criterion::TaskAgnostic, seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hasher::BinaryCode;

    fn code(id: usize, a: i8) -> CollisionCode {
        let bits = (0..4).map(|b| if id >> b & 1 == 1 { 1 } else { -1 }).collect();
        CollisionCode::new(BinaryCode(bits), a).unwrap()
    }

    fn seen() -> BTreeSet<EmitterId> {
        [0, 1].into_iter().collect()
    }

    #[test]
    fn collision_rate_fixtures() {
        let s = seen();
        assert_eq!(collision_rate(&[0, 0, 1, 1], &[0, 1, 2, 3], &s), 0.0);
        // cluster 5 holds two seen and two novel samples out of ten
        let a = [5, 5, 5, 5, 1, 2, 3, 4, 6, 7];
        let t = [0, 1, 2, 3, 0, 1, 2, 3, 2, 3];
        assert!((collision_rate(&a, &t, &s) - 0.4).abs() < 1e-15);
        let singletons: Vec<usize> = (0..10).collect();
        assert_eq!(collision_rate(&singletons, &t, &s), 0.0);
        assert_eq!(collision_rate(&[], &[], &s), 0.0);
    }

    #[test]
    fn single_emitter_constant_model_is_perfect() {
        let codes = vec![code(3, 1); 7];
        let truths = vec![1; 7];
        for c in [Criterion::TaskAware, Criterion::TaskAgnostic] {
            let r = evaluate_codes(&codes, &truths, &seen(), c, 0).unwrap();
            assert_eq!(r.acc_all, 1.0);
            assert_eq!(r.acc_novel, None);
        }
    }

    #[test]
    fn indicator_removes_collision_and_task_aware_splits() {
        // seen class 0 and novel class 2 share hash bits; only the indicator
        // tells them apart
        let truths = vec![0, 0, 0, 2, 2, 2, 1, 1];
        let with =
            vec![code(1, 1), code(1, 1), code(1, 1), code(1, -1), code(1, -1), code(1, -1), code(2, 1), code(2, 1)];
        let without: Vec<CollisionCode> =
            with.iter().map(|c| CollisionCode::new(BinaryCode(c.bits().to_vec()), 1).unwrap()).collect();
        let s = seen();
        let a = evaluate_codes(&with, &truths, &s, Criterion::TaskAgnostic, 3).unwrap();
        assert_eq!(a.acc_all, 1.0);
        assert_eq!(a.collision_rate, Some(0.0));
        let b = evaluate_codes(&without, &truths, &s, Criterion::TaskAgnostic, 3).unwrap();
        assert!((b.collision_rate.unwrap() - 0.75).abs() < 1e-15);
        assert!((b.acc_all - 5.0 / 8.0).abs() < 1e-15);
        assert_eq!(b.correct_seen + b.correct_novel, 5);
        // task-aware matching never sees the collision
        let c = evaluate_codes(&without, &truths, &s, Criterion::TaskAware, 3).unwrap();
        assert_eq!(c.acc_all, 1.0);
        assert_eq!((c.acc_seen, c.acc_novel), (Some(1.0), Some(1.0)));
        assert_eq!(c.collision_rate, None);
    }

    #[test]
    fn acc_all_is_count_weighted() {
        let truths = vec![0, 0, 1, 1, 1, 2, 2, 3, 3, 3];
        let codes: Vec<CollisionCode> = [0, 1, 1, 1, 2, 3, 3, 3, 4, 4].iter().map(|&i| code(i, 1)).collect();
        for c in [Criterion::TaskAware, Criterion::TaskAgnostic] {
            let r = evaluate_codes(&codes, &truths, &seen(), c, 9).unwrap();
            let combined = (r.acc_seen.unwrap() * r.n_seen as f64 + r.acc_novel.unwrap() * r.n_novel as f64) / 10.0;
            assert!((combined - r.acc_all).abs() < 1e-12);
            let total: usize = r.confusion.counts.iter().flatten().sum();
            assert_eq!(total, 10);
        }
    }

    #[test]
    fn arrival_order_only_changes_label_names() {
        let truths: Vec<EmitterId> = (0..30).map(|k| k % 4).collect();
        let codes: Vec<CollisionCode> = (0..30).map(|k| code(k % 3, if k % 4 < 2 { 1 } else { -1 })).collect();
        let a = evaluate_codes(&codes, &truths, &seen(), Criterion::TaskAgnostic, 1).unwrap();
        let b = evaluate_codes(&codes, &truths, &seen(), Criterion::TaskAgnostic, 2).unwrap();
        assert_eq!(a.acc_all, b.acc_all);
        assert_eq!(a.collision_rate, b.collision_rate);
        assert!(evaluate_codes(&[], &[], &seen(), Criterion::TaskAware, 0).is_err());
    }
}
