//! Optimal one-to-one matching of predicted clusters to true classes.

use std::collections::BTreeMap;

use crate::error::{CashError, Result};

/// Maximum-weight perfect matching on a square matrix, `O(n³)` shortest
/// augmenting paths with potentials. Returns the column chosen for each row.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let max = weights.iter().flatten().copied().max().unwrap_or(0);
    // 1-based arrays; row 0 / column 0 are the virtual start.
    let cost = |i: usize, j: usize| max - weights[i - 1][j - 1];
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; n];
    for j in 1..=n {
        col_of[row_of[j] - 1] = j - 1;
    }
    col_of
}

/// Best injective relabeling of predicted clusters onto true classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<P, T> {
    /// Matched pairs; clusters left without a class are absent.
    pub mapping: BTreeMap<P, T>,
    pub correct: usize,
    pub total: usize,
}

impl<P: Ord, T: PartialEq> Assignment<P, T> {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    pub fn is_correct(&self, pred: &P, truth: &T) -> bool {
        self.mapping.get(pred) == Some(truth)
    }
}

/// Builds the contingency matrix, zero-pads it to square and solves the
/// matching.
pub fn hungarian_assignment<P, T>(preds: &[P], truths: &[T]) -> Result<Assignment<P, T>>
where
    P: Ord + Clone,
    T: Ord + Clone,
{
    if preds.len() != truths.len() {
        return Err(CashError::DimensionMismatch {
            context: "predictions vs truths",
            expected: truths.len(),
            actual: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(CashError::Empty("label sequence"));
    }
    let pred_ids: BTreeMap<&P, usize> =
        preds.iter().collect::<std::collections::BTreeSet<_>>().into_iter().zip(0..).collect();
    let true_ids: BTreeMap<&T, usize> =
        truths.iter().collect::<std::collections::BTreeSet<_>>().into_iter().zip(0..).collect();
    let n = pred_ids.len().max(true_ids.len());
    let mut counts = vec![vec![0i64; n]; n];
    for (p, t) in preds.iter().zip(truths) {
        counts[pred_ids[p]][true_ids[t]] += 1;
    }
    let cols = max_weight_assignment(&counts);
    let true_list: Vec<&T> = true_ids.keys().copied().collect();
    let mut mapping = BTreeMap::new();
    let mut correct = 0;
    for (p, &row) in &pred_ids {
        let col = cols[row];
        if col < true_list.len() {
            correct += counts[row][col] as usize;
            mapping.insert((*p).clone(), true_list[col].clone());
        }
    }
    Ok(Assignment { mapping, correct, total: preds.len() })
}

/// Fraction of samples correct under the best one-to-one relabeling.
pub fn hungarian_accuracy<P, T>(preds: &[P], truths: &[T]) -> Result<f64>
where
    P: Ord + Clone,
    T: Ord + Clone,
{
    Ok(hungarian_assignment(preds, truths)?.accuracy())
}
