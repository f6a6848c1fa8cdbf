//! Repeated seeded trials over one experiment axis, with CSV rows per trial
//! and mean/standard deviation per axis value.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Criterion, EvalReport};
use crate::error::{CashError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    CodeLength,
    SeenCount,
    Shots,
}

impl SweepAxis {
    pub fn validate(self, value: usize) -> Result<()> {
        if value == 0 {
            let what = match self {
                SweepAxis::CodeLength => "code length",
                SweepAxis::SeenCount => "seen emitter count",
                SweepAxis::Shots => "shot count",
            };
            return Err(CashError::InvalidParameter(format!("{what} must be at least 1")));
        }
        Ok(())
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub criterion: Criterion,
    pub acc_all: f64,
    pub acc_seen: Option<f64>,
    pub acc_novel: Option<f64>,
    pub collision_rate: Option<f64>,
    pub wall_seconds: f64,
    pub seed: u64,
    pub axis: Option<SweepAxis>,
    pub value: Option<usize>,
}

impl TrialRow {
    pub fn from_report(trial: usize, seed: u64, wall_seconds: f64, r: &EvalReport) -> Self {
        Self {
            trial,
            criterion: r.criterion,
            acc_all: r.acc_all,
            acc_seen: r.acc_seen,
            acc_novel: r.acc_novel,
            collision_rate: r.collision_rate,
            wall_seconds,
            seed,
            axis: None,
            value: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Sample mean and (n − 1) standard deviation; `None` for no values.
pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Some(MeanStd { mean, std: var.sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub axis: Option<SweepAxis>,
    pub value: Option<usize>,
    pub criterion: Criterion,
    pub trials: usize,
    pub acc_all: MeanStd,
    pub acc_seen: Option<MeanStd>,
    pub acc_novel: Option<MeanStd>,
    pub collision_rate: Option<MeanStd>,
}

/// Groups rows by axis value and criterion.
pub fn aggregate(rows: &[TrialRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(Option<usize>, Criterion), Vec<&TrialRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.value, r.criterion)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((value, criterion), rs)| {
            let pick = |f: fn(&TrialRow) -> Option<f64>| mean_std(&rs.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            Aggregate {
                axis: rs[0].axis,
                value,
                criterion,
                trials: rs.len(),
                acc_all: pick(|r| Some(r.acc_all)).expect("nonempty group"),
                acc_seen: pick(|r| r.acc_seen),
                acc_novel: pick(|r| r.acc_novel),
                collision_rate: pick(|r| r.collision_rate),
            }
        })
        .collect()
}

/// Runs `trials` seeded repetitions for every axis value. Trial `k` uses
/// seed `base_seed + k`, so each value sees the same seeds.
pub fn sweep<F>(axis: SweepAxis, values: &[usize], trials: usize, base_seed: u64, mut run: F) -> Result<Vec<TrialRow>>
where
    F: FnMut(usize, u64) -> Result<Vec<EvalReport>>,
{
    for &v in values {
        axis.validate(v)?;
    }
    if trials == 0 {
        return Err(CashError::InvalidParameter("at least one trial is required".into()));
    }
    let mut rows = Vec::new();
    for &value in values {
        for trial in 0..trials {
            let seed = base_seed + trial as u64;
            let start = Instant::now();
            let reports = run(value, seed)?;
            let wall = start.elapsed().as_secs_f64();
            for r in &reports {
                let mut row = TrialRow::from_report(trial, seed, wall, r);
                row.axis = Some(axis);
                row.value = Some(value);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn write_trials_csv(path: impl AsRef<Path>, rows: &[TrialRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CashError::io(path, e))
}

pub fn read_trials_csv(path: impl AsRef<Path>) -> Result<Vec<TrialRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_summary_json(path: impl AsRef<Path>, aggregates: &[Aggregate]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serde_json::to_string_pretty(aggregates)?).map_err(|e| CashError::io(path, e))
}
