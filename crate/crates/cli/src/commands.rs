use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use cash_core::eval::sweep::{
    aggregate, read_trials_csv, write_summary_json, write_trials_csv, Aggregate, SweepAxis, TrialRow,
};
use cash_core::eval::{evaluate_both, Criterion, EvalReport};
use cash_core::experiment::train_fsl_model;
use cash_core::model::{CashModel, ModelConfig, ModelMode};
use cash_core::online::{identify_stream, HashTable};
use cash_core::signal::{load_dataset, split_dataset, write_dataset, SeenSelection, Split};
use cash_core::trainer::{train, EpochRecord};

use crate::config::{DataSource, RunConfig};
use crate::manifest::RunManifest;
use crate::plot::{bar_chart, line_chart, Series};

const CRITERIA: [Criterion; 2] = [Criterion::TaskAware, Criterion::TaskAgnostic];

/// Runs `body` inside a run directory, marking the manifest complete or
/// partial. Errors still propagate to the exit status.
fn with_manifest(mut manifest: RunManifest, body: impl FnOnce(&mut RunManifest) -> Result<()>) -> Result<()> {
    let outcome = body(&mut manifest);
    manifest.finish(&outcome)?;
    outcome
}

pub fn simulate(config: RunConfig, out: &Path) -> Result<()> {
    let DataSource::Simulated(sim) = config.data.clone() else {
        bail!("simulate needs a simulated data source in the config");
    };
    let seed = config.seed();
    let manifest = RunManifest::start("simulate", out, seed, Some(config))?;
    with_manifest(manifest, |m| {
        let ds = crate::config::simulate(&sim, seed)?;
        write_dataset(&ds, m.path("dataset"))?;
        m.record("dataset/manifest.json")
    })
}

/// Trains one model on a fresh split; also used by evaluate and sweep.
pub fn train_once(config: &RunConfig, seed: u64) -> Result<(CashModel, Split, Vec<EpochRecord>)> {
    let ds = config.dataset(seed)?;
    let split = split_dataset(&ds, &config.split_config(seed))?;
    let mut cfg = config.train_config();
    cfg.seed = seed;
    let (model, log) = match config.mode {
        ModelMode::Fsl => {
            train_fsl_model(config.encoder_config(), config.code_length, &split, config.fsl_pretrain, &cfg)?
        }
        mode => {
            let mut mc = ModelConfig::new(
                mode,
                config.encoder_config(),
                config.code_length,
                split.seen.iter().copied().collect(),
            );
            if let Some(id) = mc.identifier.as_mut() {
                id.lambda = config.lambda.unwrap_or(id.lambda);
                id.gamma = config.gamma.unwrap_or(id.gamma);
            }
            let mut model = CashModel::new(mc, seed)?;
            let log = train(&mut model, &split.train, &cfg)?;
            (model, log)
        }
    };
    Ok((model, split, log))
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for it in items {
        serde_json::to_writer(&mut f, it)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).with_context(|| format!("parsing {}", path.display())))
        .collect()
}

fn loss_chart(log: &[EpochRecord]) -> String {
    let mut by_stage: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in log {
        let pts = by_stage.entry(format!("{:?}", r.stage).to_lowercase()).or_default();
        let x = pts.len() as f64 + 1.0;
        pts.push((x, r.loss));
    }
    let series: Vec<Series> = by_stage.into_iter().map(|(name, points)| Series { name, points }).collect();
    line_chart("training loss", "epoch", "loss", &series)
}

pub fn train_cmd(config: RunConfig, out: &Path) -> Result<()> {
    let seed = config.seed();
    let manifest = RunManifest::start("train", out, seed, Some(config.clone()))?;
    with_manifest(manifest, |m| {
        let (model, split, log) = train_once(&config, seed)?;
        model.save(m.path("model.json"))?;
        m.record("model.json")?;
        write_jsonl(&m.path("train_log.jsonl"), &log)?;
        m.record("train_log.jsonl")?;
        let seen: Vec<_> = split.seen.iter().collect();
        let novel: Vec<_> = split.novel.iter().collect();
        std::fs::write(
            m.path("split.json"),
            serde_json::to_string_pretty(&serde_json::json!({ "seen": seen, "novel": novel }))?,
        )?;
        m.record("split.json")?;
        std::fs::write(m.path("loss.svg"), loss_chart(&log))?;
        m.record("loss.svg")
    })
}

pub fn infer(model_path: &Path, input: &Path, table_in: Option<&Path>, out: &Path) -> Result<()> {
    let manifest = RunManifest::start("infer", out, 0, None)?;
    with_manifest(manifest, |m| {
        let model = CashModel::load(model_path).with_context(|| format!("loading model {}", model_path.display()))?;
        let stream = load_dataset(input).with_context(|| format!("loading stream {}", input.display()))?;
        let mut table = match table_in {
            Some(p) => HashTable::load(p).with_context(|| format!("loading table {}", p.display()))?,
            None => HashTable::new(),
        };
        let records = identify_stream(&model, &mut table, &stream.signals)?;
        write_jsonl(&m.path("labels.jsonl"), &records)?;
        m.record("labels.jsonl")?;
        table.save(m.path("table.json"))?;
        m.record("table.json")
    })
}

/// Runs `count` jobs on at most `workers` threads, keeping job order.
fn run_pool<T: Send>(workers: usize, count: usize, job: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, count.max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= count {
                    break;
                }
                let r = job(k);
                let failed = r.is_err();
                slots.lock().expect("worker panicked")[k] = Some(r);
                if failed {
                    next.store(count, Ordering::Relaxed);
                }
            });
        }
    });
    let slots = slots.into_inner().expect("worker panicked");
    let mut out = Vec::with_capacity(count);
    for r in slots {
        match r {
            Some(r) => out.push(r?),
            None => bail!("a trial was abandoned after an earlier failure"),
        }
    }
    Ok(out)
}

fn trial_reports(config: &RunConfig, seed: u64) -> Result<(f64, [EvalReport; 2])> {
    let start = std::time::Instant::now();
    let (model, split, _) = train_once(config, seed)?;
    let reports = evaluate_both(&model, &split.test, &split.seen, seed)?;
    Ok((start.elapsed().as_secs_f64(), reports))
}

fn criterion_rows(rows: &[TrialRow], c: Criterion) -> Vec<TrialRow> {
    rows.iter().filter(|r| r.criterion == c).cloned().collect()
}

/// `trials_<criterion>.csv` and `summary_<criterion>.json` for each criterion.
fn write_tables(m: &mut RunManifest, rows: &[TrialRow]) -> Result<Vec<Aggregate>> {
    let mut all = Vec::new();
    for c in CRITERIA {
        let subset = criterion_rows(rows, c);
        let csv = format!("trials_{c}.csv");
        write_trials_csv(m.path(&csv), &subset)?;
        m.record(&csv)?;
        let agg = aggregate(&subset);
        let json = format!("summary_{c}.json");
        write_summary_json(m.path(&json), &agg)?;
        m.record(&json)?;
        all.extend(agg);
    }
    Ok(all)
}

pub fn evaluate(config: RunConfig, out: &Path, jobs: usize) -> Result<()> {
    let seed = config.seed();
    let manifest = RunManifest::start("evaluate", out, seed, Some(config.clone()))?;
    with_manifest(manifest, |m| {
        let results = run_pool(jobs, config.trials, |k| trial_reports(&config, seed + k as u64))?;
        let mut rows = Vec::new();
        for (k, (wall, reports)) in results.iter().enumerate() {
            for r in reports {
                rows.push(TrialRow::from_report(k, seed + k as u64, *wall, r));
            }
        }
        let agg = write_tables(m, &rows)?;
        std::fs::write(m.path("accuracy.svg"), summary_chart(&agg))?;
        m.record("accuracy.svg")
    })
}

fn summary_chart(agg: &[Aggregate]) -> String {
    let groups: Vec<String> = agg.iter().map(|a| a.criterion.to_string()).collect();
    let pick = |f: fn(&Aggregate) -> Option<f64>| agg.iter().map(|a| f(a).unwrap_or(0.0)).collect::<Vec<_>>();
    bar_chart(
        "mean accuracy over trials",
        &groups,
        &[
            ("all".into(), pick(|a| Some(a.acc_all.mean))),
            ("seen".into(), pick(|a| a.acc_seen.map(|s| s.mean))),
            ("novel".into(), pick(|a| a.acc_novel.map(|s| s.mean))),
        ],
    )
}

fn with_axis_value(config: &RunConfig, axis: SweepAxis, value: usize) -> RunConfig {
    let mut c = config.clone();
    match axis {
        SweepAxis::CodeLength => c.code_length = value,
        SweepAxis::SeenCount => c.split.seen = SeenSelection::Count(value),
        SweepAxis::Shots => c.split.shots_per_novel = value,
    }
    c
}

pub fn sweep(config: RunConfig, out: &Path, jobs: usize) -> Result<()> {
    let Some(sw) = config.sweep.clone() else {
        bail!("sweep needs a `sweep` section with an axis and values");
    };
    for &v in &sw.values {
        sw.axis.validate(v)?;
    }
    let seed = config.seed();
    let manifest = RunManifest::start("sweep", out, seed, Some(config.clone()))?;
    with_manifest(manifest, |m| {
        let trials = config.trials;
        let results = run_pool(jobs, sw.values.len() * trials, |j| {
            let (vi, k) = (j / trials, j % trials);
            trial_reports(&with_axis_value(&config, sw.axis, sw.values[vi]), seed + k as u64)
        })?;
        let mut rows = Vec::new();
        for (j, (wall, reports)) in results.iter().enumerate() {
            let (vi, k) = (j / trials, j % trials);
            for r in reports {
                let mut row = TrialRow::from_report(k, seed + k as u64, *wall, r);
                row.axis = Some(sw.axis);
                row.value = Some(sw.values[vi]);
                rows.push(row);
            }
        }
        write_tables(m, &rows)?;
        for c in CRITERIA {
            let name = format!("sweep_{c}.svg");
            std::fs::write(m.path(&name), sweep_chart(&criterion_rows(&rows, c)))?;
            m.record(&name)?;
        }
        Ok(())
    })
}

fn sweep_chart(rows: &[TrialRow]) -> String {
    let agg = aggregate(rows);
    let axis = rows.first().and_then(|r| r.axis).map_or("value".to_string(), |a| format!("{a:?}"));
    let title = rows.first().map_or("sweep".to_string(), |r| format!("{} accuracy", r.criterion));
    let line = |name: &str, f: fn(&Aggregate) -> Option<f64>| Series {
        name: name.into(),
        points: agg.iter().filter_map(|a| Some((a.value? as f64, f(a)?))).collect(),
    };
    let series: Vec<Series> = [
        line("all", |a| Some(a.acc_all.mean)),
        line("seen", |a| a.acc_seen.map(|s| s.mean)),
        line("novel", |a| a.acc_novel.map(|s| s.mean)),
    ]
    .into_iter()
    .filter(|s| !s.points.is_empty())
    .collect();
    line_chart(&title, &axis, "mean accuracy", &series)
}

/// Re-renders charts from trial CSVs or training logs.
pub fn plot(inputs: &[PathBuf], out: &Path) -> Result<()> {
    if inputs.is_empty() {
        bail!("plot needs at least one --input file");
    }
    let manifest = RunManifest::start("plot", out, 0, None)?;
    with_manifest(manifest, |m| {
        for input in inputs {
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot").to_string();
            let svg = match input.extension().and_then(|e| e.to_str()) {
                Some("csv") => {
                    let rows = read_trials_csv(input).with_context(|| format!("reading {}", input.display()))?;
                    if rows.iter().any(|r| r.axis.is_some()) {
                        sweep_chart(&rows)
                    } else {
                        summary_chart(&aggregate(&rows))
                    }
                }
                Some("jsonl") => loss_chart(&read_jsonl::<EpochRecord>(input)?),
                _ => bail!("cannot plot {}: expected a .csv trial table or a .jsonl training log", input.display()),
            };
            let name = format!("{stem}.svg");
            std::fs::write(m.path(&name), svg)?;
            m.record(&name)?;
        }
        Ok(())
    })
}
