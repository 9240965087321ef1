//! Ablation matrices: named cells of config overrides, repeated over seeds,
//! with resumable output and mean ± std summaries.
//!
//! Output directory layout:
//!
//! ```text
//! runs/<cell>-s<seed>.json      RunRecord of a completed run
//! runs/<cell>-s<seed>.csv       its metrics rows
//! runs/<cell>-s<seed>.failed    error message of a failed run
//! pretrain/<variant>-s<seed>/   shared contrastive encoders and metrics
//! metrics.csv                   every run's rows, in matrix order
//! summary.csv                   one row per (cell, seed) plus a mean row per cell
//! summary.txt                   the same as a formatted table
//! ```
//!
//! Runs with a `.json` record are skipped on a rerun, so an interrupted
//! ablation resumes where it stopped. Failed runs are retried.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::evaluate::{answer_share, majority_answer};
use super::metrics::{read_metrics, rows_per_pretrain, rows_per_run, write_metrics, MetricsRow};
use super::train::{run_pretrain, train_vqa, RunRecord};
use crate::contrastive::PairVariant;
use crate::error::{Error, Result};
use crate::scene::{Dataset, ViewMode};

/// One configuration of a matrix: `(section, key, value)` overrides applied
/// on top of the base config.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub name: String,
    pub overrides: Vec<(String, String, String)>,
}

impl Cell {
    fn new(name: &str, overrides: &[(&str, &str, &str)]) -> Self {
        Cell {
            name: name.to_string(),
            overrides: overrides
                .iter()
                .map(|(s, k, v)| (s.to_string(), k.to_string(), v.to_string()))
                .collect(),
        }
    }

    pub fn apply(&self, base: &RunConfig) -> Result<RunConfig> {
        let mut cfg = base.clone();
        for (s, k, v) in &self.overrides {
            cfg.set(s, k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

const P3D: (&str, &str, &str) = ("train", "encoder", "projection-3d");
const EMBED: (&str, &str, &str) = ("model", "camera_embed", "true");
const ROT: (&str, &str, &str) = ("model", "camera_rotation", "true");

/// The named matrices: `table1` (encoder and camera conditioning),
/// `table2` (contrastive augmentation × conditioning) and `table3` (the
/// 3D cells and the upper bound, meant for a v2 dataset).
pub fn matrix(name: &str) -> Result<Vec<Cell>> {
    let upper = Cell::new("upper_bound", &[("train", "canonical_only", "true")]);
    match name {
        "table1" => Ok(vec![
            Cell::new("gru_only", &[("model", "gru_only", "true")]),
            Cell::new("film2d", &[]),
            Cell::new("film2d_embed", &[EMBED]),
            Cell::new("film3d", &[P3D]),
            Cell::new("film3d_embed", &[P3D, EMBED]),
            Cell::new("film3d_rot", &[P3D, ROT]),
            Cell::new("film3d_rot_frozen", &[P3D, ROT, ("model", "freeze_postprocessor", "true")]),
            Cell::new("film3d_embed_rot", &[P3D, EMBED, ROT]),
            upper,
        ]),
        "table2" => {
            let mut cells = Vec::new();
            for v in [PairVariant::TwoD, PairVariant::ThreeD, PairVariant::TwoPlusThreeD] {
                let tag = v.label().replace('+', "_");
                for (cond, flag) in [("embed", EMBED), ("rot", ROT)] {
                    cells.push(Cell::new(
                        &format!("contrastive_{tag}_{cond}"),
                        &[("train", "encoder", "contrastive-frozen"), ("train", "pretrain_augment", v.label()), flag],
                    ));
                }
            }
            Ok(cells)
        }
        "table3" => Ok(vec![
            Cell::new("film3d_embed", &[P3D, EMBED]),
            Cell::new("film3d_rot", &[P3D, ROT]),
            Cell::new("film3d_embed_rot", &[P3D, EMBED, ROT]),
            upper,
        ]),
        other => Err(Error::Config(format!(
            "unknown matrix {other:?}; expected table1, table2 or table3"
        ))),
    }
}

/// Dataset mode a named matrix is meant for.
pub fn matrix_mode(name: &str) -> Option<ViewMode> {
    match name {
        "table3" => Some(ViewMode::V2),
        "table1" | "table2" => Some(ViewMode::V1),
        _ => None,
    }
}

/// Parses a grid file: one cell per line, `name: section.key=value, ...`.
/// `#` starts a comment. A cell with no overrides is written `name:`.
pub fn parse_grid(text: &str) -> Result<Vec<Cell>> {
    let mut cells: Vec<Cell> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Config(format!("grid line {}: {m}", i + 1));
        let (name, rest) = line.split_once(':').ok_or_else(|| bad("expected name: overrides"))?;
        let name = name.trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(bad("cell names use letters, digits, '_' and '-'"));
        }
        if cells.iter().any(|c| c.name == name) {
            return Err(bad("duplicate cell name"));
        }
        let mut overrides = Vec::new();
        for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (path, value) = item.split_once('=').ok_or_else(|| bad("expected section.key=value"))?;
            let (section, key) = path.trim().split_once('.').ok_or_else(|| bad("expected section.key"))?;
            overrides.push((section.to_string(), key.to_string(), value.trim().to_string()));
        }
        let cell = Cell {
            name: name.to_string(),
            overrides,
        };
        cell.apply(&RunConfig::default()).map_err(|e| bad(&e.to_string()))?;
        cells.push(cell);
    }
    if cells.is_empty() {
        return Err(Error::Config("grid file defines no cells".into()));
    }
    Ok(cells)
}

#[derive(Clone, Debug)]
pub struct AblationOptions {
    pub seeds: usize,
    /// Aggregate only the `k` runs with the best validation accuracy.
    pub top_k: Option<usize>,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunOutcome {
    Done(Box<RunRecord>),
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub cell: String,
    pub runs: Vec<(u64, RunOutcome)>,
    pub val_mean: Option<f64>,
    pub val_std: Option<f64>,
    pub test_mean: Option<f64>,
    pub test_std: Option<f64>,
    /// Completed runs entering the aggregate.
    pub aggregated: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSummary {
    pub majority_answer: String,
    pub majority_val_acc: f64,
    pub majority_test_acc: f64,
    pub cells: Vec<CellSummary>,
}

impl AblationSummary {
    pub fn cell(&self, name: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.cell == name)
    }
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

fn run_id(cell: &str, seed: u64) -> String {
    format!("{cell}-s{seed}")
}

fn pretrain_dir(out: &Path, variant: PairVariant, seed: u64) -> PathBuf {
    out.join("pretrain").join(format!("{}-s{seed}", variant.label().replace('+', "_")))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_string_pretty(v)?)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

struct Job {
    cell: usize,
    seed: u64,
    cfg: RunConfig,
}

/// Runs every (cell, seed) of `cells` that has no completed record in
/// `opts.out`, then writes `metrics.csv`, `summary.csv` and `summary.txt`.
/// Seeds are `base.train.seed + i`. Runs proceed in parallel on the
/// current rayon pool; a run's failure is recorded and does not stop the
/// others. `log` receives one line per finished run.
pub fn run_ablation(
    base: &RunConfig,
    cells: &[Cell],
    data: &Dataset,
    opts: &AblationOptions,
    log: &(dyn Fn(&str) + Sync),
) -> Result<AblationSummary> {
    if opts.seeds == 0 || opts.top_k == Some(0) {
        return Err(Error::Config("need at least one seed and top_k >= 1".into()));
    }
    let runs_dir = opts.out.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    let seeds: Vec<u64> = (0..opts.seeds as u64).map(|i| base.train.seed + i).collect();
    let mut jobs = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        for &seed in &seeds {
            let mut cfg = cell.apply(base)?;
            cfg.train.seed = seed;
            jobs.push(Job { cell: ci, seed, cfg });
        }
    }

    // contrastive encoders, one per (augmentation, seed), shared across cells
    let mut needed: Vec<(PairVariant, u64, RunConfig)> = Vec::new();
    for job in &mut jobs {
        if job.cfg.model.contrastive_encoder && job.cfg.train.pretrained.is_none() {
            let v = job.cfg.train.pretrain.policy.variant;
            let dir = pretrain_dir(&opts.out, v, job.seed);
            job.cfg.train.pretrained = Some(dir.join("encoder.mrtc"));
            if !needed.iter().any(|(nv, ns, _)| *nv == v && *ns == job.seed) {
                needed.push((v, job.seed, job.cfg.clone()));
            }
        }
    }
    let pretrain_failures: Vec<(PairVariant, u64, String)> = needed
        .par_iter()
        .filter_map(|(v, seed, cfg)| {
            let dir = pretrain_dir(&opts.out, *v, *seed);
            if dir.join("encoder.mrtc").exists() && dir.join("metrics.csv").exists() {
                return None;
            }
            let id = format!("pretrain_{}-s{seed}", v.label().replace('+', "_"));
            let mut rows = Vec::new();
            let res = run_pretrain(cfg, data, &id, Some(&dir), |r| rows.push(r.clone()))
                .and_then(|o| write_metrics(dir.join("metrics.csv"), &rows).map(|_| o));
            match res {
                Ok(o) => {
                    let last = o.history.last().map_or(f64::NAN, |e| e.val_nce_accuracy);
                    log(&format!("{id}: val NCE accuracy {:.4}", last));
                    None
                }
                Err(e) => {
                    log(&format!("{id}: FAILED {e}"));
                    Some((*v, *seed, e.to_string()))
                }
            }
        })
        .collect();

    let pending: Vec<&Job> = jobs
        .iter()
        .filter(|j| !runs_dir.join(format!("{}.json", run_id(&cells[j.cell].name, j.seed))).exists())
        .collect();
    pending.par_iter().for_each(|job| {
        let id = run_id(&cells[job.cell].name, job.seed);
        let failed = runs_dir.join(format!("{id}.failed"));
        let upstream = pretrain_failures.iter().find(|(v, s, _)| {
            job.cfg.model.contrastive_encoder && *v == job.cfg.train.pretrain.policy.variant && *s == job.seed
        });
        let result = match upstream {
            Some((_, _, msg)) => Err(Error::State(format!("pretraining failed: {msg}"))),
            None => train_vqa(&job.cfg, data, &id, None, |_| {}).and_then(|o| {
                write_metrics(runs_dir.join(format!("{id}.csv")), &o.record.metrics_rows(true))?;
                write_json(&runs_dir.join(format!("{id}.json")), &o.record)?;
                Ok(o.record)
            }),
        };
        match result {
            Ok(r) => {
                let _ = std::fs::remove_file(&failed);
                log(&format!(
                    "{id}: best epoch {} val {:.4} test {:.4} ({:.0}s)",
                    r.best_epoch, r.best_val_acc, r.test_acc, r.wall_clock_s
                ));
            }
            Err(e) => {
                let _ = std::fs::write(&failed, e.to_string());
                log(&format!("{id}: FAILED {e}"));
            }
        }
    });

    // collect records and metrics in matrix order
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut expected_rows = 0;
    for (v, seed, cfg) in &needed {
        let path = pretrain_dir(&opts.out, *v, *seed).join("metrics.csv");
        if path.exists() {
            rows.extend(read_metrics(&path)?);
            expected_rows += rows_per_pretrain(cfg.train.pretrain.epochs);
        }
    }
    let mut summaries = Vec::with_capacity(cells.len());
    for (ci, cell) in cells.iter().enumerate() {
        let mut runs = Vec::new();
        for job in jobs.iter().filter(|j| j.cell == ci) {
            let id = run_id(&cell.name, job.seed);
            let rec_path = runs_dir.join(format!("{id}.json"));
            let outcome = if rec_path.exists() {
                let rec: RunRecord = serde_json::from_str(&std::fs::read_to_string(&rec_path)?)?;
                rows.extend(read_metrics(runs_dir.join(format!("{id}.csv")))?);
                expected_rows += rows_per_run(rec.epochs.len());
                RunOutcome::Done(Box::new(rec))
            } else {
                let msg = std::fs::read_to_string(runs_dir.join(format!("{id}.failed")))
                    .unwrap_or_else(|_| "no record".to_string());
                RunOutcome::Failed(msg)
            };
            runs.push((job.seed, outcome));
        }
        summaries.push(summarize(&cell.name, runs, opts.top_k));
    }
    if rows.len() != expected_rows {
        return Err(Error::State(format!(
            "metrics has {} rows, expected {expected_rows}",
            rows.len()
        )));
    }
    write_metrics(opts.out.join("metrics.csv"), &rows)?;

    let majority = majority_answer(&data.train).unwrap_or_default();
    let summary = AblationSummary {
        majority_val_acc: answer_share(&data.val, &majority),
        majority_test_acc: answer_share(&data.test, &majority),
        majority_answer: majority,
        cells: summaries,
    };
    write_summary_csv(&opts.out.join("summary.csv"), &summary)?;
    std::fs::write(opts.out.join("summary.txt"), summary_text(&summary))?;
    Ok(summary)
}

fn summarize(cell: &str, runs: Vec<(u64, RunOutcome)>, top_k: Option<usize>) -> CellSummary {
    let mut done: Vec<&RunRecord> = runs
        .iter()
        .filter_map(|(_, o)| match o {
            RunOutcome::Done(r) => Some(r.as_ref()),
            RunOutcome::Failed(_) => None,
        })
        .collect();
    if let Some(k) = top_k {
        done.sort_by(|a, b| b.best_val_acc.total_cmp(&a.best_val_acc));
        done.truncate(k);
    }
    let val = mean_std(&done.iter().map(|r| r.best_val_acc).collect::<Vec<_>>());
    let test = mean_std(&done.iter().map(|r| r.test_acc).collect::<Vec<_>>());
    CellSummary {
        cell: cell.to_string(),
        aggregated: done.len(),
        val_mean: val.map(|v| v.0),
        val_std: val.map(|v| v.1),
        test_mean: test.map(|v| v.0),
        test_std: test.map(|v| v.1),
        runs,
    }
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    cell: &'a str,
    seed: String,
    status: String,
    best_epoch: Option<usize>,
    val_acc: Option<f64>,
    val_std: Option<f64>,
    test_acc: Option<f64>,
    test_std: Option<f64>,
    runs: usize,
}

/// `summary.csv`: a `majority` row, then per cell one row per seed and a
/// `mean` row (seed column `mean`, or `top<k>` with `--top-k`).
fn write_summary_csv(path: &Path, s: &AblationSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.serialize(SummaryRow {
        cell: "majority",
        seed: "data".into(),
        status: "ok".into(),
        best_epoch: None,
        val_acc: Some(s.majority_val_acc),
        val_std: None,
        test_acc: Some(s.majority_test_acc),
        test_std: None,
        runs: 0,
    })?;
    for c in &s.cells {
        for (seed, o) in &c.runs {
            let row = match o {
                RunOutcome::Done(r) => SummaryRow {
                    cell: &c.cell,
                    seed: seed.to_string(),
                    status: "ok".into(),
                    best_epoch: Some(r.best_epoch),
                    val_acc: Some(r.best_val_acc),
                    val_std: None,
                    test_acc: Some(r.test_acc),
                    test_std: None,
                    runs: 1,
                },
                RunOutcome::Failed(msg) => SummaryRow {
                    cell: &c.cell,
                    seed: seed.to_string(),
                    status: format!("failed: {}", msg.lines().next().unwrap_or("")),
                    best_epoch: None,
                    val_acc: None,
                    val_std: None,
                    test_acc: None,
                    test_std: None,
                    runs: 1,
                },
            };
            w.serialize(row)?;
        }
        w.serialize(SummaryRow {
            cell: &c.cell,
            seed: "mean".into(),
            status: if c.aggregated > 0 { "ok".into() } else { "failed".into() },
            best_epoch: None,
            val_acc: c.val_mean,
            val_std: c.val_std,
            test_acc: c.test_mean,
            test_std: c.test_std,
            runs: c.aggregated,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary_text(s: &AblationSummary) -> String {
    let pct = |m: Option<f64>, sd: Option<f64>| match (m, sd) {
        (Some(m), Some(sd)) => format!("{:6.2} ± {:5.2}", 100.0 * m, 100.0 * sd),
        _ => format!("{:>14}", "failed"),
    };
    let mut t = String::new();
    let _ = writeln!(t, "{:<28} {:>14} {:>14} {:>5}", "cell", "val acc", "test acc", "runs");
    let _ = writeln!(
        t,
        "{:<28} {:>14} {:>14} {:>5}",
        format!("majority ({})", s.majority_answer),
        format!("{:6.2}", 100.0 * s.majority_val_acc),
        format!("{:6.2}", 100.0 * s.majority_test_acc),
        "-"
    );
    for c in &s.cells {
        let _ = writeln!(
            t,
            "{:<28} {} {} {:>5}",
            c.cell,
            pct(c.val_mean, c.val_std),
            pct(c.test_mean, c.test_std),
            format!("{}/{}", c.aggregated, c.runs.len())
        );
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_matrices_produce_valid_configs() {
        for name in ["table1", "table2", "table3"] {
            let cells = matrix(name).unwrap();
            for c in &cells {
                c.apply(&RunConfig::default()).unwrap();
            }
        }
        assert_eq!(matrix("table1").unwrap().len(), 9);
        assert_eq!(matrix("table2").unwrap().len(), 6);
        assert!(matches!(matrix("table9"), Err(Error::Config(_))));
    }

    #[test]
    fn frozen_cell_differs_from_its_twin_only_by_the_freeze() {
        let cells = matrix("table1").unwrap();
        let get = |n: &str| cells.iter().find(|c| c.name == n).unwrap().apply(&RunConfig::default()).unwrap();
        let mut frozen = get("film3d_rot_frozen");
        assert!(frozen.model.freeze_postprocessor);
        frozen.model.freeze_postprocessor = false;
        assert_eq!(frozen, get("film3d_rot"));
    }

    #[test]
    fn grid_parsing() {
        let cells = parse_grid("# sweep\nbase:\nwide: model.nf=32, train.lr=1e-3\n").unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[1].overrides[0], ("model".into(), "nf".into(), "32".into()));
        for bad in ["x", "a: model.nf", "a: nf=3", "a:\na:", "a: model.bogus=1", ""] {
            assert!(parse_grid(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn mean_std_sample_convention() {
        assert_eq!(mean_std(&[]), None);
        assert_eq!(mean_std(&[0.5]), Some((0.5, 0.0)));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
