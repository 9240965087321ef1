//! Command-line front end: dataset generation, pretraining, training,
//! ablations, evaluation and the gradient suite.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 data error,
//! 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mrt::harness::ablation::{matrix, matrix_mode, parse_grid, run_ablation, AblationOptions};
use mrt::harness::evaluate::{evaluate, EvalOptions};
use mrt::harness::gradsuite::run_suite;
use mrt::harness::train::{load_configured_dataset, load_model, run_pretrain, train_vqa};
use mrt::harness::{write_metrics, RunConfig};
use mrt::scene::{build_dataset, load_dataset, GenConfig, ViewMode};
use mrt::{Error, Result};

#[derive(Parser)]
#[command(name = "mrt", version, about = "Mental-rotation VQA experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file: a genconfig for `gen`, a run config otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Camera elevation regime: v1 (fixed) or v2 (random).
    #[arg(long, global = true)]
    mode: Option<ViewMode>,
    /// Worker threads for rendering and parallel runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a train/val/test dataset.
    Gen,
    /// Contrastively pretrain the volume encoder.
    Pretrain,
    /// Train one VQA model.
    Train,
    /// Run an ablation matrix over several seeds.
    Ablate {
        /// Named matrix: table1, table2 or table3.
        #[arg(long, conflicts_with = "grid")]
        matrix: Option<String>,
        /// Grid file of custom cells.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Seeds per cell.
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        /// Aggregate only the k best runs of each cell by validation accuracy.
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; defaults to the config's data.dir.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(m) = common.mode {
        cfg.data.mode = Some(m);
    }
    Ok(cfg)
}

fn out_dir(common: &Common, default: &str) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn gen(common: &Common) -> Result<()> {
    let mut cfg = match &common.config {
        Some(p) => GenConfig::load(p)?,
        None => GenConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(m) = common.mode {
        cfg.mode = m;
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    let (_, stats) = build_dataset(&cfg, &out)?;
    for (name, s) in &stats.splits {
        println!("{name}: {} scenes, {} questions", s.scenes, s.questions);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn pretrain(common: &Common) -> Result<()> {
    let cfg = run_config(common)?;
    let data = load_configured_dataset(&cfg)?;
    let out = out_dir(common, "runs/pretrain")?;
    let mut rows = Vec::new();
    let res = run_pretrain(&cfg, &data, "pretrain", Some(&out), |r| {
        println!("epoch {:>3} {:<14} loss {:.4} acc {}", r.epoch, r.split, r.loss, fmt_acc(r.acc));
        rows.push(r.clone());
    });
    write_metrics(out.join("metrics.csv"), &rows)?;
    res?;
    std::fs::write(out.join("config.cfg"), cfg.to_text())?;
    println!("wrote {}", out.join("encoder.mrtc").display());
    Ok(())
}

fn fmt_acc(a: Option<f64>) -> String {
    a.map_or("-".into(), |a| format!("{a:.4}"))
}

fn train(common: &Common) -> Result<()> {
    let cfg = run_config(common)?;
    cfg.validate_for_training()?;
    let data = load_configured_dataset(&cfg)?;
    let out = out_dir(common, "runs/train")?;
    std::fs::write(out.join("config.cfg"), cfg.to_text())?;
    let run_id = format!("{}-s{}", cfg.hash(), cfg.train.seed);
    let mut rows = Vec::new();
    let res = train_vqa(&cfg, &data, &run_id, Some(&out), |r| {
        println!("epoch {:>3} {:<5} loss {:.4} acc {}", r.epoch, r.split, r.loss, fmt_acc(r.acc));
        rows.push(r.clone());
    });
    write_metrics(out.join("metrics.csv"), &rows)?;
    let o = res?;
    std::fs::write(out.join("test_report.json"), serde_json::to_string_pretty(&o.test_report)?)?;
    let r = &o.record;
    println!(
        "best epoch {}: val {:.4}, test {:.4} (majority {:.4})",
        r.best_epoch, r.best_val_acc, r.test_acc, r.majority_test_acc
    );
    Ok(())
}

fn ablate(common: &Common, name: Option<&str>, grid: Option<&Path>, seeds: usize, top_k: Option<usize>) -> Result<()> {
    let mut cfg = run_config(common)?;
    let cells = match (name, grid) {
        (Some(n), None) => {
            let cells = matrix(n)?;
            match (cfg.data.mode, matrix_mode(n)) {
                (Some(have), Some(want)) if have != want => {
                    return Err(Error::Config(format!("{n} runs on a {want} dataset, not {have}")))
                }
                (None, want) => cfg.data.mode = want,
                _ => {}
            }
            cells
        }
        (None, Some(g)) => parse_grid(&std::fs::read_to_string(g).map_err(|e| Error::Config(format!("{}: {e}", g.display())))?)?,
        _ => return Err(Error::Argument("ablate needs --matrix or --grid".into())),
    };
    let data = load_configured_dataset(&cfg)?;
    let out = out_dir(common, "runs/ablate")?;
    let opts = AblationOptions { seeds, top_k, out: out.clone() };
    let summary = run_ablation(&cfg, &cells, &data, &opts, &|line| println!("{line}"))?;
    print!("{}", mrt::harness::ablation::summary_text(&summary));
    println!("wrote {}", out.join("summary.csv").display());
    Ok(())
}

fn eval(common: &Common, checkpoint: &Path, data_dir: Option<&Path>, split: &str) -> Result<()> {
    let cfg = run_config(common)?;
    let (model, meta) = load_model(checkpoint)?;
    let dir = data_dir.map_or(cfg.data.dir.clone(), Path::to_path_buf);
    let data = load_dataset(&dir)?;
    let split = data.split(split)?;
    let opts = EvalOptions { batch_size: cfg.train.batch_size, workers: cfg.train.workers };
    let report = evaluate(&model, split, &meta.vocabs, meta.canonical_only, opts)?;
    print!("{}", report.to_text());
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join(format!("eval_{}.json", report.split)), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn gradcheck(common: &Common, seeds: usize) -> Result<()> {
    let report = run_suite(seeds);
    for op in &report.ops {
        let status = if op.passed() { "ok" } else { "FAIL" };
        println!(
            "{status:<4} {:<28} max rel err {:.2e} (tol {:.0e}, {} seeds) {}",
            op.op,
            op.max_rel_err,
            op.tolerance,
            op.seeds,
            op.error.as_deref().unwrap_or(&op.worst)
        );
    }
    println!("{:.1}s", report.seconds);
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("gradcheck.json"), serde_json::to_string_pretty(&report)?)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Numeric("gradient check failed".into()))
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} threads: {e}")))?;
    }
    let c = &cli.common;
    match &cli.command {
        Command::Gen => gen(c),
        Command::Pretrain => pretrain(c),
        Command::Train => train(c),
        Command::Ablate { matrix, grid, seeds, top_k } => ablate(c, matrix.as_deref(), grid.as_deref(), *seeds, *top_k),
        Command::Eval { checkpoint, data, split } => eval(c, checkpoint, data.as_deref(), split),
        Command::Gradcheck { seeds } => gradcheck(c, *seeds),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
