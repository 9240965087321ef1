//! Trains one VQA model from a run config and reports the best-validation
//! and test accuracy against the majority-answer floor.
//!
//! cargo run --release --example train_vqa -- <run.cfg> [out_dir]

use std::path::PathBuf;

use mrt::harness::{train::load_configured_dataset, train_vqa, write_metrics, RunConfig};

fn main() -> mrt::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let cfg = match args.get(1) {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = PathBuf::from(args.get(2).map(String::as_str).unwrap_or("runs/example"));
    let data = load_configured_dataset(&cfg)?;
    let mut rows = Vec::new();
    let run = train_vqa(&cfg, &data, "example", Some(&out), |r| {
        println!("epoch {:>3} {:<5} loss {:.4} acc {:.4}", r.epoch, r.split, r.loss, r.acc.unwrap_or(f64::NAN));
        rows.push(r.clone());
    })?;
    write_metrics(out.join("metrics.csv"), &rows)?;
    let r = &run.record;
    println!(
        "best epoch {} val {:.2}% test {:.2}% (majority {:?}: {:.2}%), {:.0}s",
        r.best_epoch,
        100.0 * r.best_val_acc,
        100.0 * r.test_acc,
        r.majority_answer,
        100.0 * r.majority_test_acc,
        r.wall_clock_s
    );
    print!("{}", run.test_report.to_text());
    Ok(())
}
