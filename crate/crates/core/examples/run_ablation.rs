//! Runs a named ablation matrix (table1, table2 or table3) from a base run
//! config and prints the mean ± std table. Completed runs in the output
//! directory are reused.
//!
//! cargo run --release --example run_ablation -- <base.cfg> <matrix> [seeds] [out_dir]

use std::path::PathBuf;

use mrt::harness::ablation::{matrix, run_ablation, summary_text, AblationOptions};
use mrt::harness::train::load_configured_dataset;
use mrt::harness::RunConfig;

fn main() -> mrt::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let base = match args.get(1) {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cells = matrix(args.get(2).map(String::as_str).unwrap_or("table1"))?;
    let opts = AblationOptions {
        seeds: args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3),
        top_k: None,
        out: PathBuf::from(args.get(4).map(String::as_str).unwrap_or("runs/ablation")),
    };
    let data = load_configured_dataset(&base)?;
    let summary = run_ablation(&base, &cells, &data, &opts, &|line| eprintln!("{line}"))?;
    print!("{}", summary_text(&summary));
    Ok(())
}
