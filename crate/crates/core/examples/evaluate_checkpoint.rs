//! Evaluates a saved checkpoint on one split and prints the per-template,
//! per-relation and per-azimuth breakdown.
//!
//! cargo run --release --example evaluate_checkpoint -- <checkpoint.mrtc> <data_dir> [split]

use mrt::harness::evaluate::{evaluate, EvalOptions};
use mrt::harness::train::load_model;
use mrt::scene::load_dataset;

fn main() -> mrt::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = args.get(1).map(String::as_str).unwrap_or("runs/example/checkpoint.mrtc");
    let dir = args.get(2).map(String::as_str).unwrap_or("data");
    let split_name = args.get(3).map(String::as_str).unwrap_or("test");
    let (model, meta) = load_model(ckpt)?;
    let data = load_dataset(dir)?;
    let report = evaluate(&model, data.split(split_name)?, &meta.vocabs, meta.canonical_only, EvalOptions::default())?;
    print!("{}", report.to_text());
    Ok(())
}
