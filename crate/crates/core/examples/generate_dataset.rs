//! Builds a train/val/test dataset from a genconfig file (or the desk
//! defaults) and prints the headline statistics.
//!
//! cargo run --release --example generate_dataset -- [genconfig] [out_dir]

use std::path::PathBuf;
use std::time::Instant;

use mrt::scene::{build_dataset, GenConfig};

fn main() -> mrt::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let cfg = match args.get(1) {
        Some(p) if p != "-" => GenConfig::load(p)?,
        _ => GenConfig::default(),
    };
    let out = PathBuf::from(args.get(2).map(String::as_str).unwrap_or("data"));
    let start = Instant::now();
    let (_, stats) = build_dataset(&cfg, &out)?;
    println!("wrote {} in {:.1}s", out.display(), start.elapsed().as_secs_f64());
    println!("validation fraction {:.3}", stats.validation_fraction);
    println!("longest question {} tokens", stats.max_question_len);
    for (name, s) in &stats.splits {
        println!(
            "{name:>5}: {} scenes, {} questions, yes share {:.3}",
            s.scenes, s.questions, s.yes_fraction
        );
    }
    let train = &stats.splits["train"];
    for (template, answers) in &train.template_answers {
        let total: usize = answers.values().sum();
        let (top, n) = answers.iter().max_by_key(|(_, n)| **n).unwrap();
        println!("  {template:<20} {total:>5} questions, most common {top:?} at {:.2}", *n as f64 / total as f64);
    }
    Ok(())
}
