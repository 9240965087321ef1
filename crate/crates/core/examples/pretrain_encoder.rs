//! Contrastive pretraining of the volume encoder on a dataset directory,
//! printing validation NCE accuracy per epoch.
//!
//! cargo run --release --example pretrain_encoder -- <data_dir> [2d|3d|2d+3d] [epochs]

use mrt::harness::train::run_pretrain;
use mrt::harness::RunConfig;
use mrt::scene::load_dataset;

fn main() -> mrt::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let dir = args.get(1).map(String::as_str).unwrap_or("data");
    let mut cfg = RunConfig::default();
    cfg.set("train", "pretrain_augment", args.get(2).map(String::as_str).unwrap_or("2d+3d"))?;
    cfg.set("train", "pretrain_epochs", args.get(3).map(String::as_str).unwrap_or("5"))?;
    let data = load_dataset(dir)?;
    let chance = 1.0 / cfg.train.pretrain.batch_size.min(data.val.records.len()) as f64;
    let out = run_pretrain(&cfg, &data, "example", None, |r| {
        if let Some(acc) = r.acc {
            println!("epoch {:>3} val loss {:.4} NCE accuracy {:.4} (chance {chance:.4})", r.epoch, r.loss, acc);
        }
    })?;
    println!("final NCE accuracy {:.4}", out.history.last().unwrap().val_nce_accuracy);
    Ok(())
}
