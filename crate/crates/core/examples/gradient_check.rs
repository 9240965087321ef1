//! Builds a small expression on the autodiff tape, prints its gradients,
//! then runs the full finite-difference suite.
//!
//! cargo run --release --example gradient_check -- [seeds]

use mrt::autodiff::gradcheck::{check_gradients, GradCheckOptions};
use mrt::autodiff::{Param, Tensor};
use mrt::harness::gradsuite::run_suite;

fn main() -> mrt::Result<()> {
    let seeds: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);

    // loss = sum(tanh(x · w)), gradients by backprop and by central differences
    let x = Param::new("x", Tensor::from_f64([2, 3], &[0.5, -1.0, 2.0, 0.0, 1.5, -0.5])?);
    let w = Param::new("w", Tensor::from_f64([3, 2], &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6])?);
    let report = check_gradients(
        &[x.clone(), w.clone()],
        |t| t.tanh(t.matmul(t.param(&x)?, t.param(&w)?)?)?.sum(),
        GradCheckOptions::default(),
    )?;
    println!("d loss / d w = {:?}", w.grad().unwrap().data());
    println!("max relative error vs finite differences: {:.2e}\n", report.max_rel_err);

    let suite = run_suite(seeds);
    for op in &suite.ops {
        println!(
            "{:<4} {:<28} {:.2e} (tolerance {:.0e})",
            if op.passed() { "ok" } else { "FAIL" },
            op.op,
            op.max_rel_err,
            op.tolerance
        );
    }
    println!("{} seeds per op in {:.1}s", seeds, suite.seconds);
    Ok(())
}
