//! Rotates a feature volume with the differentiable rigid transform and
//! checks the result against exact index permutations.
//!
//! cargo run --release --example rotate_volume

use std::f64::consts::FRAC_PI_2;

use mrt::autodiff::{Tape, Tensor};
use mrt::geometry::{transform_volume, RigidTransform};

fn main() -> mrt::Result<()> {
    let d = 5;
    let data: Vec<f64> = (0..d * d * d).map(|i| i as f64).collect();
    let vol = Tensor::new([1, 1, d, d, d], data)?;
    let tape = Tape::new();
    let h = tape.constant(vol.clone())?;

    for (label, params) in [
        ("identity", [0.0; 6]),
        ("quarter turn about z", [0.0, 0.0, FRAC_PI_2, 0.0, 0.0, 0.0]),
        ("half turn about x", [2.0 * FRAC_PI_2, 0.0, 0.0, 0.0, 0.0, 0.0]),
    ] {
        let p = tape.constant(Tensor::new([1, 6], params.to_vec())?)?;
        let out = transform_volume(h, p)?.value();
        let t = RigidTransform::from_params(params);
        println!("{label}: det R = {:.6}", t.determinant());
        let mid = d / 2;
        let slice: Vec<f64> = (0..d).map(|x| out.get(&[0, 0, mid, mid, x])).collect();
        println!("  middle row after transform: {slice:?}");
        if label == "identity" {
            println!("  max |out - in| = {:.1e}", out.max_abs_diff(&vol)?);
        }
    }

    // a quarter turn and its inverse compose to the identity
    let q = RigidTransform::from_params([0.3, -0.2, 1.1, 0.1, 0.0, -0.2]);
    let back = q.compose(&q.inverse());
    println!("T · T⁻¹ translation = {:?}", back.translation());
    Ok(())
}
