//! The finite-difference gradient suite: every differentiable operation
//! checked at float64 against central differences over many seeds.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use crate::autodiff::{Module, Param, ParamRef, Tape, Tensor, Var};
use crate::contrastive::info_nce;
use crate::error::Result;
use crate::geometry::{affine_grid, euler_to_matrix, grid_sample_trilinear, transform_volume};
use crate::nn::{film_modulate, GruLayer};
use crate::seeds;

/// Maximum relative error for single operations.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Maximum relative error for the composed volume transform.
pub const TRANSFORM_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct OpResult {
    pub op: &'static str,
    pub seeds: usize,
    pub tolerance: f64,
    pub max_rel_err: f64,
    /// Seed and `param[index]` of the largest error.
    pub worst: String,
    pub error: Option<String>,
}

impl OpResult {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_rel_err < self.tolerance
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub ops: Vec<OpResult>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(OpResult::passed)
    }
}

type Check = fn(&mut ChaCha8Rng) -> Result<GradCheckReport>;

fn p(name: &str, shape: &[usize], r: &mut ChaCha8Rng) -> ParamRef<f64> {
    Param::new(name, Tensor::randn(shape.to_vec(), 1.0, r))
}

/// Entries at least `margin` away from zero, so relu kinks stay out of reach.
fn off_zero(name: &str, shape: &[usize], margin: f64, r: &mut ChaCha8Rng) -> ParamRef<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.random_range(margin..1.5);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Param::new(name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
}

/// Contracts `y` with a fixed random probe, giving a scalar whose gradient
/// exercises every output entry.
fn probe<'t>(y: Var<'t, f64>, r: &mut ChaCha8Rng) -> Result<Var<'t, f64>> {
    let t = y.tape();
    let w = Tensor::randn(y.shape(), 1.0, r);
    t.mul(y, t.constant(w)?)?.sum()
}

fn run(params: &[ParamRef<f64>], r: &mut ChaCha8Rng, f: impl for<'t> Fn(&'t Tape<f64>, &mut ChaCha8Rng) -> Result<Var<'t, f64>>) -> Result<GradCheckReport> {
    let probe_seed: u64 = r.random();
    check_gradients(
        params,
        |t| f(t, &mut seeds::stream(probe_seed, "probe")),
        GradCheckOptions::default(),
    )
}

fn elementwise(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let a = off_zero("a", &[3, 4], 1e-2, r);
    let b = p("b", &[3, 4], r);
    run(&[a.clone(), b.clone()], r, |t, r| {
        let (va, vb) = (t.param(&a)?, t.param(&b)?);
        let s = t.add(t.relu(va)?, t.tanh(vb)?)?;
        let m = t.mul(s, t.sigmoid(vb)?)?;
        probe(t.sub(m, t.scale_shift(va, 0.3, 1.0)?)?, r)
    })
}

fn matmul_linear(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let x = p("x", &[3, 4], r);
    let w = p("w", &[4, 5], r);
    let b = p("b", &[5], r);
    let m = p("m", &[5, 2], r);
    run(&[x.clone(), w.clone(), b.clone(), m.clone()], r, |t, r| {
        let y = t.linear(t.param(&x)?, t.param(&w)?, Some(t.param(&b)?))?;
        let y = t.matmul(y, t.param(&m)?)?;
        let y = t.add_row_bias(t.transpose(y)?, t.narrow(t.param(&b)?, 0, 0, 3)?)?;
        probe(y, r)
    })
}

fn conv2d(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let x = p("x", &[2, 3, 5, 5], r);
    let w = p("w", &[4, 3, 3, 3], r);
    let b = p("b", &[4], r);
    let stride = r.random_range(1..=2);
    run(&[x.clone(), w.clone(), b.clone()], r, move |t, r| {
        probe(t.conv2d(t.param(&x)?, t.param(&w)?, Some(t.param(&b)?), stride, 1)?, r)
    })
}

fn conv3d(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let x = p("x", &[2, 2, 5, 5, 5], r);
    let w = p("w", &[3, 2, 3, 3, 3], r);
    let b = p("b", &[3], r);
    let stride = r.random_range(1..=2);
    run(&[x.clone(), w.clone(), b.clone()], r, move |t, r| {
        probe(t.conv3d(t.param(&x)?, t.param(&w)?, Some(t.param(&b)?), stride, 1)?, r)
    })
}

fn batch_norm(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let x = p("x", &[3, 2, 2, 3], r);
    let scale = p("scale", &[2], r);
    let shift = p("shift", &[2], r);
    let (rm, rv) = (vec![0.3, -0.1], vec![2.0, 0.5]);
    run(&[x.clone(), scale.clone(), shift.clone()], r, move |t, r| {
        let (y, _) = t.batch_norm(t.param(&x)?, 1, 1e-5, None)?;
        let y = t.channel_affine(y, t.param(&scale)?, t.param(&shift)?, 1)?;
        let (e, _) = t.batch_norm(t.param(&x)?, 1, 1e-5, Some((&rm, &rv)))?;
        t.add(probe(y, r)?, probe(e, r)?)
    })
}

fn pool_embed_shape(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let table = p("table", &[6, 5], r);
    let vol = p("vol", &[3, 2, 2, 3], r);
    let x = p("x", &[3, 4], r);
    let ids = [4usize, 0, 4];
    run(&[table.clone(), vol.clone(), x.clone()], r, move |t, r| {
        let e = t.embedding(t.param(&table)?, &ids)?;
        let g = t.global_avg_pool(t.param(&vol)?)?;
        let c = t.concat(&[t.param(&x)?, e, g], 1)?;
        let c = t.reshape(c, &[11, 3])?;
        let c = t.narrow(c, 0, 1, 9)?;
        t.add(probe(c, r)?, t.mean(t.param(&x)?)?)
    })
}

fn cross_entropy_normalize(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let logits = p("logits", &[4, 5], r);
    let rows = p("rows", &[3, 4], r);
    let targets = [0usize, 3, 4, 1];
    run(&[logits.clone(), rows.clone()], r, move |t, r| {
        let ce = t.softmax_cross_entropy(t.param(&logits)?, &targets)?;
        let n = probe(t.l2_normalize_rows(t.param(&rows)?)?, r)?;
        t.add(ce, n)
    })
}

fn film(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let f = p("f", &[2, 3, 2, 2, 2], r);
    let g = p("gamma", &[2, 3], r);
    let b = p("beta", &[2, 3], r);
    run(&[f.clone(), g.clone(), b.clone()], r, |t, r| {
        probe(film_modulate(t.param(&f)?, t.param(&g)?, t.param(&b)?)?, r)
    })
}

fn gru_cell(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let layer = GruLayer::<f64>::new("gru", 3, 4, r);
    let x = p("x", &[2, 3], r);
    let h = p("h", &[2, 4], r);
    let mut params = layer.parameters();
    params.extend([x.clone(), h.clone()]);
    run(&params, r, |t, r| probe(layer.step(t, t.param(&x)?, t.param(&h)?)?, r))
}

fn nce(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let n = r.random_range(2..=6);
    let a = p("z1", &[n, 4], r);
    let b = p("z2", &[n, 4], r);
    let tau = r.random_range(0.1..1.0);
    run(&[a.clone(), b.clone()], r, move |t, _| info_nce(t.param(&a)?, t.param(&b)?, tau))
}

/// Sampling positions whose voxel coordinates keep clear of integer
/// values, where trilinear weights have kinks.
fn grid_away_from_knots(shape: [usize; 4], d: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product::<usize>() * 3;
    let data = (0..n)
        .map(|_| {
            let u = r.random_range(-1..d as i64) as f64 + r.random_range(0.1..0.9);
            2.0 * u / (d - 1) as f64 - 1.0
        })
        .collect();
    Tensor::new(vec![shape[0], shape[1], shape[2], shape[3], 3], data).expect("shape matches")
}

fn grid_sample(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let d = 4;
    let vol = p("volume", &[1, 2, d, d, d], r);
    let grid = Param::new("grid", grid_away_from_knots([1, 3, 3, 3], d, r));
    run(&[vol.clone(), grid.clone()], r, |t, r| {
        probe(grid_sample_trilinear(t.param(&vol)?, t.param(&grid)?)?, r)
    })
}

fn euler_affine(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let params = p("params", &[2, 6], r);
    run(&[params.clone()], r, |t, r| {
        probe(affine_grid(euler_to_matrix(t.param(&params)?)?, [2, 3, 2])?, r)
    })
}

/// Smooth random field: low-order polynomial in the normalized coordinates.
fn smooth_volume(c: usize, d: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let lat = |i: usize| 2.0 * i as f64 / (d - 1) as f64 - 1.0;
    let mut data = Vec::with_capacity(c * d * d * d);
    for _ in 0..c {
        let k: Vec<f64> = (0..7).map(|_| r.random_range(-1.0..1.0)).collect();
        for z in 0..d {
            for y in 0..d {
                for x in 0..d {
                    let (u, v, w) = (lat(x), lat(y), lat(z));
                    data.push(k[0] + k[1] * u + k[2] * v + k[3] * w + k[4] * u * v + k[5] * v * w + k[6] * u * w);
                }
            }
        }
    }
    Tensor::new(vec![1, c, d, d, d], data).expect("shape matches")
}

fn transform(r: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let vol = Param::new("volume", smooth_volume(2, 6, r));
    let pose: Vec<f64> = (0..6)
        .map(|i| if i < 3 { r.random_range(-0.8..0.8) } else { r.random_range(-0.3..0.3) })
        .collect();
    let params = Param::new("params", Tensor::new([1, 6], pose)?);
    run(&[vol.clone(), params.clone()], r, |t, r| {
        probe(transform_volume(t.param(&vol)?, t.param(&params)?)?, r)
    })
}

/// `(name, check, tolerance)` for every operation in the suite.
pub fn checks() -> Vec<(&'static str, Check, f64)> {
    vec![
        ("elementwise", elementwise as Check, OP_TOLERANCE),
        ("matmul_linear", matmul_linear, OP_TOLERANCE),
        ("conv2d", conv2d, OP_TOLERANCE),
        ("conv3d", conv3d, OP_TOLERANCE),
        ("batch_norm", batch_norm, OP_TOLERANCE),
        ("pool_embedding_shape", pool_embed_shape, OP_TOLERANCE),
        ("cross_entropy_l2_normalize", cross_entropy_normalize, OP_TOLERANCE),
        ("film_modulate", film, OP_TOLERANCE),
        ("gru_cell", gru_cell, OP_TOLERANCE),
        ("info_nce", nce, OP_TOLERANCE),
        ("grid_sample_trilinear", grid_sample, OP_TOLERANCE),
        ("euler_affine_grid", euler_affine, OP_TOLERANCE),
        ("transform_volume", transform, TRANSFORM_TOLERANCE),
    ]
}

/// Runs every check for seeds `0..seeds`, each from its own named stream.
pub fn run_suite(seeds: usize) -> SuiteReport {
    let start = Instant::now();
    let ops = checks()
        .into_iter()
        .map(|(name, check, tolerance)| {
            let mut res = OpResult {
                op: name,
                seeds,
                tolerance,
                max_rel_err: 0.0,
                worst: String::new(),
                error: None,
            };
            for seed in 0..seeds as u64 {
                let mut r = seeds::stream(seed, &format!("gradcheck/{name}"));
                match check(&mut r) {
                    Ok(rep) => {
                        if rep.max_rel_err >= res.max_rel_err {
                            res.max_rel_err = rep.max_rel_err;
                            res.worst = format!("seed {seed}: {}", rep.worst);
                        }
                    }
                    Err(e) => {
                        res.error = Some(format!("seed {seed}: {e}"));
                        break;
                    }
                }
            }
            res
        })
        .collect();
    SuiteReport {
        ops,
        seconds: start.elapsed().as_secs_f64(),
    }
}
