use std::collections::HashSet;

use mrt::autodiff::gradcheck::{check_gradients, GradCheckOptions};
use mrt::autodiff::{Module, Param, ParamRef, Tape, Tensor, Var};
use mrt::contrastive::{
    augment_2d, encode_h, encode_z, info_nce, nce_accuracy, pretrain, sample_pair, AugmentationPolicy, PairVariant,
    PretrainConfig, ViewSource,
};
use mrt::nn::VolumeEncoder;
use mrt::{Error, Result};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.sample(StandardNormal)).collect()).unwrap()
}

/// Scalar double loop over cosine similarities.
fn brute_force_nce(z1: &Tensor<f64>, z2: &Tensor<f64>, tau: f64) -> f64 {
    let (n, d) = (z1.shape()[0], z1.shape()[1]);
    let row = |z: &Tensor<f64>, i: usize| z.data()[i * d..(i + 1) * d].to_vec();
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut total = 0.0;
    for i in 0..n {
        let a = row(z1, i);
        let mut denom = 0.0;
        for k in 0..n {
            denom += (cos(&a, &row(z2, k)) / tau).exp();
        }
        total += -((cos(&a, &row(z2, i)) / tau).exp() / denom).ln();
    }
    total / n as f64
}

fn nce(z1: &Tensor<f64>, z2: &Tensor<f64>, tau: f64) -> Result<f64> {
    let tape = Tape::new();
    info_nce(tape.constant(z1.clone())?, tape.constant(z2.clone())?, tau)?.item()
}

#[test]
fn encode_z_constant_and_brute_force() {
    let tape = Tape::<f64>::new();
    let h = tape.constant(Tensor::full([2, 3, 2, 2, 2], 1.75)).unwrap();
    assert!(encode_z(h).unwrap().value().data().iter().all(|&v| v == 1.75));

    let mut r = rng(0);
    let t = gaussian(&[3, 4, 2, 3, 5], &mut r);
    let z = encode_z(tape.constant(t.clone()).unwrap()).unwrap().value();
    assert_eq!(z.shape(), &[3, 4]);
    for n in 0..3 {
        for c in 0..4 {
            let mut s = 0.0;
            for d in 0..2 {
                for y in 0..3 {
                    for x in 0..5 {
                        s += t.get(&[n, c, d, y, x]);
                    }
                }
            }
            assert!((z.get(&[n, c]) - s / 30.0).abs() < 1e-12);
        }
    }
}

#[test]
fn encode_z_is_linear() {
    let mut r = rng(1);
    let (h1, h2) = (gaussian(&[2, 3, 2, 2, 2], &mut r), gaussian(&[2, 3, 2, 2, 2], &mut r));
    let (a, b) = (0.7, -1.3);
    let mix = Tensor::new(
        h1.shape().to_vec(),
        h1.data().iter().zip(h2.data()).map(|(x, y)| a * x + b * y).collect(),
    )
    .unwrap();
    let tape = Tape::new();
    let z = |t: &Tensor<f64>| encode_z(tape.constant(t.clone()).unwrap()).unwrap().value();
    let (z1, z2, zm) = (z(&h1), z(&h2), z(&mix));
    for i in 0..zm.numel() {
        assert!((zm.data()[i] - (a * z1.data()[i] + b * z2.data()[i])).abs() < 1e-12);
    }
}

#[test]
fn single_pair_loss_is_exactly_zero() {
    let mut r = rng(2);
    let z = gaussian(&[1, 5], &mut r);
    assert_eq!(nce(&z, &gaussian(&[1, 5], &mut r), 0.1).unwrap(), 0.0);
}

#[test]
fn identical_rows_give_log_n() {
    for n in [2usize, 5, 16] {
        let row: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let z = Tensor::new([n, 6], row.repeat(n)).unwrap();
        let loss = nce(&z, &z, 0.1).unwrap();
        assert!((loss - (n as f64).ln()).abs() < 1e-6, "{n}: {loss}");
    }
}

#[test]
fn matches_brute_force_over_seeds() {
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let (z1, z2) = (gaussian(&[8, 16], &mut r), gaussian(&[8, 16], &mut r));
        let tau = r.random_range(0.05..1.0);
        let got = nce(&z1, &z2, tau).unwrap();
        let want = brute_force_nce(&z1, &z2, tau);
        assert!((got - want).abs() < 1e-6, "seed {seed}: {got} vs {want}");
    }
}

fn nce_of_params<'t>(tape: &'t Tape<f64>, a: &ParamRef<f64>, b: &ParamRef<f64>) -> Result<Var<'t, f64>> {
    info_nce(tape.param(a)?, tape.param(b)?, 0.1)
}

#[test]
fn gradient_matches_finite_differences() {
    for seed in 0..5 {
        let mut r = rng(200 + seed);
        let a = Param::new("z1", gaussian(&[8, 16], &mut r));
        let b = Param::new("z2", gaussian(&[8, 16], &mut r));
        let (pa, pb) = (a.clone(), b.clone());
        let opts = GradCheckOptions {
            max_entries: 128,
            ..GradCheckOptions::default()
        };
        let report = check_gradients(&[a, b], move |t| nce_of_params(t, &pa, &pb), opts).unwrap();
        assert!(report.passes(1e-4), "seed {seed}: {report:?}");
    }
}

#[test]
fn orthogonal_rows_at_low_temperature() {
    let mut eye = Tensor::zeros([8, 8]);
    for i in 0..8 {
        eye.set(&[i, i], 3.0);
    }
    assert!(nce(&eye, &eye, 0.01).unwrap() < 1e-3);
}

#[test]
fn zero_norm_row_is_numeric_error_with_index() {
    let mut r = rng(3);
    let mut z = gaussian(&[4, 3], &mut r);
    for j in 0..3 {
        z.set(&[2, j], 0.0);
    }
    match nce(&z, &gaussian(&[4, 3], &mut r), 0.1) {
        Err(Error::Numeric(msg)) => assert!(msg.contains('2'), "{msg}"),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn row_scaling_leaves_loss_unchanged(seed in 0u64..10_000, row in 0usize..6, exp in -6i32..6, which in 0usize..2) {
        let mut r = rng(seed);
        let (z1, z2) = (gaussian(&[6, 5], &mut r), gaussian(&[6, 5], &mut r));
        let base = nce(&z1, &z2, 0.2).unwrap();
        // power-of-two scales are exact in binary floating point
        let c = 2f64.powi(exp);
        let mut scaled = if which == 0 { z1.clone() } else { z2.clone() };
        for j in 0..5 {
            let v = scaled.get(&[row, j]);
            scaled.set(&[row, j], v * c);
        }
        let after = if which == 0 { nce(&scaled, &z2, 0.2) } else { nce(&z1, &scaled, 0.2) }.unwrap();
        prop_assert_eq!(base, after);

        let c = r.random_range(0.01..100.0);
        let mut scaled = z1.clone();
        for j in 0..5 {
            let v = scaled.get(&[row, j]);
            scaled.set(&[row, j], v * c);
        }
        prop_assert!((nce(&scaled, &z2, 0.2).unwrap() - base).abs() < 1e-12);
    }
}

#[test]
fn nce_accuracy_edge_cases() {
    let mut eye = Tensor::<f64>::zeros([5, 5]);
    for i in 0..5 {
        eye.set(&[i, i], 1.0);
    }
    assert_eq!(nce_accuracy(&eye, &eye).unwrap(), 1.0);
    let mut shifted = Tensor::<f64>::zeros([5, 5]);
    for i in 0..5 {
        shifted.set(&[i, (i + 1) % 5], 1.0);
    }
    assert_eq!(nce_accuracy(&eye, &shifted).unwrap(), 0.0);
    let one = Tensor::<f64>::ones([1, 3]);
    assert!(matches!(nce_accuracy(&one, &one), Err(Error::Argument(_))));
    // all-equal similarities resolve to index 0
    let same = Tensor::<f64>::ones([4, 2]);
    assert_eq!(nce_accuracy(&same, &same).unwrap(), 0.25);
}

#[test]
fn nce_accuracy_chance_level() {
    let n = 400;
    let mut r = rng(4);
    let mut total = 0.0;
    let trials = 10;
    for _ in 0..trials {
        total += nce_accuracy(&gaussian(&[n, 32], &mut r), &gaussian(&[n, 32], &mut r)).unwrap();
    }
    let p = 1.0 / n as f64;
    let sigma = (p * (1.0 - p) / (n * trials) as f64).sqrt();
    let mean = total / trials as f64;
    assert!((mean - p).abs() <= 3.0 * sigma, "{mean} vs {p} ± {}", 3.0 * sigma);
}

fn random_orthogonal(d: usize, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
        for u in &q {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|a| a / n).collect());
    }
    q
}

#[test]
fn nce_accuracy_orthogonal_invariance() {
    let mut r = rng(5);
    for _ in 0..10 {
        let z1 = gaussian(&[20, 6], &mut r);
        // positives are noisy copies, so the accuracy is strictly between 0 and 1
        let z2 = Tensor::new(
            [20, 6],
            z1.data().iter().map(|v| v + 1.2 * r.sample::<f64, _>(StandardNormal)).collect(),
        )
        .unwrap();
        let q = random_orthogonal(6, &mut r);
        let rot = |z: &Tensor<f64>| {
            let mut out: Vec<f64> = Vec::with_capacity(z.numel());
            for row in z.data().chunks(6) {
                for qi in &q {
                    out.push(row.iter().zip(qi).map(|(a, b)| a * b).sum());
                }
            }
            Tensor::new([20, 6], out).unwrap()
        };
        assert_eq!(nce_accuracy(&z1, &z2).unwrap(), nce_accuracy(&rot(&z1), &rot(&z2)).unwrap());
    }
}

/// Synthetic multi-view scenes: a flat color per scene plus per-view noise.
struct ToyViews {
    views: Vec<Vec<Tensor<f32>>>,
}

impl ToyViews {
    fn new(scenes: usize, views: usize, size: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        let views = (0..scenes)
            .map(|_| {
                let base: [f32; 3] = [r.random(), r.random(), r.random()];
                (0..views)
                    .map(|_| {
                        let mut data = Vec::with_capacity(3 * size * size);
                        for b in base {
                            data.extend((0..size * size).map(|_| (b + r.random_range(-0.05..0.05f32)).clamp(0.0, 1.0)));
                        }
                        Tensor::new([3, size, size], data).unwrap()
                    })
                    .collect()
            })
            .collect();
        ToyViews { views }
    }
}

impl ViewSource for ToyViews {
    fn num_scenes(&self) -> usize {
        self.views.len()
    }

    fn num_views(&self, scene: usize) -> usize {
        self.views[scene].len()
    }

    fn view(&self, scene: usize, view: usize) -> Tensor<f32> {
        self.views[scene][view].clone()
    }
}

#[test]
fn three_d_pairs_use_distinct_views() {
    let src = ToyViews::new(3, 5, 8, 0);
    let mut r = rng(6);
    for variant in [PairVariant::ThreeD, PairVariant::TwoPlusThreeD] {
        for _ in 0..200 {
            let p = sample_pair(&src, 1, &AugmentationPolicy::new(variant), &mut r).unwrap();
            assert_ne!(p.views.0, p.views.1);
        }
    }
    let p = sample_pair(&src, 0, &AugmentationPolicy::new(PairVariant::TwoD), &mut r).unwrap();
    assert_eq!(p.views.0, p.views.1);
    let p = sample_pair(&src, 0, &AugmentationPolicy::identity(PairVariant::ThreeD), &mut r).unwrap();
    assert_eq!(p.first, src.view(0, p.views.0));
    assert_eq!(p.second, src.view(0, p.views.1));
}

#[test]
fn single_view_scene_rejected_for_three_d() {
    let src = ToyViews::new(2, 1, 8, 0);
    let err = sample_pair(&src, 0, &AugmentationPolicy::new(PairVariant::ThreeD), &mut rng(0));
    assert!(matches!(err, Err(Error::Data(_))));
}

#[test]
fn degenerate_two_d_config_rejected() {
    let mut cfg = PretrainConfig::new(PairVariant::TwoD);
    cfg.policy = AugmentationPolicy::identity(PairVariant::TwoD);
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn two_plus_three_d_pair_coverage() {
    let src = ToyViews::new(1, 20, 4, 0);
    let mut r = rng(7);
    let mut pairs = HashSet::new();
    for _ in 0..1000 {
        let (a, b) = sample_pair(&src, 0, &AugmentationPolicy::new(PairVariant::TwoPlusThreeD), &mut r)
            .unwrap()
            .views;
        pairs.insert((a.min(b), a.max(b)));
    }
    assert!(pairs.len() as f64 > 0.5 * 190.0, "{} pairs", pairs.len());
}

#[test]
fn augmentation_properties() {
    let src = ToyViews::new(1, 1, 16, 1);
    let img = src.view(0, 0);
    let policy = AugmentationPolicy::new(PairVariant::TwoD);
    let a = augment_2d(&img, &policy, &mut rng(8));
    let b = augment_2d(&img, &policy, &mut rng(8));
    let c = augment_2d(&img, &policy, &mut rng(9));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.shape(), img.shape());
    let strong = AugmentationPolicy {
        jitter: 0.9,
        ..policy
    };
    let mut r = rng(10);
    for _ in 0..50 {
        let out = augment_2d(&img, &strong, &mut r);
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert_eq!(augment_2d(&img, &AugmentationPolicy::identity(PairVariant::ThreeD), &mut r), img);
}

#[test]
fn flip_only_mirrors_rows() {
    let img = Tensor::new([3, 2, 3], (0..18).map(|i| i as f32 / 18.0).collect()).unwrap();
    let policy = AugmentationPolicy {
        crop_scale: None,
        flip_prob: 1.0,
        jitter: 0.0,
        variant: PairVariant::TwoD,
    };
    let out = augment_2d(&img, &policy, &mut rng(0));
    for c in 0..3 {
        for y in 0..2 {
            for x in 0..3 {
                assert_eq!(out.get(&[c, y, x]), img.get(&[c, y, 2 - x]));
            }
        }
    }
}

#[test]
fn encode_h_shape_and_determinism() {
    let mut r = rng(11);
    let enc = VolumeEncoder::<f32>::new("h_encoder", 8, 4, 2, &mut r).unwrap();
    let src = ToyViews::new(2, 2, 16, 2);
    let x = mrt::contrastive::stack_images(&[src.view(0, 0), src.view(1, 1)]).unwrap();
    let tape = Tape::new();
    let h1 = encode_h(&enc, &tape, tape.constant(x.clone()).unwrap(), false).unwrap().value();
    let h2 = encode_h(&enc, &tape, tape.constant(x).unwrap(), false).unwrap().value();
    assert_eq!(h1.shape(), &[2, 4, 2, 2, 2]);
    assert_eq!(h1, h2);
    assert!(h1.max_abs_diff(&Tensor::zeros([2, 4, 2, 2, 2])).unwrap() > 0.0);
}

#[test]
fn pretraining_smoke() {
    let train = ToyViews::new(24, 3, 16, 3);
    let val = ToyViews::new(8, 3, 16, 4);
    let mut r = rng(12);
    let enc = VolumeEncoder::<f32>::new("h_encoder", 8, 4, 2, &mut r).unwrap();
    let before: Vec<Tensor<f32>> = enc.parameters().iter().map(|p| p.value().clone()).collect();
    let mut cfg = PretrainConfig::new(PairVariant::ThreeD);
    cfg.batch_size = 8;
    cfg.epochs = 3;
    cfg.adam.lr = 1e-3;
    let mut seen = 0;
    let history = pretrain(&enc, &train, &val, &cfg, &mut r, |_| seen += 1).unwrap();
    assert_eq!(history.len(), 3);
    assert_eq!(seen, 3);
    for e in &history {
        assert!(e.train_loss.is_finite() && e.val_loss.is_finite());
        assert!((0.0..=1.0).contains(&e.val_nce_accuracy));
    }
    let moved = enc
        .parameters()
        .iter()
        .zip(&before)
        .any(|(p, b)| p.value().max_abs_diff(b).unwrap() > 0.0);
    assert!(moved);
}
