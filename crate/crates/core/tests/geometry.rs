use mrt::autodiff::gradcheck::{check_gradients, GradCheckOptions};
use mrt::autodiff::{Param, Tape, Tensor};
use mrt::geometry::{
    affine_grid, euler_rotation, euler_to_matrix, grid_sample_trilinear, transform_volume,
    RigidTransform,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::FRAC_PI_2;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn mat_mul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

/// Smooth random volume that fades out well inside the unit ball, so
/// rotations about the center keep all content in view.
fn smooth_volume(n: usize, c: usize, d: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let lat = |i: usize| 2.0 * i as f64 / (d - 1) as f64 - 1.0;
    let mut data = Vec::with_capacity(n * c * d * d * d);
    for _ in 0..n * c {
        let f: [f64; 3] = std::array::from_fn(|_| r.random_range(0.5..1.5));
        let ph: [f64; 3] = std::array::from_fn(|_| r.random_range(0.0..6.28));
        let amp = r.random_range(0.5..1.0);
        for z in 0..d {
            for y in 0..d {
                for x in 0..d {
                    let (px, py, pz) = (lat(x), lat(y), lat(z));
                    let r2 = px * px + py * py + pz * pz;
                    let env = (-r2 / (2.0 * 0.35 * 0.35)).exp();
                    let m = (f[0] * px + ph[0]).cos() + 0.5 * (f[1] * py + ph[1]).sin()
                        + 0.25 * (f[2] * pz + ph[2]).cos();
                    data.push(amp * env * m);
                }
            }
        }
    }
    Tensor::new([n, c, d, d, d], data).unwrap()
}

fn rotate_volume(vol: &Tensor<f64>, params: [f64; 6]) -> Tensor<f64> {
    let tape = Tape::new();
    let n = vol.shape()[0];
    let p = tape.constant(Tensor::new([n, 6], params.repeat(n)).unwrap()).unwrap();
    transform_volume(tape.constant(vol.clone()).unwrap(), p).unwrap().value()
}

#[test]
fn euler_matches_hand_built_axis_product() {
    let mut r = rng(1);
    for _ in 0..50 {
        let (a, b, c): (f64, f64, f64) = (
            r.random_range(-4.0..4.0),
            r.random_range(-4.0..4.0),
            r.random_range(-4.0..4.0),
        );
        let rx = [[1.0, 0.0, 0.0], [0.0, a.cos(), -a.sin()], [0.0, a.sin(), a.cos()]];
        let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
        let rz = [[c.cos(), -c.sin(), 0.0], [c.sin(), c.cos(), 0.0], [0.0, 0.0, 1.0]];
        let expected = mat_mul(rz, mat_mul(ry, rx));
        let got = euler_rotation(a, b, c);
        for i in 0..3 {
            for j in 0..3 {
                assert!((got[i][j] - expected[i][j]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn euler_to_matrix_batched_layout() {
    let tape = Tape::<f64>::new();
    let p = tape
        .constant(Tensor::from_f64([2, 6], &[0., 0., 0., 0., 0., 0., 0., 0., FRAC_PI_2, 0.5, -0.5, 2.]).unwrap())
        .unwrap();
    let m = euler_to_matrix(p).unwrap().value();
    assert_eq!(m.shape(), &[2, 3, 4]);
    assert_eq!(&m.data()[..12], &[1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1., 0.]);
    assert_eq!([m.get(&[1, 0, 3]), m.get(&[1, 1, 3]), m.get(&[1, 2, 3])], [0.5, -0.5, 2.0]);
    assert!((m.get(&[1, 1, 0]) - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn rotations_are_orthonormal(a in -20.0f64..20.0, b in -20.0f64..20.0, c in -20.0f64..20.0,
                                 tx in -3.0f64..3.0, ty in -3.0f64..3.0, tz in -3.0f64..3.0) {
        let t = RigidTransform::from_params([a, b, c, tx, ty, tz]);
        let r = t.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let id = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - id).abs() < 1e-5);
            }
        }
        prop_assert!((t.determinant() - 1.0).abs() < 1e-5);
        prop_assert_eq!(t.matrix()[3], [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn f32_rotations_are_orthonormal(a in -20.0f32..20.0, b in -20.0f32..20.0, c in -20.0f32..20.0) {
        let t = RigidTransform::from_params([a, b, c, 0.0, 0.0, 0.0]);
        prop_assert!((t.determinant() - 1.0).abs() < 1e-5);
    }
}

#[test]
fn translation_shifts_grid_by_one_voxel() {
    let w = 5;
    let tape = Tape::<f64>::new();
    let ident = affine_grid(tape.constant(RigidTransform::identity().to_tensor()).unwrap(), [3, 4, w])
        .unwrap()
        .value();
    let t = RigidTransform::from_params([0.0, 0.0, 0.0, 2.0 / (w - 1) as f64, 0.0, 0.0]);
    let shifted = affine_grid(tape.constant(t.to_tensor()).unwrap(), [3, 4, w]).unwrap().value();
    for (a, b) in ident.data().chunks(3).zip(shifted.data().chunks(3)) {
        assert_eq!(b[0], a[0] - 0.5);
        assert_eq!(&b[1..], &a[1..]);
    }
}

#[test]
fn one_voxel_shift_matches_index_oracle_bitwise() {
    let mut r = rng(2);
    let (d, h, w) = (3, 5, 9);
    let vol = Tensor::<f32>::randn([2, 3, d, h, w], 1.0, &mut r);
    for axis in 0..3 {
        for sign in [-1i64, 1] {
            let dims = [d, h, w];
            let n = dims[2 - axis];
            let mut params = [0.0f32; 6];
            params[3 + axis] = sign as f32 * 2.0 / (n - 1) as f32;
            let tape = Tape::new();
            let p = tape.constant(Tensor::new([1, 6], params.to_vec()).unwrap()).unwrap();
            let mut theta = euler_to_matrix(p).unwrap().value();
            theta = Tensor::new([2, 3, 4], [theta.data(), theta.data()].concat()).unwrap();
            let grid = affine_grid(tape.constant(theta).unwrap(), dims).unwrap();
            let out = grid_sample_trilinear(tape.constant(vol.clone()).unwrap(), grid)
                .unwrap()
                .value();
            for b in 0..2 {
                for c in 0..3 {
                    for z in 0..d {
                        for y in 0..h {
                            for x in 0..w {
                                let mut src = [x as i64, y as i64, z as i64];
                                src[axis] -= sign;
                                let inb = src[0] >= 0
                                    && src[0] < w as i64
                                    && src[1] >= 0
                                    && src[1] < h as i64
                                    && src[2] >= 0
                                    && src[2] < d as i64;
                                let want = if inb {
                                    vol.get(&[b, c, src[2] as usize, src[1] as usize, src[0] as usize])
                                } else {
                                    0.0
                                };
                                let got = out.get(&[b, c, z, y, x]);
                                assert_eq!(got.to_bits(), want.to_bits(), "axis {axis} sign {sign}");
                            }
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn identity_resample_returns_input() {
    let mut r = rng(3);
    let vol = Tensor::<f64>::randn([2, 4, 4, 6, 7], 1.0, &mut r);
    let out = rotate_volume(&vol, [0.0; 6]);
    assert!(out.max_abs_diff(&vol).unwrap() < 1e-6);
}

/// Integer rotation in centered index space: index `i` on an axis of
/// length `n` becomes `2i - (n - 1)`.
fn quarter_turn_oracle(vol: &Tensor<f64>, axis: usize, k: i32) -> Tensor<f64> {
    let n = vol.shape()[2];
    let angle = k as f64 * FRAC_PI_2;
    let (c, s) = (angle.cos().round() as i64, angle.sin().round() as i64);
    let q: [[i64; 3]; 3] = match axis {
        0 => [[1, 0, 0], [0, c, -s], [0, s, c]],
        1 => [[c, 0, s], [0, 1, 0], [-s, 0, c]],
        _ => [[c, -s, 0], [s, c, 0], [0, 0, 1]],
    };
    let mut out = Tensor::zeros(vol.shape().to_vec());
    let m = (n - 1) as i64;
    for b in 0..vol.shape()[0] {
        for ch in 0..vol.shape()[1] {
            for z in 0..n {
                for y in 0..n {
                    for x in 0..n {
                        let p = [2 * x as i64 - m, 2 * y as i64 - m, 2 * z as i64 - m];
                        // src = Qᵀ p
                        let src: Vec<usize> = (0..3)
                            .map(|i| ((0..3).map(|j| q[j][i] * p[j]).sum::<i64>() + m) as usize / 2)
                            .collect();
                        out.set(&[b, ch, z, y, x], vol.get(&[b, ch, src[2], src[1], src[0]]));
                    }
                }
            }
        }
    }
    out
}

#[test]
fn quarter_turns_are_axis_permutations() {
    let mut r = rng(4);
    for n in [4, 5] {
        let vol = Tensor::<f64>::randn([1, 2, n, n, n], 1.0, &mut r);
        for axis in 0..3 {
            for k in 1..4 {
                let mut params = [0.0; 6];
                params[axis] = k as f64 * FRAC_PI_2;
                let out = rotate_volume(&vol, params);
                let want = quarter_turn_oracle(&vol, axis, k);
                let err = out.max_abs_diff(&want).unwrap();
                assert!(err < 1e-5, "n {n} axis {axis} k {k}: {err}");
            }
        }
    }
}

#[test]
fn quarter_turn_about_z_in_f32() {
    let mut r = rng(5);
    let vol = Tensor::<f32>::randn([1, 1, 6, 6, 6], 1.0, &mut r);
    let tape = Tape::new();
    let p = tape
        .constant(Tensor::new([1, 6], vec![0.0, 0.0, std::f32::consts::FRAC_PI_2, 0.0, 0.0, 0.0]).unwrap())
        .unwrap();
    let out = transform_volume(tape.constant(vol.clone()).unwrap(), p).unwrap().value();
    let want = quarter_turn_oracle(&vol.cast(), 2, 1);
    assert!(out.cast::<f64>().max_abs_diff(&want).unwrap() < 1e-5);
}

#[test]
fn grid_of_inverse_composes_to_identity() {
    let mut r = rng(6);
    for _ in 0..10 {
        let params: [f64; 6] = std::array::from_fn(|i| {
            if i < 3 {
                r.random_range(-0.6..0.6)
            } else {
                r.random_range(-0.2..0.2)
            }
        });
        let t = RigidTransform::from_params(params);
        let dims = [7, 7, 7];
        let tape = Tape::new();
        let g_t = affine_grid(tape.constant(t.to_tensor()).unwrap(), dims).unwrap();
        let g_inv = affine_grid(tape.constant(t.inverse().to_tensor()).unwrap(), dims).unwrap();
        // Treat the inverse grid as a 3-channel volume and read it at the
        // points of the forward grid; trilinear reads of an affine field are exact.
        let field = g_inv.value();
        let mut chans = vec![0.0; 3 * 343];
        for (v, p) in field.data().chunks(3).enumerate() {
            for k in 0..3 {
                chans[k * 343 + v] = p[k];
            }
        }
        let vol = tape.constant(Tensor::new([1, 3, 7, 7, 7], chans).unwrap()).unwrap();
        let composed = grid_sample_trilinear(vol, g_t).unwrap().value();
        let ident = affine_grid(tape.constant(RigidTransform::identity().to_tensor()).unwrap(), dims)
            .unwrap()
            .value();
        let src = g_t.value();
        let mut checked = 0;
        for v in 0..343 {
            let s = &src.data()[v * 3..v * 3 + 3];
            if s.iter().any(|c| c.abs() > 1.0) {
                continue;
            }
            checked += 1;
            for k in 0..3 {
                let got = composed.data()[k * 343 + v];
                assert!((got - ident.data()[v * 3 + k]).abs() < 1e-5);
            }
        }
        assert!(checked > 100);
    }
}

#[test]
fn sampling_is_linear_in_the_volume() {
    let mut r = rng(7);
    for _ in 0..5 {
        let v1 = Tensor::<f64>::randn([2, 2, 4, 5, 6], 1.0, &mut r);
        let v2 = Tensor::<f64>::randn([2, 2, 4, 5, 6], 1.0, &mut r);
        let grid = Tensor::<f64>::randn([2, 3, 3, 3, 3], 0.8, &mut r);
        let (a, b) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        let tape = Tape::new();
        let gv = tape.constant(grid).unwrap();
        let sample = |v: &Tensor<f64>| {
            grid_sample_trilinear(tape.constant(v.clone()).unwrap(), gv).unwrap().value()
        };
        let mix = Tensor::new(
            v1.shape().to_vec(),
            v1.data().iter().zip(v2.data()).map(|(x, y)| a * x + b * y).collect(),
        )
        .unwrap();
        let lhs = sample(&mix);
        let (s1, s2) = (sample(&v1), sample(&v2));
        for i in 0..lhs.numel() {
            assert!((lhs.data()[i] - (a * s1.data()[i] + b * s2.data()[i])).abs() < 1e-5);
        }
    }
}

#[test]
fn out_of_range_samples_read_zero() {
    let tape = Tape::<f64>::new();
    let vol = tape.constant(Tensor::ones([1, 1, 3, 3, 3])).unwrap();
    let grid = tape
        .constant(Tensor::from_f64([1, 1, 1, 3, 3], &[3.0, 0.0, 0.0, 0.0, -3.0, 0.0, 1.5, 0.0, 0.0]).unwrap())
        .unwrap();
    let out = grid_sample_trilinear(vol, grid).unwrap().value();
    assert_eq!(out.data()[0], 0.0);
    assert_eq!(out.data()[1], 0.0);
    // half a voxel past the edge keeps half the weight of the last voxel
    assert!((out.data()[2] - 0.5).abs() < 1e-12);
}

#[test]
fn zero_params_leave_volume_unchanged() {
    let vol = smooth_volume(2, 3, 6, &mut rng(8));
    assert!(rotate_volume(&vol, [0.0; 6]).max_abs_diff(&vol).unwrap() < 1e-12);
}

#[test]
fn rotate_then_unrotate_round_trip() {
    let mut r = rng(9);
    for _ in 0..5 {
        let vol = smooth_volume(1, 2, 16, &mut r);
        let theta = r.random_range(-1.5..1.5);
        let there = rotate_volume(&vol, [0.0, 0.0, theta, 0.0, 0.0, 0.0]);
        let back = rotate_volume(&there, [0.0, 0.0, -theta, 0.0, 0.0, 0.0]);
        let err = back.max_abs_diff(&vol).unwrap();
        assert!(err < 5e-2, "theta {theta}: L-inf {err}");
    }
}

#[test]
fn transform_gradients_match_finite_differences() {
    let opts = GradCheckOptions::default();
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let vol = Param::new("vol", smooth_volume(1, 2, 6, &mut r));
        // generic pose
        let p: Vec<f64> = (0..6)
            .map(|i| if i < 3 { r.random_range(-0.8..0.8) } else { r.random_range(-0.3..0.3) })
            .collect();
        let params = Param::new("params", Tensor::new([1, 6], p).unwrap());
        let probe = Tensor::<f64>::randn([1, 2, 6, 6, 6], 1.0, &mut r);
        let rep = check_gradients(
            &[params.clone(), vol.clone()],
            |t| {
                let out = transform_volume(t.param(&vol)?, t.param(&params)?)?;
                t.mul(out, t.constant(probe.clone())?)?.sum()
            },
            opts,
        )
        .unwrap();
        assert!(rep.passes(1e-3), "seed {seed}: {rep:?}");

        // every pose parameter receives a nonzero gradient
        let tape = Tape::new();
        let out = transform_volume(tape.param(&vol).unwrap(), tape.param(&params).unwrap()).unwrap();
        let loss = tape.mul(out, tape.constant(probe.clone()).unwrap()).unwrap().sum().unwrap();
        params.zero_grad();
        tape.backward(loss).unwrap();
        let g = params.grad().unwrap();
        assert!(g.data().iter().all(|v| v.abs() > 1e-8), "seed {seed}: {:?}", g.data());
        params.zero_grad();
        vol.zero_grad();
    }
}

#[test]
fn yaw_gradient_at_zero_rotation_matches_finite_differences() {
    // Non-lattice translation keeps samples off interpolation cell boundaries.
    let mut r = rng(11);
    let vol = smooth_volume(1, 1, 8, &mut r);
    let probe = Tensor::<f64>::randn([1, 1, 8, 8, 8], 1.0, &mut r);
    let loss_at = |tz_angle: f64| -> (f64, f64) {
        let params = Param::new("p", Tensor::from_f64([1, 6], &[0.0, 0.0, tz_angle, 0.03, -0.05, 0.07]).unwrap());
        let tape = Tape::new();
        let out = transform_volume(tape.constant(vol.clone()).unwrap(), tape.param(&params).unwrap()).unwrap();
        let loss = tape.mul(out, tape.constant(probe.clone()).unwrap()).unwrap().sum().unwrap();
        let l = loss.item().unwrap();
        tape.backward(loss).unwrap();
        (l, params.grad().unwrap().data()[2])
    };
    let (_, analytic) = loss_at(0.0);
    let h = 1e-5;
    let numeric = (loss_at(h).0 - loss_at(-h).0) / (2.0 * h);
    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
    assert!(rel < 1e-3, "analytic {analytic} numeric {numeric}");
}
