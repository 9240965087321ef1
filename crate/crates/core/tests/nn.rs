use mrt::autodiff::gradcheck::{check_gradients, GradCheckOptions};
use mrt::autodiff::{Module, Param, Tape, Tensor};
use mrt::nn::{
    film_modulate, CameraFilmEmbed, CameraRotEmbed, FilmResBlock, GruLayer, ModelConfig,
    Postprocessor, QuestionEncoder, VqaBatch, VqaModel,
};
use mrt::nn::Encoder2d;
use mrt::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_config() -> ModelConfig {
    ModelConfig {
        n_resblocks: 2,
        nf: 8,
        rnn_dim: 8,
        ncf: Some(4),
        volume: [4, 2, 2, 2],
        image_size: 16,
        enc_channels: 8,
        ..ModelConfig::default()
    }
}

fn random_batch(n: usize, size: usize, vocab: usize, len: usize, r: &mut ChaCha8Rng) -> VqaBatch<f64> {
    let images = Tensor::new(
        [n, 3, size, size],
        (0..n * 3 * size * size).map(|_| r.random_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let tokens = (0..n * len).map(|_| r.random_range(1..vocab)).collect();
    let cameras = Tensor::new(
        [n, 6],
        (0..n * 6).map(|_| r.random_range(-3.0..3.0)).collect(),
    )
    .unwrap();
    VqaBatch { images, tokens, cameras }
}

#[test]
fn encoder_reduces_resolution_by_eight() {
    let enc = Encoder2d::<f32>::new("enc", 16, &mut rng(0));
    let tape = Tape::new();
    let x = tape.constant(Tensor::randn([2, 3, 64, 64], 1.0, &mut rng(1))).unwrap();
    let h = enc.forward(&tape, x, true).unwrap();
    assert_eq!(h.shape(), vec![2, 16, 8, 8]);
    let bad = tape.constant(Tensor::zeros([2, 3, 60, 64])).unwrap();
    assert!(matches!(enc.forward(&tape, bad, true), Err(Error::Config(_))));
}

#[test]
fn encoder_is_deterministic() {
    let enc = Encoder2d::<f32>::new("enc", 16, &mut rng(0));
    let img = Tensor::randn([1, 3, 32, 32], 1.0, &mut rng(2));
    let run = || {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new([2, 3, 32, 32], img.data().repeat(2)).unwrap()).unwrap();
        enc.forward(&tape, x, false).unwrap().value()
    };
    let a = run();
    assert_eq!(a, run());
    let half = a.numel() / 2;
    assert_eq!(&a.data()[..half], &a.data()[half..]);
}

#[test]
fn postprocessor_factorizes_channels() {
    let post = Postprocessor::<f64>::new("post", 8, 32, 8, &mut rng(3)).unwrap();
    assert_eq!(post.lifted_channels(), 256);
    let tape = Tape::new();
    let h = tape.constant(Tensor::randn([2, 8, 4, 4], 1.0, &mut rng(4))).unwrap();
    let flat = post.forward_2d(&tape, h, true).unwrap().value();
    let tape = Tape::new();
    let h = tape.constant(Tensor::randn([2, 8, 4, 4], 1.0, &mut rng(4))).unwrap();
    let vol = post.forward(&tape, h, true).unwrap().value();
    assert_eq!(vol.shape(), &[2, 32, 8, 4, 4]);
    // flattening the volume back recovers the 2D output exactly
    assert_eq!(vol.reshape([2, 256, 4, 4]).unwrap(), flat);
    assert!(Postprocessor::<f64>::new("post", 8, 0, 8, &mut rng(3)).is_err());
}

#[test]
fn postprocessor_freeze_stops_gradients() {
    let post = Postprocessor::<f64>::new("post", 4, 2, 2, &mut rng(5)).unwrap();
    post.freeze();
    let tape = Tape::new();
    let h = Param::new("h", Tensor::randn([2, 4, 3, 3], 1.0, &mut rng(6)));
    let out = post.forward(&tape, tape.param(&h).unwrap(), true).unwrap();
    tape.backward(out.sum().unwrap()).unwrap();
    assert!(post.parameters().iter().all(|p| p.grad().is_none() && !p.requires_grad()));
    assert!(h.grad().is_some());
}

fn encode(q: &QuestionEncoder<f64>, tokens: &[usize], n: usize) -> Tensor<f64> {
    let tape = Tape::new();
    q.forward(&tape, tokens, n).unwrap().value()
}

#[test]
fn question_encoder_masks_padding() {
    for layers in [1, 2] {
        let q = QuestionEncoder::<f64>::new("q", 12, 0, 6, layers, &mut rng(7));
        let seq = [3, 5, 7, 2];
        let a = encode(&q, &seq, 1);
        assert_eq!(a, encode(&q, &seq, 1));
        let padded = encode(&q, &[3, 5, 7, 2, 0, 0, 0], 1);
        assert_eq!(a, padded, "{layers} layers");
        // batched with a longer sequence: PAD rows stay frozen
        let batch = encode(&q, &[3, 5, 7, 2, 0, 0, 4, 4, 4, 4, 4, 4], 2);
        for (x, y) in a.data().iter().zip(&batch.data()[..6]) {
            assert!((x - y).abs() < 1e-12);
        }
        let swapped = encode(&q, &[5, 3, 7, 2], 1);
        let dist: f64 = a.data().iter().zip(swapped.data()).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(dist > 0.0);
    }
}

#[test]
fn question_encoder_rejects_unknown_tokens() {
    let q = QuestionEncoder::<f32>::new("q", 5, 0, 4, 1, &mut rng(8));
    let tape = Tape::new();
    assert!(matches!(q.forward(&tape, &[1, 9], 1), Err(Error::Vocab(_))));
}

#[test]
fn gru_cell_finite_differences() {
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let layer = GruLayer::<f64>::new("g", 3, 4, &mut r);
        for p in [&layer.b_x, &layer.b_h] {
            p.set_value(Tensor::randn([12], 0.5, &mut r));
        }
        let x = Param::new("x", Tensor::randn([2, 3], 1.0, &mut r));
        let h = Param::new("h", Tensor::randn([2, 4], 1.0, &mut r));
        let probe = Tensor::<f64>::randn([2, 4], 1.0, &mut r);
        let mut params = layer.parameters();
        params.extend([x.clone(), h.clone()]);
        let rep = check_gradients(
            &params,
            |t| {
                let out = layer.step(t, t.param(&x)?, t.param(&h)?)?;
                t.mul(out, t.constant(probe.clone())?)?.sum()
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(rep.passes(1e-4), "seed {seed}: {rep:?}");
    }
}

#[test]
fn question_encoder_finite_differences() {
    for seed in 0..5 {
        let mut r = rng(200 + seed);
        let q = QuestionEncoder::<f64>::new("q", 7, 0, 3, 2, &mut r);
        let tokens = [1, 4, 2, 0, 3, 3, 6, 5];
        let probe = Tensor::<f64>::randn([2, 3], 1.0, &mut r);
        let rep = check_gradients(
            &q.parameters(),
            |t| {
                let h = q.forward(t, &tokens, 2)?;
                t.mul(h, t.constant(probe.clone())?)?.sum()
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(rep.passes(1e-4), "seed {seed}: {rep:?}");
    }
}

#[test]
fn camera_film_embed_passthrough_and_zero_input() {
    let raw = CameraFilmEmbed::<f64>::new("c", None, &mut rng(9));
    assert_eq!(raw.out_dim(), 6);
    assert!(raw.parameters().is_empty());
    let tape = Tape::new();
    let c = Tensor::from_f64([1, 6], &[0.1, 0.2, 0.3, 1.0, 2.0, 3.0]).unwrap();
    assert_eq!(raw.forward(&tape, tape.constant(c.clone()).unwrap()).unwrap().value(), c);

    let mlp = CameraFilmEmbed::<f64>::new("c", Some(5), &mut rng(9));
    assert_eq!(mlp.out_dim(), 5);
    let out = mlp.forward(&tape, tape.constant(Tensor::zeros([2, 6])).unwrap()).unwrap().value();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn camera_rot_embed_starts_at_identity() {
    let rot = CameraRotEmbed::<f64>::new("r", 8, &mut rng(10));
    let tape = Tape::new();
    let c = tape.constant(Tensor::randn([3, 6], 2.0, &mut rng(11))).unwrap();
    let out = rot.forward(&tape, c).unwrap().value();
    assert_eq!(out.shape(), &[3, 6]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn film_modulate_cases() {
    let mut r = rng(12);
    let f = Tensor::<f64>::randn([2, 3, 4, 4], 1.0, &mut r);
    let tape = Tape::new();
    let fv = tape.constant(f.clone()).unwrap();
    let ones = tape.constant(Tensor::ones([2, 3])).unwrap();
    let zeros = tape.constant(Tensor::zeros([2, 3])).unwrap();
    assert_eq!(film_modulate(fv, ones, zeros).unwrap().value(), f);
    let beta = Tensor::randn([2, 3], 1.0, &mut r);
    let out = film_modulate(fv, zeros, tape.constant(beta.clone()).unwrap()).unwrap().value();
    for n in 0..2 {
        for c in 0..3 {
            for i in 0..16 {
                assert_eq!(out.get(&[n, c, i / 4, i % 4]), beta.get(&[n, c]));
            }
        }
    }
    let gamma = Tensor::randn([2, 3], 1.0, &mut r);
    let out = film_modulate(fv, tape.constant(gamma.clone()).unwrap(), tape.constant(beta.clone()).unwrap())
        .unwrap()
        .value();
    for n in 0..2 {
        for c in 0..3 {
            for i in 0..16 {
                let want = gamma.get(&[n, c]) * f.get(&[n, c, i / 4, i % 4]) + beta.get(&[n, c]);
                assert!((out.get(&[n, c, i / 4, i % 4]) - want).abs() < 1e-12);
            }
        }
    }
    // linear in f
    let g = Tensor::<f64>::randn([2, 3, 4, 4], 1.0, &mut r);
    let sum = Tensor::new(f.shape().to_vec(), f.data().iter().zip(g.data()).map(|(a, b)| 2.0 * a - 0.5 * b).collect()).unwrap();
    let zero_beta = tape.constant(Tensor::zeros([2, 3])).unwrap();
    let gm = tape.constant(gamma).unwrap();
    let fs = film_modulate(tape.constant(sum).unwrap(), gm, zero_beta).unwrap().value();
    let fa = film_modulate(fv, gm, zero_beta).unwrap().value();
    let fb = film_modulate(tape.constant(g).unwrap(), gm, zero_beta).unwrap().value();
    for i in 0..fs.numel() {
        assert!((fs.data()[i] - (2.0 * fa.data()[i] - 0.5 * fb.data()[i])).abs() < 1e-12);
    }
    let wrong = tape.constant(Tensor::ones([2, 4])).unwrap();
    assert!(matches!(film_modulate(fv, wrong, wrong), Err(Error::Shape { .. })));
}

#[test]
fn film_modulate_finite_differences() {
    for seed in 0..20 {
        let mut r = rng(300 + seed);
        let f = Param::new("f", Tensor::randn([2, 3, 2, 2, 2], 1.0, &mut r));
        let g = Param::new("g", Tensor::randn([2, 3], 1.0, &mut r));
        let b = Param::new("b", Tensor::randn([2, 3], 1.0, &mut r));
        let probe = Tensor::<f64>::randn([2, 3, 2, 2, 2], 1.0, &mut r);
        let rep = check_gradients(
            &[f.clone(), g.clone(), b.clone()],
            |t| {
                let y = film_modulate(t.param(&f)?, t.param(&g)?, t.param(&b)?)?;
                t.mul(y, t.constant(probe.clone())?)?.sum()
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(rep.passes(1e-4), "seed {seed}: {rep:?}");
    }
}

#[test]
fn film_resblock_coords_and_sensitivity() {
    for dims in [2, 3] {
        let plain = FilmResBlock::<f64>::new("b", dims, 4, 5, false, &mut rng(13));
        let coords = FilmResBlock::<f64>::new("b", dims, 4, 5, true, &mut rng(13));
        assert_eq!(coords.conv.in_channels() - plain.conv.in_channels(), dims);
        let mut shape = vec![3, 4];
        shape.extend(std::iter::repeat_n(3, dims));
        let x = Tensor::randn(shape, 1.0, &mut rng(14));
        let run = |cond: &Tensor<f64>| {
            let tape = Tape::new();
            let xv = tape.constant(x.clone()).unwrap();
            coords.forward(&tape, xv, tape.constant(cond.clone()).unwrap(), true).unwrap().value()
        };
        let c1 = Tensor::randn([3, 5], 1.0, &mut rng(15));
        let c2 = Tensor::randn([3, 5], 1.0, &mut rng(16));
        assert_eq!(run(&c1), run(&c1));
        assert!(run(&c1).max_abs_diff(&run(&c2)).unwrap() > 1e-6);
    }
}

#[test]
fn film_resblock_conditioning_gradient_spot_check() {
    for seed in 0..5 {
        let mut r = rng(400 + seed);
        let block = FilmResBlock::<f64>::new("b", 2, 3, 4, true, &mut r);
        let x = Tensor::<f64>::randn([3, 3, 4, 4], 1.0, &mut r);
        let cond = Tensor::<f64>::randn([3, 4], 1.0, &mut r);
        let probe = Tensor::<f64>::randn([3, 3, 4, 4], 1.0, &mut r);
        let rep = check_gradients(
            &[block.film.weight.clone(), block.conv.weight.clone()],
            |t| {
                let y = block.forward(t, t.constant(x.clone())?, t.constant(cond.clone())?, true)?;
                t.mul(y, t.constant(probe.clone())?)?.sum()
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(rep.passes(1e-4), "seed {seed}: {rep:?}");
    }
}

fn logits(model: &VqaModel<f64>, batch: &VqaBatch<f64>) -> Tensor<f64> {
    let tape = Tape::new();
    model.forward(&tape, batch, true).unwrap().value()
}

fn with_camera(batch: &VqaBatch<f64>, seed: u64) -> VqaBatch<f64> {
    let mut b = batch.clone();
    b.cameras = Tensor::randn([batch.len(), 6], 2.0, &mut rng(seed));
    b
}

#[test]
fn logits_have_one_entry_per_answer() {
    for use_3d in [false, true] {
        let cfg = ModelConfig { use_3d, ..small_config() };
        let model = VqaModel::<f64>::new(&cfg, 10, 0, 28, &mut rng(17)).unwrap();
        let batch = random_batch(3, 16, 10, 5, &mut rng(18));
        assert_eq!(logits(&model, &batch).shape(), &[3, 28]);
    }
}

#[test]
fn camera_flags_off_means_camera_is_ignored() {
    for use_3d in [false, true] {
        let cfg = ModelConfig { use_3d, ..small_config() };
        let model = VqaModel::<f64>::new(&cfg, 10, 0, 28, &mut rng(19)).unwrap();
        let batch = random_batch(3, 16, 10, 5, &mut rng(20));
        let a = logits(&model, &batch);
        let b = logits(&model, &with_camera(&batch, 21));
        assert_eq!(a, b);
    }
}

#[test]
fn camera_embed_only_acts_through_the_concat() {
    let cfg = ModelConfig { camera_embed: true, ..small_config() };
    let model = VqaModel::<f64>::new(&cfg, 10, 0, 28, &mut rng(22)).unwrap();
    let batch = random_batch(3, 16, 10, 5, &mut rng(23));
    let other = with_camera(&batch, 24);
    assert!(logits(&model, &batch).max_abs_diff(&logits(&model, &other)).unwrap() > 1e-9);
    // zero the rows of every FILM projection that read e_cam
    let rnn = cfg.rnn_dim;
    for b in &model.blocks {
        let mut w = b.film.weight.value_mut();
        let cols = w.shape()[1];
        for v in &mut w.data_mut()[rnn * cols..] {
            *v = 0.0;
        }
    }
    assert_eq!(logits(&model, &batch), logits(&model, &other));
}

#[test]
fn camera_rotation_changes_logits_once_the_head_is_nonzero() {
    let cfg = ModelConfig { use_3d: true, camera_rotation: true, ..small_config() };
    let model = VqaModel::<f64>::new(&cfg, 10, 0, 28, &mut rng(25)).unwrap();
    let batch = random_batch(3, 16, 10, 5, &mut rng(26));
    let other = with_camera(&batch, 27);
    // zero-initialized head: identity transform, camera has no effect yet
    let init = logits(&model, &batch);
    assert!(init.max_abs_diff(&logits(&model, &other)).unwrap() < 1e-9);
    let rot = model.cam_rot.as_ref().unwrap();
    rot.out.weight.set_value(Tensor::randn([4, 6], 0.5, &mut rng(28)));
    assert!(logits(&model, &batch).max_abs_diff(&logits(&model, &other)).unwrap() > 1e-6);
}

#[test]
fn zero_rotation_head_matches_rotation_free_model() {
    let cfg = ModelConfig { use_3d: true, camera_rotation: true, ..small_config() };
    let mut model = VqaModel::<f64>::new(&cfg, 10, 0, 28, &mut rng(29)).unwrap();
    let batch = random_batch(3, 16, 10, 5, &mut rng(30));
    let with_rot = logits(&model, &batch);
    model.cam_rot = None;
    assert!(with_rot.max_abs_diff(&logits(&model, &batch)).unwrap() < 1e-6);
}

#[test]
fn every_enabled_parameter_gets_gradient() {
    let configs = [
        small_config(),
        ModelConfig { camera_embed: true, ..small_config() },
        ModelConfig { use_3d: true, camera_embed: true, camera_rotation: true, ..small_config() },
    ];
    for cfg in configs {
        let model = VqaModel::<f64>::new(&cfg, 10, 0, 28, &mut rng(31)).unwrap();
        if let Some(rot) = &model.cam_rot {
            rot.out.weight.set_value(Tensor::randn([4, 6], 0.1, &mut rng(32)));
        }
        let names: Vec<String> = model.parameters().iter().map(|p| p.name().to_string()).collect();
        assert_eq!(names.iter().any(|n| n.starts_with("cam_film")), cfg.camera_embed);
        assert_eq!(names.iter().any(|n| n.starts_with("cam_rot")), cfg.camera_rotation);
        assert_eq!(names.iter().any(|n| n.starts_with("postproc")), cfg.use_3d);
        let batch = random_batch(4, 16, 10, 5, &mut rng(33));
        let tape = Tape::new();
        let out = model.forward(&tape, &batch, true).unwrap();
        let loss = tape.softmax_cross_entropy(out, &[0, 3, 7, 3]).unwrap();
        tape.backward(loss).unwrap();
        for p in model.parameters() {
            let g = p.grad().unwrap_or_else(|| panic!("{} has no gradient", p.name()));
            assert!(g.data().iter().any(|&v| v != 0.0), "{} gradient is all zero", p.name());
        }
    }
}

#[test]
fn config_validation() {
    let bad = ModelConfig { camera_rotation: true, ..small_config() };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let bad = ModelConfig { use_3d: true, volume: [4, 2, 3, 3], ..small_config() };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let bad = ModelConfig { image_size: 20, ..small_config() };
    assert!(bad.validate().is_err());
    assert!(ModelConfig::default().validate().is_ok());
}

#[test]
fn desk_model_stays_under_five_million_parameters() {
    let cfg = ModelConfig {
        use_3d: true,
        camera_embed: true,
        camera_rotation: true,
        ..ModelConfig::default()
    };
    let model = VqaModel::<f32>::new(&cfg, 64, 0, 28, &mut rng(34)).unwrap();
    let n = model.num_parameters();
    assert!(n < 5_000_000, "{n} parameters");
    let model2d = VqaModel::<f32>::new(&ModelConfig::default(), 64, 0, 28, &mut rng(34)).unwrap();
    assert!(model2d.num_parameters() < n);
}
