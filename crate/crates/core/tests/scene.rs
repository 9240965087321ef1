use std::collections::HashSet;

use mrt::autodiff::{Tape, Tensor};
use mrt::nn::Encoder2d;
use mrt::scene::questions::{has_ties, Attribute, TIE_EPS};
use mrt::scene::render::{GROUND_RGB, SKY_RGB};
use mrt::scene::shard::{decode_shard, encode_shard};
use mrt::scene::{
    answer_oracle, build_dataset, generate_dataset, generate_questions, generate_scene, generate_scene_retrying,
    holds, load_dataset, render_view, render_with_ids, sample_views, CameraPose, Color, Description, GenConfig,
    Material, Program, Relation, SceneConfig, SceneGraph, SceneObject, Shape, Size, TemplateId, ViewMode,
};
use mrt::{seeds, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Chi-square 0.999 quantile with 35 degrees of freedom.
const CHI2_35_P001: f64 = 66.618_828_843_701;

fn small_gen(seed: u64) -> GenConfig {
    GenConfig {
        seed,
        n_train: 240,
        n_val: 12,
        n_test: 24,
        ..GenConfig::default()
    }
}

fn scenes(n: u64, seed: u64) -> Vec<SceneGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| generate_scene_retrying(i, seed, &SceneConfig::default(), &mut rng, 100).unwrap())
        .collect()
}

fn object(shape: Shape, size: Size, x: f64, y: f64) -> SceneObject {
    SceneObject {
        shape,
        color: Color::Red,
        size,
        material: Material::Rubber,
        position: [x, y, SceneObject::resting_height(shape, size)],
        yaw: 0.0,
    }
}

fn scene_of(objects: Vec<SceneObject>) -> SceneGraph {
    SceneGraph {
        id: 0,
        objects,
        canonical: CameraPose::canonical(),
        seed: 0,
    }
}

#[test]
fn object_count_respects_max() {
    let cfg = SceneConfig {
        min_objects: 2,
        max_objects: 3,
        ..SceneConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for i in 0..300 {
        let s = generate_scene_retrying(i, 0, &cfg, &mut rng, 100).unwrap();
        assert!(s.objects.len() <= 3 && s.objects.len() >= 2);
    }
}

#[test]
fn same_seed_same_scene() {
    let a = generate_scene(5, 9, &SceneConfig::default(), &mut seeds::stream(9, "s")).unwrap();
    let b = generate_scene(5, 9, &SceneConfig::default(), &mut seeds::stream(9, "s")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn placement_failure_is_a_generation_error() {
    let cfg = SceneConfig {
        min_objects: 24,
        max_objects: 24,
        small_objects: false,
    };
    // random sequential packing jams well below 24 large objects
    let err = generate_scene(0, 0, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, Error::Generation(_)));
}

#[test]
fn all_colors_and_shapes_appear() {
    let all = scenes(1000, 11);
    let colors: HashSet<Color> = all.iter().flat_map(|s| s.objects.iter().map(|o| o.color)).collect();
    let shapes: HashSet<Shape> = all.iter().flat_map(|s| s.objects.iter().map(|o| o.shape)).collect();
    assert_eq!(colors.len(), 8);
    assert_eq!(shapes.len(), 3);
}

#[test]
fn elevation_regimes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        for c in sample_views(8, ViewMode::V1, &mut rng).unwrap() {
            assert_eq!(c.elevation_deg, 30.0);
            assert_eq!(c.radius, 7.5);
        }
        for c in sample_views(8, ViewMode::V2, &mut rng).unwrap() {
            assert!((20.0..=30.0).contains(&c.elevation_deg));
        }
    }
}

#[test]
fn azimuths_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bins = [0usize; 36];
    let views = sample_views(10_000, ViewMode::V1, &mut rng).unwrap();
    for c in &views {
        assert!((0.0..360.0).contains(&c.azimuth_deg));
        bins[(c.azimuth_deg / 10.0) as usize] += 1;
    }
    let expected = 10_000.0 / 36.0;
    let chi2: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < CHI2_35_P001, "chi2 {chi2}");
}

#[test]
fn empty_scene_backdrop_is_azimuth_free() {
    let empty = scene_of(vec![]);
    let base = render_view(&empty, &CameraPose::canonical(), 64, 64);
    assert!(base.data.chunks(3).all(|p| p == GROUND_RGB || p == SKY_RGB));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let cam = CameraPose {
            azimuth_deg: rng.random_range(0.0..360.0),
            ..CameraPose::canonical()
        };
        assert_eq!(render_view(&empty, &cam, 64, 64), base);
    }
}

#[test]
fn centered_sphere_visible_from_every_azimuth() {
    let s = scene_of(vec![object(Shape::Sphere, Size::Large, 0.0, 0.0)]);
    for k in 0..36 {
        let cam = CameraPose {
            azimuth_deg: k as f64 * 10.0,
            ..CameraPose::canonical()
        };
        let (img, ids) = render_with_ids(&s, &cam, 64, 64);
        let hits = ids.iter().filter(|i| i.is_some()).count();
        assert!(hits >= 40, "azimuth {}: {hits} pixels", cam.azimuth_deg);
        let non_backdrop = img.data.chunks(3).filter(|p| *p != GROUND_RGB && *p != SKY_RGB).count();
        assert_eq!(non_backdrop, hits);
    }
}

#[test]
fn rendering_is_bit_deterministic() {
    let s = &scenes(1, 4)[0];
    let cam = sample_views(2, ViewMode::V2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()[0];
    assert_eq!(render_view(s, &cam, 64, 64), render_view(s, &cam, 64, 64));
}

#[test]
fn nearer_object_occludes() {
    // sphere directly between the camera and a cube behind it
    let s = scene_of(vec![
        object(Shape::Cube, Size::Large, 0.0, 2.0),
        object(Shape::Sphere, Size::Large, 0.0, -2.0),
    ]);
    let (_, ids) = render_with_ids(&s, &CameraPose::canonical(), 64, 64);
    let sphere = ids.iter().filter(|i| **i == Some(1)).count();
    assert!(sphere > 0);
}

#[test]
fn left_of_by_hand() {
    let s = scene_of(vec![
        object(Shape::Sphere, Size::Large, -1.0, 0.0),
        object(Shape::Cube, Size::Large, 1.0, 0.0),
    ]);
    assert!(holds(&s, Relation::Left, 0, 1));
    assert!(!holds(&s, Relation::Left, 1, 0));
    assert!(holds(&s, Relation::Right, 1, 0));
}

#[test]
fn relation_algebra_on_generated_scenes() {
    for s in scenes(100, 21) {
        let n = s.objects.len();
        assert!(!has_ties(&s));
        for a in 0..n {
            for r in Relation::ALL {
                assert!(!holds(&s, *r, a, a));
            }
            for b in 0..n {
                if a == b {
                    continue;
                }
                assert_eq!(holds(&s, Relation::Left, a, b), holds(&s, Relation::Right, b, a));
                assert_eq!(holds(&s, Relation::Front, a, b), holds(&s, Relation::Behind, b, a));
                // totality off ties
                assert_ne!(holds(&s, Relation::Left, a, b), holds(&s, Relation::Right, a, b));
                assert_ne!(holds(&s, Relation::Front, a, b), holds(&s, Relation::Behind, a, b));
                for c in 0..n {
                    if holds(&s, Relation::Left, a, b) && holds(&s, Relation::Left, b, c) {
                        assert!(holds(&s, Relation::Left, a, c));
                    }
                }
            }
        }
    }
}

#[test]
fn ties_suppress_questions() {
    let s = scene_of(vec![
        object(Shape::Sphere, Size::Large, 0.0, -1.5),
        object(Shape::Cube, Size::Large, 0.0, 1.5),
    ]);
    assert!(has_ties(&s));
    assert!(TIE_EPS > 0.0);
    let qs = generate_questions(&s, &mut ChaCha8Rng::seed_from_u64(0), 10, TemplateId::ALL);
    assert!(qs.is_empty());
}

fn descriptions(p: &Program) -> Vec<Description> {
    match p {
        Program::Exist { clause } | Program::Count { clause } | Program::Query { clause, .. } => {
            vec![clause.target, clause.anchor]
        }
        Program::CompareCount { first, second } => vec![first.target, first.anchor, second.target, second.anchor],
        Program::Relate { subject, object, .. } => vec![*subject, *object],
    }
}

#[test]
fn questions_are_consistent_and_grounded() {
    let mut seen_templates = HashSet::new();
    for s in scenes(200, 31) {
        let qs = generate_questions(&s, &mut ChaCha8Rng::seed_from_u64(s.id), 12, TemplateId::ALL);
        for q in qs {
            seen_templates.insert(q.template);
            assert_eq!(answer_oracle(&s, &q.program).unwrap(), q.answer);
            assert_eq!(q.program.text(), q.question);
            for d in descriptions(&q.program) {
                assert!(s.objects.iter().any(|o| d.matches(o)), "{} absent", d.phrase());
            }
            if let Program::Query { attribute, clause } = &q.program {
                assert!(!clause.target.mentions(*attribute));
                let _: Attribute = *attribute;
            }
        }
    }
    assert_eq!(seen_templates.len(), TemplateId::ALL.len());
}

#[test]
fn answers_ignore_viewpoints() {
    let data = generate_dataset(&small_gen(3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for rec in &data.train.records {
        let mut shuffled = rec.clone();
        let k = rng.random_range(0..shuffled.views.len());
        shuffled.views.rotate_left(k);
        shuffled.images.rotate_left(k);
        for q in &shuffled.qa {
            assert_eq!(answer_oracle(&shuffled.scene, &q.program).unwrap(), q.answer);
        }
    }
}

#[test]
fn dataset_balance_and_splits() {
    let cfg = small_gen(4);
    let data = generate_dataset(&cfg).unwrap();
    let ids = |s: &mrt::scene::Split| s.records.iter().map(|r| r.scene.id).collect::<HashSet<_>>();
    let (tr, va, te) = (ids(&data.train), ids(&data.val), ids(&data.test));
    assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
    for split in [&data.train, &data.val, &data.test] {
        let qa: Vec<_> = split.records.iter().flat_map(|r| &r.qa).collect();
        for t in TemplateId::ALL {
            let of_t: Vec<_> = qa.iter().filter(|q| q.template == *t).collect();
            for q in &of_t {
                let share = of_t.iter().filter(|p| p.answer == q.answer).count() as f64 / of_t.len() as f64;
                assert!(share <= 0.6, "{} {:?} {share}", split.name, q.answer);
            }
        }
    }
    let qa: Vec<_> = data.train.records.iter().flat_map(|r| &r.qa).collect();
    let yn: Vec<_> = qa.iter().filter(|q| q.template.is_yes_no()).collect();
    let yes = yn.iter().filter(|q| q.answer == "yes").count() as f64 / yn.len() as f64;
    assert!((0.4..=0.6).contains(&yes), "yes share {yes}");
    let n = data.train.records.len() as f64 * 6.0;
    assert!((qa.len() as f64 - n).abs() <= 0.1 * n, "{} questions", qa.len());
}

#[test]
fn shard_round_trip_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenConfig {
        n_train: 20,
        n_val: 2,
        n_test: 2,
        ..small_gen(5)
    };
    let (data, stats) = build_dataset(&cfg, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, data);
    assert_eq!(stats.splits["train"].scenes, 20);

    let again = tempfile::tempdir().unwrap();
    build_dataset(&cfg, again.path()).unwrap();
    for f in ["train.mrts", "val.mrts", "test.mrts", "stats.json"] {
        let a = std::fs::read(dir.path().join(f)).unwrap();
        let b = std::fs::read(again.path().join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn truncated_or_corrupt_shards_fail_cleanly() {
    let cfg = GenConfig {
        n_train: 3,
        n_val: 2,
        n_test: 1,
        n_views: 2,
        image_size: 32,
        ..small_gen(6)
    };
    let data = generate_dataset(&cfg).unwrap();
    let bytes = encode_shard(&data.train.records).unwrap();
    assert_eq!(decode_shard(&bytes).unwrap(), data.train.records);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let cut = rng.random_range(0..bytes.len());
        match decode_shard(&bytes[..cut]) {
            Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(decode_shard(&extra), Err(Error::Format { .. })));
}

#[test]
fn missing_shard_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Data(_))));
}

#[test]
fn encoder_output_varies_across_rendered_views() {
    let all = scenes(25, 41);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut images = Vec::new();
    for s in &all {
        for cam in sample_views(4, ViewMode::V1, &mut rng).unwrap() {
            images.extend(render_view(s, &cam, 64, 64).to_tensor().into_data());
        }
    }
    let x = Tensor::new([100, 3, 64, 64], images).unwrap();
    let enc = Encoder2d::<f32>::new("enc", 16, &mut rng);
    let tape = Tape::new();
    let h = enc.forward(&tape, tape.constant(x).unwrap(), false).unwrap().value();
    assert_eq!(h.shape(), &[100, 16, 8, 8]);
    let per = h.numel() / 100;
    let means: Vec<f64> = h
        .data()
        .chunks(per)
        .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / per as f64)
        .collect();
    let mu = means.iter().sum::<f64>() / 100.0;
    let std = (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / 100.0).sqrt();
    assert!(std > 0.0);
}
