//! Builds each model variant, runs one batch of rendered views through it
//! and prints parameter counts and predicted answers.
//!
//! cargo run --release --example vqa_forward

use mrt::autodiff::{Module, Tensor};
use mrt::harness::Vocabs;
use mrt::nn::{ModelConfig, VqaBatch, VqaModel};
use mrt::scene::{generate_dataset, GenConfig};
use mrt::seeds;

fn main() -> mrt::Result<()> {
    let gen = GenConfig::parse("n_train = 4\nn_val = 2\nn_test = 2\nn_views = 4\n")?;
    let data = generate_dataset(&gen)?;
    let vocabs = Vocabs::for_dataset(&data)?;
    let split = &data.train;

    // one question per scene, shown through its second view
    let mut images = Vec::new();
    let mut tokens = Vec::new();
    let mut cameras = Vec::new();
    for r in &split.records {
        images.extend_from_slice(r.images[1].to_tensor().data());
        tokens.extend(vocabs.question.encode_padded(&r.qa[0].question, vocabs.max_question_len)?);
        cameras.extend(r.views[1].raw().iter().map(|&c| c as f32));
    }
    let n = split.records.len();
    let s = gen.image_size;
    let batch = VqaBatch {
        images: Tensor::new([n, 3, s, s], images)?,
        tokens,
        cameras: Tensor::new([n, 6], cameras)?,
    };

    for (name, cfg) in [
        ("2D FILM", ModelConfig::default()),
        ("2D FILM + camera embed", ModelConfig { camera_embed: true, ..Default::default() }),
        ("3D FILM + rotation", ModelConfig { use_3d: true, camera_rotation: true, ..Default::default() }),
    ] {
        let model = VqaModel::<f32>::new(
            &cfg,
            vocabs.question.len(),
            vocabs.pad_id(),
            vocabs.answer.len(),
            &mut seeds::stream(0, "init"),
        )?;
        let preds = model.predict(&batch)?;
        let answers: Vec<&str> = preds.iter().map(|&p| vocabs.answer.token(p)).collect::<mrt::Result<_>>()?;
        println!("{name:<24} {:>9} parameters, untrained answers {answers:?}", model.num_parameters());
    }
    println!("questions: {:?}", split.records.iter().map(|r| r.qa[0].question.as_str()).collect::<Vec<_>>());
    Ok(())
}
