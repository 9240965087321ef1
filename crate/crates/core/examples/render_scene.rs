//! Samples one scene, renders it from several orbit cameras and writes the
//! views as PPM files next to a JSON dump of the scene graph.
//!
//! cargo run --release --example render_scene -- [seed] [out_dir]

use std::fs;
use std::path::PathBuf;

use mrt::scene::{generate_scene_retrying, render_view, sample_views, SceneConfig, ViewMode};
use mrt::seeds;

fn main() -> mrt::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let out = PathBuf::from(args.get(2).map(String::as_str).unwrap_or("render_out"));
    fs::create_dir_all(&out)?;

    let mut rng = seeds::stream(seed, "example/render");
    let scene = generate_scene_retrying(0, seed, &SceneConfig::default(), &mut rng, 100)?;
    let mut cameras = vec![scene.canonical];
    cameras.extend(sample_views(5, ViewMode::V2, &mut rng)?);

    for (i, cam) in cameras.iter().enumerate() {
        let img = render_view(&scene, cam, 128, 128);
        let path = out.join(format!("view{i}_az{:.0}_el{:.0}.ppm", cam.azimuth_deg, cam.elevation_deg));
        fs::write(&path, img.to_ppm())?;
        println!("wrote {}", path.display());
    }
    fs::write(out.join("scene.json"), serde_json::to_string_pretty(&scene)?)?;
    for o in &scene.objects {
        println!(
            "{:>6} {:>6} {:>6} {:>8} at ({:+.2}, {:+.2})",
            o.size.word(),
            o.color.word(),
            o.material.word(),
            o.shape.word(),
            o.position[0],
            o.position[1]
        );
    }
    Ok(())
}
