//! Scene and viewpoint sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::types::{CameraPose, Color, Material, SceneGraph, SceneObject, Shape, Size, CAMERA_RADIUS};
use crate::error::{Error, Result};

/// Largest |x| and |y| of an object center.
pub const PLACEMENT_BOUND: f64 = 3.0;
/// Extra clearance between bounding circles.
pub const PLACEMENT_MARGIN: f64 = 0.1;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
pub const MAX_OBJECTS: usize = 24;

/// Camera elevation regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewMode {
    /// Fixed 30 degree elevation.
    V1,
    /// Elevation drawn from Uniform(20, 30) degrees.
    V2,
}

impl std::str::FromStr for ViewMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v1" => Ok(ViewMode::V1),
            "v2" => Ok(ViewMode::V2),
            other => Err(Error::Config(format!("mode must be v1 or v2, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for ViewMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ViewMode::V1 => "v1",
            ViewMode::V2 => "v2",
        })
    }
}

/// Object-level sampling bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Allow small objects alongside large ones.
    pub small_objects: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            min_objects: 3,
            max_objects: 6,
            small_objects: true,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_objects == 0 || self.min_objects > self.max_objects || self.max_objects > MAX_OBJECTS {
            return Err(Error::Config(format!(
                "object count range {}..={} must satisfy 1 <= min <= max <= {MAX_OBJECTS}",
                self.min_objects, self.max_objects
            )));
        }
        Ok(())
    }
}

/// Rounds through f32 so values survive the shard format unchanged.
pub fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

fn pick<T: Copy, R: Rng + ?Sized>(all: &[T], rng: &mut R) -> T {
    all[rng.random_range(0..all.len())]
}

/// Samples a scene whose objects keep `r_i + r_j + margin` apart. Fails
/// with a generation error when an object cannot be placed within the
/// attempt cap; callers resample.
pub fn generate_scene<R: Rng + ?Sized>(id: u64, seed: u64, cfg: &SceneConfig, rng: &mut R) -> Result<SceneGraph> {
    cfg.validate()?;
    let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let sizes: &[Size] = if cfg.small_objects { Size::ALL } else { &[Size::Large] };
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n);
    for k in 0..n {
        let shape = pick(Shape::ALL, rng);
        let color = pick(Color::ALL, rng);
        let size = pick(sizes, rng);
        let material = pick(Material::ALL, rng);
        let r = size.radius();
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let x = f32_exact(rng.random_range(-PLACEMENT_BOUND..=PLACEMENT_BOUND));
            let y = f32_exact(rng.random_range(-PLACEMENT_BOUND..=PLACEMENT_BOUND));
            let clear = objects.iter().all(|o| {
                let (dx, dy) = (o.position[0] - x, o.position[1] - y);
                (dx * dx + dy * dy).sqrt() >= o.radius() + r + PLACEMENT_MARGIN
            });
            if clear {
                placed = Some((x, y));
                break;
            }
        }
        let (x, y) = placed.ok_or_else(|| {
            Error::Generation(format!(
                "scene {id}: object {k} not placed after {MAX_PLACEMENT_ATTEMPTS} attempts"
            ))
        })?;
        let yaw = f32_exact(rng.random_range(0.0..std::f64::consts::FRAC_PI_2));
        objects.push(SceneObject {
            shape,
            color,
            size,
            material,
            position: [x, y, f32_exact(SceneObject::resting_height(shape, size))],
            yaw,
        });
    }
    Ok(SceneGraph {
        id,
        objects,
        canonical: CameraPose::canonical(),
        seed,
    })
}

/// Retries [`generate_scene`] on placement failure, up to `tries` times.
pub fn generate_scene_retrying<R: Rng + ?Sized>(
    id: u64,
    seed: u64,
    cfg: &SceneConfig,
    rng: &mut R,
    tries: usize,
) -> Result<SceneGraph> {
    let mut last = None;
    for _ in 0..tries.max(1) {
        match generate_scene(id, seed, cfg, rng) {
            Ok(s) => return Ok(s),
            Err(e @ Error::Generation(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Viewpoint cameras on the orbit: azimuth i.i.d. Uniform(0, 360).
pub fn sample_views<R: Rng + ?Sized>(n_views: usize, mode: ViewMode, rng: &mut R) -> Result<Vec<CameraPose>> {
    if n_views < 2 {
        return Err(Error::Config(format!("need at least 2 views per scene, got {n_views}")));
    }
    Ok((0..n_views)
        .map(|_| {
            let azimuth_deg = f32_exact(rng.random_range(0.0..360.0));
            let elevation_deg = match mode {
                ViewMode::V1 => 30.0,
                ViewMode::V2 => f32_exact(rng.random_range(20.0..=30.0)),
            };
            CameraPose {
                azimuth_deg,
                elevation_deg,
                radius: CAMERA_RADIUS,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn placement_respects_bounds_and_clearance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..200 {
            let s = generate_scene_retrying(i, i, &SceneConfig::default(), &mut rng, 10).unwrap();
            assert!((3..=6).contains(&s.objects.len()));
            for (a, o) in s.objects.iter().enumerate() {
                assert!(o.position[0].abs() <= 3.0 && o.position[1].abs() <= 3.0);
                for p in &s.objects[a + 1..] {
                    let d = ((o.position[0] - p.position[0]).powi(2) + (o.position[1] - p.position[1]).powi(2)).sqrt();
                    assert!(d >= o.radius() + p.radius() + 0.1);
                }
            }
        }
    }

    #[test]
    fn large_only_scenes() {
        let cfg = SceneConfig {
            small_objects: false,
            ..SceneConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = generate_scene_retrying(0, 0, &cfg, &mut rng, 10).unwrap();
        assert!(s.objects.iter().all(|o| o.size == Size::Large));
    }

    #[test]
    fn single_view_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_views(1, ViewMode::V1, &mut rng).is_err());
    }
}
