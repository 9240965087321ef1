//! Per-pixel ray casting of spheres, yawed cubes and upright cylinders.
//!
//! One directional light points straight down and the ground plane is a
//! single flat color, so the backdrop carries no azimuth information.

use serde::{Deserialize, Serialize};

use super::types::{CameraPose, Material, SceneGraph, SceneObject, Shape};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const FIELD_OF_VIEW_DEG: f64 = 60.0;
pub const GROUND_RGB: [u8; 3] = [168, 168, 164];
pub const SKY_RGB: [u8; 3] = [214, 220, 228];
const AMBIENT: f64 = 0.4;
const DIFFUSE: f64 = 0.6;
const SPECULAR: f64 = 0.7;
const SHININESS: i32 = 40;
/// Toward the light.
const LIGHT: [f64; 3] = [0.0, 0.0, 1.0];

/// 8-bit RGB raster, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Data(format!(
                "image buffer has {} bytes, expected {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// `[3, H, W]` floats in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let hw = self.width * self.height;
        let mut out = vec![0.0f32; 3 * hw];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * hw + p] = px[c] as f32 / 255.0;
            }
        }
        Tensor::new([3, self.height, self.width], out).expect("image tensor shape")
    }

    /// Binary PPM (P6), handy for eyeballing renders.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

type V3 = [f64; 3];

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn normalize(a: V3) -> V3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Nearest positive hit distance and outward unit normal.
fn intersect(obj: &SceneObject, origin: V3, dir: V3) -> Option<(f64, V3)> {
    const EPS: f64 = 1e-9;
    let c = obj.position;
    let r = obj.radius();
    match obj.shape {
        Shape::Sphere => {
            let oc = sub(origin, c);
            let b = dot(oc, dir);
            let disc = b * b - (dot(oc, oc) - r * r);
            if disc < 0.0 {
                return None;
            }
            let t = -b - disc.sqrt();
            (t > EPS).then(|| {
                let p = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
                (t, normalize(sub(p, c)))
            })
        }
        Shape::Cube => {
            // ray in the cube frame: translate, then undo the yaw
            let (s, co) = obj.yaw.sin_cos();
            let o = sub(origin, c);
            let lo = [co * o[0] + s * o[1], -s * o[0] + co * o[1], o[2]];
            let ld = [co * dir[0] + s * dir[1], -s * dir[0] + co * dir[1], dir[2]];
            let h = obj.half_extent();
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut axis = 0;
            let mut sign = 1.0;
            for k in 0..3 {
                if ld[k].abs() < 1e-15 {
                    if lo[k].abs() > h {
                        return None;
                    }
                    continue;
                }
                let (a, b) = ((-h - lo[k]) / ld[k], (h - lo[k]) / ld[k]);
                let (near, far) = if a < b { (a, b) } else { (b, a) };
                if near > t0 {
                    t0 = near;
                    axis = k;
                    sign = if ld[k] > 0.0 { -1.0 } else { 1.0 };
                }
                t1 = t1.min(far);
            }
            if t0 > t1 || t0 <= EPS {
                return None;
            }
            let mut ln = [0.0; 3];
            ln[axis] = sign;
            let n = [co * ln[0] - s * ln[1], s * ln[0] + co * ln[1], ln[2]];
            Some((t0, n))
        }
        Shape::Cylinder => {
            let (bottom, top) = (c[2] - r, c[2] + r);
            let mut best: Option<(f64, V3)> = None;
            let (ox, oy) = (origin[0] - c[0], origin[1] - c[1]);
            let a = dir[0] * dir[0] + dir[1] * dir[1];
            if a > 1e-15 {
                let b = ox * dir[0] + oy * dir[1];
                let disc = b * b - a * (ox * ox + oy * oy - r * r);
                if disc >= 0.0 {
                    let t = (-b - disc.sqrt()) / a;
                    let z = origin[2] + t * dir[2];
                    if t > EPS && z >= bottom && z <= top {
                        let n = [(ox + t * dir[0]) / r, (oy + t * dir[1]) / r, 0.0];
                        best = Some((t, n));
                    }
                }
            }
            if dir[2].abs() > 1e-15 {
                let t = (top - origin[2]) / dir[2];
                let (x, y) = (ox + t * dir[0], oy + t * dir[1]);
                if t > EPS && x * x + y * y <= r * r && best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, [0.0, 0.0, 1.0]));
                }
            }
            best
        }
    }
}

fn shade(obj: &SceneObject, n: V3, view: V3) -> [u8; 3] {
    let base = obj.color.rgb();
    let lambert = dot(n, LIGHT).max(0.0);
    let k = AMBIENT + DIFFUSE * lambert;
    let spec = match obj.material {
        Material::Metal => {
            let h = normalize([LIGHT[0] + view[0], LIGHT[1] + view[1], LIGHT[2] + view[2]]);
            SPECULAR * dot(n, h).max(0.0).powi(SHININESS) * 255.0
        }
        Material::Rubber => 0.0,
    };
    base.map(|b| (b as f64 * k + spec).round().clamp(0.0, 255.0) as u8)
}

/// Renders `scene` from `camera`; also returns, per pixel, the index of
/// the visible object if any.
pub fn render_with_ids(scene: &SceneGraph, camera: &CameraPose, height: usize, width: usize) -> (Image, Vec<Option<usize>>) {
    let origin = camera.position();
    let rot = camera.rotation();
    let half = (FIELD_OF_VIEW_DEG.to_radians() / 2.0).tan();
    let aspect = width as f64 / height as f64;
    let mut data = Vec::with_capacity(height * width * 3);
    let mut ids = Vec::with_capacity(height * width);
    for i in 0..height {
        let v = (1.0 - 2.0 * (i as f64 + 0.5) / height as f64) * half;
        for j in 0..width {
            let u = (2.0 * (j as f64 + 0.5) / width as f64 - 1.0) * half * aspect;
            let local = normalize([u, v, -1.0]);
            let dir = [
                dot(rot[0], local),
                dot(rot[1], local),
                dot(rot[2], local),
            ];
            let mut hit: Option<(f64, V3, usize)> = None;
            for (k, obj) in scene.objects.iter().enumerate() {
                if let Some((t, n)) = intersect(obj, origin, dir) {
                    if hit.is_none_or(|(bt, _, _)| t < bt) {
                        hit = Some((t, n, k));
                    }
                }
            }
            let px = match hit {
                Some((_, n, k)) => {
                    ids.push(Some(k));
                    shade(&scene.objects[k], n, [-dir[0], -dir[1], -dir[2]])
                }
                None => {
                    ids.push(None);
                    if dir[2] < 0.0 {
                        GROUND_RGB
                    } else {
                        SKY_RGB
                    }
                }
            };
            data.extend_from_slice(&px);
        }
    }
    (Image { width, height, data }, ids)
}

pub fn render_view(scene: &SceneGraph, camera: &CameraPose, height: usize, width: usize) -> Image {
    render_with_ids(scene, camera, height, width).0
}
