//! Binary dataset shards.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! b"MRTS"                   magic
//! u32                       format version (1)
//! u32                       scene count
//! per scene:
//!   u64 id, u64 seed
//!   u32 object count
//!   per object: u8 shape, u8 color, u8 size, u8 material, f32 x, y, z, yaw
//!   f32 azimuth, elevation, radius        canonical camera
//!   u32 view count
//!   per view: f32 azimuth, elevation, radius
//!   u32 height, u32 width
//!   per view: height * width * 3 bytes    RGB, row-major
//!   u32 question count
//!   per question: u32 length + UTF-8     one JSON line ending in '\n'
//! ```
//!
//! Attribute bytes are indices into the `ALL` lists of the attribute enums.

use std::fs;
use std::path::Path;

use super::questions::QaItem;
use super::render::Image;
use super::types::{CameraPose, Color, Material, SceneGraph, SceneObject, Shape, Size};
use crate::error::{Error, Result};

pub const SHARD_MAGIC: &[u8; 4] = b"MRTS";
pub const SHARD_VERSION: u32 = 1;

/// One scene with its rendered views and questions.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub scene: SceneGraph,
    pub views: Vec<CameraPose>,
    pub images: Vec<Image>,
    pub qa: Vec<QaItem>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Data(format!("{v} does not fit in a u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

fn put_camera(out: &mut Vec<u8>, c: &CameraPose) {
    put_f32(out, c.azimuth_deg);
    put_f32(out, c.elevation_deg);
    put_f32(out, c.radius);
}

pub fn encode_shard(records: &[SceneRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(SHARD_MAGIC);
    out.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    put_u32(&mut out, records.len())?;
    for r in records {
        if r.views.len() != r.images.len() {
            return Err(Error::Data(format!(
                "scene {} has {} cameras but {} images",
                r.scene.id,
                r.views.len(),
                r.images.len()
            )));
        }
        out.extend_from_slice(&r.scene.id.to_le_bytes());
        out.extend_from_slice(&r.scene.seed.to_le_bytes());
        put_u32(&mut out, r.scene.objects.len())?;
        for o in &r.scene.objects {
            out.extend_from_slice(&[o.shape.index(), o.color.index(), o.size.index(), o.material.index()]);
            for v in o.position {
                put_f32(&mut out, v);
            }
            put_f32(&mut out, o.yaw);
        }
        put_camera(&mut out, &r.scene.canonical);
        put_u32(&mut out, r.views.len())?;
        for c in &r.views {
            put_camera(&mut out, c);
        }
        let (h, w) = r.images.first().map_or((0, 0), |i| (i.height, i.width));
        put_u32(&mut out, h)?;
        put_u32(&mut out, w)?;
        for img in &r.images {
            if (img.height, img.width) != (h, w) {
                return Err(Error::Data(format!("scene {} mixes image sizes", r.scene.id)));
            }
            out.extend_from_slice(&img.data);
        }
        put_u32(&mut out, r.qa.len())?;
        for q in &r.qa {
            let mut line = serde_json::to_string(q)?;
            line.push('\n');
            put_u32(&mut out, line.len())?;
            out.extend_from_slice(line.as_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, at: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: at as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(self.pos, format!("truncated shard while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as f64)
    }

    fn camera(&mut self) -> Result<CameraPose> {
        Ok(CameraPose {
            azimuth_deg: self.f32("camera azimuth")?,
            elevation_deg: self.f32("camera elevation")?,
            radius: self.f32("camera radius")?,
        })
    }

    fn attribute<T>(&mut self, what: &str, from: impl Fn(u8) -> Option<T>) -> Result<T> {
        let at = self.pos;
        let b = self.take(1, what)?[0];
        from(b).ok_or_else(|| self.err(at, format!("invalid {what} index {b}")))
    }
}

pub fn decode_shard(buf: &[u8]) -> Result<Vec<SceneRecord>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != SHARD_MAGIC {
        return Err(r.err(0, "bad shard magic"));
    }
    let version = r.u32("version")?;
    if version != SHARD_VERSION as usize {
        return Err(r.err(4, format!("unsupported shard version {version}")));
    }
    let count = r.u32("scene count")?;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let id = r.u64("scene id")?;
        let seed = r.u64("scene seed")?;
        let n_obj = r.u32("object count")?;
        let mut objects = Vec::with_capacity(n_obj.min(64));
        for _ in 0..n_obj {
            let shape = r.attribute("shape", Shape::from_index)?;
            let color = r.attribute("color", Color::from_index)?;
            let size = r.attribute("size", Size::from_index)?;
            let material = r.attribute("material", Material::from_index)?;
            let position = [r.f32("x")?, r.f32("y")?, r.f32("z")?];
            let yaw = r.f32("yaw")?;
            objects.push(SceneObject {
                shape,
                color,
                size,
                material,
                position,
                yaw,
            });
        }
        let canonical = r.camera()?;
        let n_views = r.u32("view count")?;
        let views = (0..n_views).map(|_| r.camera()).collect::<Result<Vec<_>>>()?;
        let (h, w) = (r.u32("height")?, r.u32("width")?);
        let mut images = Vec::with_capacity(n_views);
        for _ in 0..n_views {
            let data = r.take(h * w * 3, "image")?.to_vec();
            images.push(Image {
                width: w,
                height: h,
                data,
            });
        }
        let n_qa = r.u32("question count")?;
        let mut qa = Vec::with_capacity(n_qa.min(1 << 12));
        for _ in 0..n_qa {
            let len = r.u32("question length")?;
            let at = r.pos;
            let raw = r.take(len, "question record")?;
            let text = std::str::from_utf8(raw).map_err(|_| r.err(at, "question record is not UTF-8"))?;
            let item: QaItem =
                serde_json::from_str(text.trim_end()).map_err(|e| r.err(at, format!("bad question record: {e}")))?;
            qa.push(item);
        }
        records.push(SceneRecord {
            scene: SceneGraph {
                id,
                objects,
                canonical,
                seed,
            },
            views,
            images,
            qa,
        });
    }
    if r.pos != buf.len() {
        return Err(r.err(r.pos, "trailing bytes after last scene"));
    }
    Ok(records)
}

pub fn write_shard(path: impl AsRef<Path>, records: &[SceneRecord]) -> Result<()> {
    fs::write(path, encode_shard(records)?)?;
    Ok(())
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<Vec<SceneRecord>> {
    decode_shard(&fs::read(path)?)
}
