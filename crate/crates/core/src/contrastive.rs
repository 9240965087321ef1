//! Contrastive pretraining of the image -> volume encoder.
//!
//! Positive pairs come from the same scene; every other scene in the batch
//! is a negative. Similarity is cosine, so only embedding directions matter.
//! The pretraining path sees images only, never camera parameters.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, Module, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::harness::adam::{Adam, AdamConfig};
use crate::nn::{Linear, VolumeEncoder};

/// Multi-view image access without camera information.
pub trait ViewSource {
    fn num_scenes(&self) -> usize;
    fn num_views(&self, scene: usize) -> usize;
    /// `[3, H, W]` with values in `[0, 1]`.
    fn view(&self, scene: usize, view: usize) -> Tensor<f32>;
}

/// Latent volumes `[N, C', D, H, W]` for images `[N, 3, H, W]`.
pub fn encode_h<'t>(
    encoder: &VolumeEncoder<f32>,
    tape: &'t Tape<f32>,
    images: Var<'t, f32>,
    train: bool,
) -> Result<Var<'t, f32>> {
    encoder.forward(tape, images, train)
}

/// Flat representation: mean over the spatial axes of each channel.
pub fn encode_z<'t, T: Element>(h: Var<'t, T>) -> Result<Var<'t, T>> {
    h.tape().global_avg_pool(h)
}

/// Mean over rows of `-log softmax_k(cos(z1_i, z2_k) / τ)[i]`.
pub fn info_nce<'t, T: Element>(z1: Var<'t, T>, z2: Var<'t, T>, tau: f64) -> Result<Var<'t, T>> {
    let (s1, s2) = (z1.shape(), z2.shape());
    if s1.len() != 2 || s1 != s2 {
        return Err(Error::shape("info_nce", &s1, &s2));
    }
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let tape = z1.tape();
    let a = tape.l2_normalize_rows(z1)?;
    let b = tape.l2_normalize_rows(z2)?;
    let sim = tape.matmul(a, tape.transpose(b)?)?;
    let logits = tape.scale_shift(sim, T::from_f64_lossy(1.0 / tau), T::zero())?;
    let targets: Vec<usize> = (0..s1[0]).collect();
    tape.softmax_cross_entropy(logits, &targets)
}

/// Fraction of rows whose most similar counterpart is their own positive.
/// Ties go to the lowest index.
pub fn nce_accuracy<T: Element>(z1: &Tensor<T>, z2: &Tensor<T>) -> Result<f64> {
    if z1.shape() != z2.shape() || z1.ndim() != 2 {
        return Err(Error::shape("nce_accuracy", z1.shape(), z2.shape()));
    }
    let (n, d) = (z1.shape()[0], z1.shape()[1]);
    if n < 2 {
        return Err(Error::Argument(format!("nce_accuracy needs at least 2 rows, got {n}")));
    }
    let unit = |z: &Tensor<T>| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n * d);
        for (i, row) in z.data().chunks(d).enumerate() {
            let norm = row.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Numeric(format!("zero-norm embedding at row {i}")));
            }
            out.extend(row.iter().map(|v| v.to_f64_lossy() / norm));
        }
        Ok(out)
    };
    let (a, b) = (unit(z1)?, unit(z2)?);
    let mut hits = 0;
    for i in 0..n {
        let ai = &a[i * d..(i + 1) * d];
        let mut best = (0, f64::NEG_INFINITY);
        for k in 0..n {
            let s: f64 = ai.iter().zip(&b[k * d..(k + 1) * d]).map(|(x, y)| x * y).sum();
            if s > best.1 {
                best = (k, s);
            }
        }
        hits += (best.0 == i) as usize;
    }
    Ok(hits as f64 / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairVariant {
    /// One view, two independent 2D augmentations.
    TwoD,
    /// Two distinct views, untransformed.
    ThreeD,
    /// Two distinct views, each augmented.
    TwoPlusThreeD,
}

impl std::str::FromStr for PairVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2d" | "twod" => Ok(PairVariant::TwoD),
            "3d" | "threed" => Ok(PairVariant::ThreeD),
            "2d+3d" | "twoplusthreed" => Ok(PairVariant::TwoPlusThreeD),
            other => Err(Error::Config(format!("unknown augmentation variant {other:?}"))),
        }
    }
}

impl PairVariant {
    pub fn label(self) -> &'static str {
        match self {
            PairVariant::TwoD => "2d",
            PairVariant::ThreeD => "3d",
            PairVariant::TwoPlusThreeD => "2d+3d",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub variant: PairVariant,
    /// Random resized crop area range; `None` disables cropping.
    pub crop_scale: Option<(f64, f64)>,
    pub flip_prob: f64,
    /// Per-channel brightness offset and contrast factor range `±jitter`.
    pub jitter: f64,
}

impl AugmentationPolicy {
    pub fn new(variant: PairVariant) -> Self {
        AugmentationPolicy {
            variant,
            crop_scale: Some((0.5, 1.0)),
            flip_prob: 0.5,
            jitter: 0.2,
        }
    }

    /// All 2D transforms off.
    pub fn identity(variant: PairVariant) -> Self {
        AugmentationPolicy {
            variant,
            crop_scale: None,
            flip_prob: 0.0,
            jitter: 0.0,
        }
    }

    pub fn transforms_enabled(&self) -> bool {
        self.crop_scale.is_some() || self.flip_prob > 0.0 || self.jitter > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((lo, hi)) = self.crop_scale {
            if !(0.0 < lo && lo <= hi && hi <= 1.0) {
                return Err(Error::Config(format!("crop scale ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.flip_prob) || !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::Config("flip probability must be in [0,1] and jitter in [0,1)".into()));
        }
        if self.variant == PairVariant::TwoD && !self.transforms_enabled() {
            return Err(Error::Config(
                "2D pairs with every transform disabled are identical; enable a transform".into(),
            ));
        }
        Ok(())
    }
}

fn bilinear(img: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
    let at = |yy: usize, xx: usize| img[yy * w + xx];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Random resized crop, horizontal flip and per-channel brightness/contrast
/// jitter on a `[3, H, W]` image; output keeps the input size and `[0, 1]` range.
pub fn augment_2d<R: Rng + ?Sized>(image: &Tensor<f32>, policy: &AugmentationPolicy, rng: &mut R) -> Tensor<f32> {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut data = image.data().to_vec();
    if let Some((lo, hi)) = policy.crop_scale {
        let area = rng.random_range(lo..=hi) * (h * w) as f64;
        let log_ratio = rng.random_range((3.0f64 / 4.0).ln()..=(4.0f64 / 3.0).ln());
        let ratio = log_ratio.exp();
        let cw = (area * ratio).sqrt().clamp(1.0, w as f64);
        let ch = (area / ratio).sqrt().clamp(1.0, h as f64);
        let x0 = rng.random_range(0.0..=(w as f64 - cw));
        let y0 = rng.random_range(0.0..=(h as f64 - ch));
        let src = data.clone();
        for (plane, out) in src.chunks(h * w).zip(data.chunks_mut(h * w)) {
            for oy in 0..h {
                // pixel centers of the crop mapped onto the output grid
                let sy = y0 + (oy as f64 + 0.5) * ch / h as f64 - 0.5;
                for ox in 0..w {
                    let sx = x0 + (ox as f64 + 0.5) * cw / w as f64 - 0.5;
                    out[oy * w + ox] = bilinear(plane, h, w, sy, sx);
                }
            }
        }
    }
    if policy.flip_prob > 0.0 && rng.random_bool(policy.flip_prob) {
        for row in data.chunks_mut(w) {
            row.reverse();
        }
    }
    if policy.jitter > 0.0 {
        let j = policy.jitter;
        for plane in data.chunks_mut(h * w) {
            let brightness = rng.random_range(-j..=j) as f32;
            let contrast = rng.random_range(1.0 - j..=1.0 + j) as f32;
            let mean = plane.iter().sum::<f32>() / plane.len() as f32;
            for v in plane.iter_mut() {
                *v = (contrast * (*v - mean) + mean + brightness).clamp(0.0, 1.0);
            }
        }
    }
    debug_assert_eq!(data.len(), c * h * w);
    Tensor::new([c, h, w], data).expect("augment keeps shape")
}

/// Two images of one scene and the view ids they came from.
pub struct PairSample {
    pub views: (usize, usize),
    pub first: Tensor<f32>,
    pub second: Tensor<f32>,
}

fn distinct_views<R: Rng + ?Sized>(scene: usize, n: usize, rng: &mut R) -> Result<(usize, usize)> {
    if n < 2 {
        return Err(Error::Data(format!("scene {scene} has {n} view(s); 3D pairs need two")));
    }
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    Ok((a, b))
}

/// Draws a positive pair from `scene` under `policy`.
pub fn sample_pair<S: ViewSource + ?Sized, R: Rng + ?Sized>(
    source: &S,
    scene: usize,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<PairSample> {
    let n = source.num_views(scene);
    let sample = match policy.variant {
        PairVariant::TwoD => {
            if n == 0 {
                return Err(Error::Data(format!("scene {scene} has no views")));
            }
            let v = rng.random_range(0..n);
            let img = source.view(scene, v);
            PairSample {
                views: (v, v),
                first: augment_2d(&img, policy, rng),
                second: augment_2d(&img, policy, rng),
            }
        }
        PairVariant::ThreeD => {
            let (a, b) = distinct_views(scene, n, rng)?;
            PairSample {
                views: (a, b),
                first: source.view(scene, a),
                second: source.view(scene, b),
            }
        }
        PairVariant::TwoPlusThreeD => {
            let (a, b) = distinct_views(scene, n, rng)?;
            let (ia, ib) = (source.view(scene, a), source.view(scene, b));
            PairSample {
                views: (a, b),
                first: augment_2d(&ia, policy, rng),
                second: augment_2d(&ib, policy, rng),
            }
        }
    };
    Ok(sample)
}

/// Stacks `[3, H, W]` images into `[N, 3, H, W]`.
pub fn stack_images(images: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Argument("cannot stack zero images".into()))?;
    let mut shape = vec![images.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(images.len() * first.numel());
    for img in images {
        if img.shape() != first.shape() {
            return Err(Error::shape("stack_images", img.shape(), first.shape()));
        }
        data.extend_from_slice(img.data());
    }
    Tensor::new(shape, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub policy: AugmentationPolicy,
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Width of an optional `Linear -> ReLU -> Linear` head applied to the
    /// pooled vector during training only. Off by default.
    pub projection_dim: Option<usize>,
}

impl PretrainConfig {
    pub fn new(variant: PairVariant) -> Self {
        PretrainConfig {
            policy: AugmentationPolicy::new(variant),
            tau: 0.1,
            batch_size: 128,
            epochs: 20,
            adam: AdamConfig::default(),
            projection_dim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.tau <= 0.0 || self.batch_size < 2 || self.epochs == 0 || self.projection_dim == Some(0) {
            return Err(Error::Config("need tau > 0, batch_size >= 2 and epochs >= 1".into()));
        }
        self.adam.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_nce_accuracy: f64,
}

/// InfoNCE loss and NCE accuracy over batches of distinct-view pairs with
/// no 2D augmentation. Pair draws use `rng`; batch-norm runs in eval mode.
pub fn evaluate_nce<S: ViewSource + ?Sized, R: Rng + ?Sized>(
    encoder: &VolumeEncoder<f32>,
    source: &S,
    tau: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let policy = AugmentationPolicy::identity(PairVariant::ThreeD);
    let scenes: Vec<usize> = (0..source.num_scenes()).collect();
    let (mut loss, mut acc, mut weight) = (0.0, 0.0, 0.0);
    for chunk in scenes.chunks(batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let (z1, z2) = {
            let mut a = Vec::with_capacity(chunk.len());
            let mut b = Vec::with_capacity(chunk.len());
            for &s in chunk {
                let p = sample_pair(source, s, &policy, rng)?;
                a.push(p.first);
                b.push(p.second);
            }
            (stack_images(&a)?, stack_images(&b)?)
        };
        let tape = Tape::new();
        let za = encode_z(encode_h(encoder, &tape, tape.constant(z1)?, false)?)?;
        let zb = encode_z(encode_h(encoder, &tape, tape.constant(z2)?, false)?)?;
        let l = info_nce(za, zb, tau)?.item()? as f64;
        let a = nce_accuracy(&za.value(), &zb.value())?;
        let w = chunk.len() as f64;
        loss += l * w;
        acc += a * w;
        weight += w;
    }
    if weight == 0.0 {
        return Err(Error::Data("validation needs at least two scenes".into()));
    }
    Ok((loss / weight, acc / weight))
}

/// Trains `encoder` with InfoNCE. Validation always scores the pooled
/// vector, with or without a projection head. `on_epoch` observes each epoch's record
/// (for metrics output) as soon as it completes.
pub fn pretrain<S: ViewSource + ?Sized, R: Rng + ?Sized>(
    encoder: &VolumeEncoder<f32>,
    train: &S,
    val: &S,
    cfg: &PretrainConfig,
    rng: &mut R,
    mut on_epoch: impl FnMut(&PretrainEpoch),
) -> Result<Vec<PretrainEpoch>> {
    cfg.validate()?;
    let head = cfg.projection_dim.map(|d| {
        let c = encoder.volume_channels();
        (Linear::new("projection.0", c, c, rng), Linear::new("projection.1", c, d, rng))
    });
    let mut params = encoder.parameters();
    if let Some((a, b)) = &head {
        params.extend(a.parameters());
        params.extend(b.parameters());
    }
    let mut adam = Adam::new(&params, cfg.adam.clone());
    let mut order: Vec<usize> = (0..train.num_scenes()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut images = Vec::with_capacity(2 * chunk.len());
            let mut second = Vec::with_capacity(chunk.len());
            for &s in chunk {
                let p = sample_pair(train, s, &cfg.policy, rng)?;
                images.push(p.first);
                second.push(p.second);
            }
            images.extend(second);
            let n = chunk.len();
            let tape = Tape::new();
            // both halves share one forward pass and one set of batch statistics
            let x = tape.constant(stack_images(&images)?)?;
            let mut z = encode_z(encode_h(encoder, &tape, x, true)?)?;
            if let Some((a, b)) = &head {
                z = b.forward(&tape, a.forward(&tape, z)?.relu()?)?;
            }
            let loss = info_nce(tape.narrow(z, 0, 0, n)?, tape.narrow(z, 0, n, n)?, cfg.tau)?;
            let l = loss.item()? as f64;
            if !l.is_finite() {
                return Err(Error::Numeric(format!("non-finite contrastive loss in epoch {epoch}")));
            }
            params.iter().for_each(|p| p.zero_grad());
            tape.backward(loss)?;
            adam.step()?;
            total += l;
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::Data("training split has fewer than two scenes".into()));
        }
        let (val_loss, val_acc) = evaluate_nce(encoder, val, cfg.tau, cfg.batch_size, rng)?;
        let rec = PretrainEpoch {
            epoch,
            train_loss: total / batches as f64,
            val_loss,
            val_nce_accuracy: val_acc,
        };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(history)
}
