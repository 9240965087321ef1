//! Image encoders: a strided 2D stack, the 2D-to-3D postprocessor, and the
//! volumetric encoder trained contrastively.

use rand::Rng;

use super::layers::ConvBlock;
use crate::autodiff::{Element, Module, ParamRef, Tape, Var};
use crate::error::{Error, Result};

/// Total spatial downsampling of [`Encoder2d`].
pub const ENCODER_STRIDE: usize = 8;

/// Four conv/BN/ReLU blocks: three 4×4 stride-2 blocks and a 3×3 stride-1
/// block, so features come out at 1/8 of the input resolution.
pub struct Encoder2d<T: Element> {
    pub blocks: Vec<ConvBlock<T>>,
}

impl<T: Element> Encoder2d<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, out_channels: usize, rng: &mut R) -> Self {
        let widths = [3, 32, 64, out_channels, out_channels];
        let blocks = (0..4)
            .map(|i| {
                let (k, s) = if i < 3 { (4, 2) } else { (3, 1) };
                ConvBlock::new(&format!("{name}.block{i}"), 2, widths[i], widths[i + 1], k, s, 1, rng)
            })
            .collect();
        Encoder2d { blocks }
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().unwrap().conv.out_channels()
    }

    /// `[N, 3, H, W]` -> `[N, C, H/8, W/8]`.
    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, train: bool) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() != 4 || s[2] % ENCODER_STRIDE != 0 || s[3] % ENCODER_STRIDE != 0 {
            return Err(Error::Config(format!(
                "image dims {s:?} must be [N, 3, H, W] with H, W divisible by {ENCODER_STRIDE}"
            )));
        }
        self.blocks.iter().try_fold(x, |h, b| b.forward(tape, h, train))
    }
}

impl<T: Element> Module<T> for Encoder2d<T> {
    fn parameters(&self) -> Vec<ParamRef<T>> {
        self.blocks.iter().flat_map(|b| b.parameters()).collect()
    }

    fn buffers(&self) -> Vec<ParamRef<T>> {
        self.blocks.iter().flat_map(|b| b.buffers()).collect()
    }
}

/// Lifts a 2D feature map to a stack of feature cubes: 2D conv blocks
/// emitting `C'·D` channels, then a channel -> (channel, depth) reshape.
pub struct Postprocessor<T: Element> {
    pub blocks: Vec<ConvBlock<T>>,
    pub volume_channels: usize,
    pub depth: usize,
}

impl<T: Element> Postprocessor<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        volume_channels: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let lifted = volume_channels * depth;
        if lifted == 0 {
            return Err(Error::Config("volume channels and depth must be positive".into()));
        }
        let blocks = vec![
            ConvBlock::new(&format!("{name}.block0"), 2, in_channels, lifted, 3, 1, 1, rng),
            ConvBlock::new(&format!("{name}.block1"), 2, lifted, lifted, 1, 1, 0, rng),
        ];
        Ok(Postprocessor {
            blocks,
            volume_channels,
            depth,
        })
    }

    /// Output channels of the final 2D conv.
    pub fn lifted_channels(&self) -> usize {
        self.blocks.last().unwrap().conv.out_channels()
    }

    /// The 2D output before the reshape, `[N, C'·D, H, W]`.
    pub fn forward_2d<'t>(&self, tape: &'t Tape<T>, h: Var<'t, T>, train: bool) -> Result<Var<'t, T>> {
        self.blocks.iter().try_fold(h, |h, b| b.forward(tape, h, train))
    }

    /// `[N, C, H, W]` -> `[N, C', D, H, W]`.
    pub fn forward<'t>(&self, tape: &'t Tape<T>, h: Var<'t, T>, train: bool) -> Result<Var<'t, T>> {
        let flat = self.forward_2d(tape, h, train)?;
        let s = flat.shape();
        if s[1] != self.volume_channels * self.depth {
            return Err(Error::Config(format!(
                "cannot factor {} channels into {} x {}",
                s[1], self.volume_channels, self.depth
            )));
        }
        tape.reshape(flat, &[s[0], self.volume_channels, self.depth, s[2], s[3]])
    }

    /// Stops gradient updates to every postprocessor parameter.
    pub fn freeze(&self) {
        self.set_trainable(false);
    }
}

impl<T: Element> Module<T> for Postprocessor<T> {
    fn parameters(&self) -> Vec<ParamRef<T>> {
        self.blocks.iter().flat_map(|b| b.parameters()).collect()
    }

    fn buffers(&self) -> Vec<ParamRef<T>> {
        self.blocks.iter().flat_map(|b| b.buffers()).collect()
    }
}

/// Image -> latent volume: 2D convs, lift, then 3D conv blocks.
pub struct VolumeEncoder<T: Element> {
    pub encoder: Encoder2d<T>,
    pub lift: Postprocessor<T>,
    pub blocks3d: Vec<ConvBlock<T>>,
}

impl<T: Element> VolumeEncoder<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        enc_channels: usize,
        volume_channels: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = Encoder2d::new(&format!("{name}.enc2d"), enc_channels, rng);
        let lift = Postprocessor::new(&format!("{name}.lift"), enc_channels, volume_channels, depth, rng)?;
        let blocks3d = (0..2)
            .map(|i| {
                ConvBlock::new(&format!("{name}.block3d{i}"), 3, volume_channels, volume_channels, 3, 1, 1, rng)
            })
            .collect();
        Ok(VolumeEncoder {
            encoder,
            lift,
            blocks3d,
        })
    }

    pub fn volume_channels(&self) -> usize {
        self.lift.volume_channels
    }

    /// `[N, 3, H, W]` -> `[N, C', D, H/8, W/8]`.
    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, train: bool) -> Result<Var<'t, T>> {
        let h = self.encoder.forward(tape, x, train)?;
        let v = self.lift.forward(tape, h, train)?;
        self.blocks3d.iter().try_fold(v, |v, b| b.forward(tape, v, train))
    }
}

impl<T: Element> Module<T> for VolumeEncoder<T> {
    fn parameters(&self) -> Vec<ParamRef<T>> {
        let mut p = self.encoder.parameters();
        p.extend(self.lift.parameters());
        p.extend(self.blocks3d.iter().flat_map(|b| b.parameters()));
        p
    }

    fn buffers(&self) -> Vec<ParamRef<T>> {
        let mut p = self.encoder.buffers();
        p.extend(self.lift.buffers());
        p.extend(self.blocks3d.iter().flat_map(|b| b.buffers()));
        p
    }
}
