//! The VQA model family and its configuration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::{CameraFilmEmbed, CameraRotEmbed, CAMERA_DIM};
use super::encoders::{Encoder2d, Postprocessor, VolumeEncoder, ENCODER_STRIDE};
use super::film::FilmResBlock;
use super::gru::QuestionEncoder;
use super::layers::{ConvBlock, Linear};
use crate::autodiff::{Element, Module, ParamRef, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::transform_volume;

/// Architecture switches and sizes. Defaults are the desk-scale point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Lift image features to a volume and run 3D FILM blocks.
    pub use_3d: bool,
    /// Concatenate a camera embedding to the FILM conditioning vector.
    pub camera_embed: bool,
    /// Rigidly transform the volume by parameters predicted from the camera.
    pub camera_rotation: bool,
    pub n_resblocks: usize,
    pub nf: usize,
    pub rnn_dim: usize,
    pub rnn_num_layers: usize,
    pub with_coords: bool,
    /// Camera embedding width; `None` feeds the raw six numbers.
    pub ncf: Option<usize>,
    /// Latent volume `(C', D, H, W)`.
    pub volume: [usize; 4],
    pub freeze_postprocessor: bool,
    /// Use a contrastively pretrained, frozen volume encoder.
    pub contrastive_encoder: bool,
    /// Replace the image with zeros (question-only baseline).
    pub gru_only: bool,
    pub image_size: usize,
    pub enc_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            use_3d: false,
            camera_embed: false,
            camera_rotation: false,
            n_resblocks: 4,
            nf: 64,
            rnn_dim: 128,
            rnn_num_layers: 1,
            with_coords: true,
            ncf: Some(32),
            volume: [32, 8, 8, 8],
            freeze_postprocessor: false,
            contrastive_encoder: false,
            gru_only: false,
            image_size: 64,
            enc_channels: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.camera_rotation && !self.use_3d {
            return bad("camera_rotation requires use_3d");
        }
        if self.contrastive_encoder && !self.use_3d {
            return bad("a contrastive volume encoder requires use_3d");
        }
        if self.freeze_postprocessor && (!self.use_3d || self.contrastive_encoder) {
            return bad("freeze_postprocessor needs the trainable 3D projection encoder");
        }
        if self.n_resblocks == 0 || self.nf == 0 || self.rnn_dim == 0 || self.rnn_num_layers == 0 {
            return bad("n_resblocks, nf, rnn_dim and rnn_num_layers must be positive");
        }
        if self.ncf == Some(0) || self.enc_channels == 0 {
            return bad("ncf and enc_channels must be positive");
        }
        if self.image_size == 0 || self.image_size % ENCODER_STRIDE != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be a positive multiple of {ENCODER_STRIDE}",
                self.image_size
            )));
        }
        let feat = self.image_size / ENCODER_STRIDE;
        let [c, d, h, w] = self.volume;
        if self.use_3d && (c == 0 || d == 0 || h != feat || w != feat) {
            return Err(Error::Config(format!(
                "volume {:?} must have positive C', D and H = W = {feat}",
                self.volume
            )));
        }
        Ok(())
    }
}

/// One minibatch of model inputs.
#[derive(Clone, Debug)]
pub struct VqaBatch<T> {
    /// `[N, 3, H, W]`, values in `[0, 1]`.
    pub images: Tensor<T>,
    /// Row-major `N × L` padded question tokens.
    pub tokens: Vec<usize>,
    /// `[N, 6]` raw viewpoint cameras.
    pub cameras: Tensor<T>,
}

impl<T: Element> VqaBatch<T> {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub enum ImagePath<T: Element> {
    Flat(Encoder2d<T>),
    Lifted {
        encoder: Encoder2d<T>,
        post: Postprocessor<T>,
    },
    /// Frozen; always run with running batch-norm statistics.
    Pretrained(VolumeEncoder<T>),
}

/// Parameter-name prefix of the contrastive volume encoder, shared by the
/// pretraining checkpoint and the VQA model.
pub const VOLUME_ENCODER_NAME: &str = "h_encoder";

pub struct VqaModel<T: Element> {
    pub cfg: ModelConfig,
    pub image: ImagePath<T>,
    pub stem: Option<ConvBlock<T>>,
    pub question: QuestionEncoder<T>,
    pub cam_film: Option<CameraFilmEmbed<T>>,
    pub cam_rot: Option<CameraRotEmbed<T>>,
    pub blocks: Vec<FilmResBlock<T>>,
    pub classifier: Linear<T>,
}

impl<T: Element> VqaModel<T> {
    pub fn new<R: Rng + ?Sized>(
        cfg: &ModelConfig,
        question_vocab: usize,
        pad_id: usize,
        answers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let dims = if cfg.use_3d { 3 } else { 2 };
        let image = if cfg.contrastive_encoder {
            let enc = VolumeEncoder::new(VOLUME_ENCODER_NAME, cfg.enc_channels, cfg.volume[0], cfg.volume[1], rng)?;
            enc.set_trainable(false);
            ImagePath::Pretrained(enc)
        } else if cfg.use_3d {
            let encoder = Encoder2d::new("encoder", cfg.enc_channels, rng);
            let post = Postprocessor::new("postproc", cfg.enc_channels, cfg.volume[0], cfg.volume[1], rng)?;
            if cfg.freeze_postprocessor {
                post.freeze();
            }
            ImagePath::Lifted { encoder, post }
        } else {
            ImagePath::Flat(Encoder2d::new("encoder", cfg.enc_channels, rng))
        };
        let feat_channels = if cfg.use_3d { cfg.volume[0] } else { cfg.enc_channels };
        let stem = (feat_channels != cfg.nf)
            .then(|| ConvBlock::new("stem", dims, feat_channels, cfg.nf, 1, 1, 0, rng));
        let question = QuestionEncoder::new("question", question_vocab, pad_id, cfg.rnn_dim, cfg.rnn_num_layers, rng);
        let cam_film = cfg.camera_embed.then(|| CameraFilmEmbed::new("cam_film", cfg.ncf, rng));
        let cam_rot = cfg
            .camera_rotation
            .then(|| CameraRotEmbed::new("cam_rot", cfg.ncf.unwrap_or(32), rng));
        let cond_dim = cfg.rnn_dim + cam_film.as_ref().map_or(0, |c| c.out_dim());
        let blocks = (0..cfg.n_resblocks)
            .map(|i| FilmResBlock::new(&format!("block{i}"), dims, cfg.nf, cond_dim, cfg.with_coords, rng))
            .collect();
        let classifier = Linear::new("classifier", cfg.nf, answers, rng);
        Ok(VqaModel {
            cfg: cfg.clone(),
            image,
            stem,
            question,
            cam_film,
            cam_rot,
            blocks,
            classifier,
        })
    }

    pub fn num_answers(&self) -> usize {
        self.classifier.out_features()
    }

    /// Image features: `[N, C, h, w]` in 2D mode, `[N, C', D, h, w]` in 3D.
    pub fn encode_image<'t>(&self, tape: &'t Tape<T>, images: &Tensor<T>, train: bool) -> Result<Var<'t, T>> {
        let x = if self.cfg.gru_only {
            tape.constant(Tensor::zeros(images.shape().to_vec()))?
        } else {
            tape.constant(images.clone())?
        };
        match &self.image {
            ImagePath::Flat(enc) => enc.forward(tape, x, train),
            ImagePath::Lifted { encoder, post } => {
                let h = encoder.forward(tape, x, train)?;
                post.forward(tape, h, train)
            }
            ImagePath::Pretrained(enc) => enc.forward(tape, x, false),
        }
    }

    /// Conditioning vector `[e_gru, e_cam]`.
    pub fn condition<'t>(&self, tape: &'t Tape<T>, batch: &VqaBatch<T>) -> Result<Var<'t, T>> {
        let e_gru = self.question.forward(tape, &batch.tokens, batch.len())?;
        match &self.cam_film {
            None => Ok(e_gru),
            Some(cf) => {
                let e_cam = cf.forward(tape, tape.constant(batch.cameras.clone())?)?;
                tape.concat(&[e_gru, e_cam], 1)
            }
        }
    }

    /// Answer logits `[N, K]`.
    pub fn forward<'t>(&self, tape: &'t Tape<T>, batch: &VqaBatch<T>, train: bool) -> Result<Var<'t, T>> {
        let n = batch.len();
        if batch.cameras.shape() != [n, CAMERA_DIM] {
            return Err(Error::shape("cameras", batch.cameras.shape(), &[n, CAMERA_DIM]));
        }
        let mut feats = self.encode_image(tape, &batch.images, train)?;
        if let Some(rot) = &self.cam_rot {
            let params = rot.forward(tape, tape.constant(batch.cameras.clone())?)?;
            feats = transform_volume(feats, params)?;
        }
        if let Some(stem) = &self.stem {
            feats = stem.forward(tape, feats, train)?;
        }
        let cond = self.condition(tape, batch)?;
        for b in &self.blocks {
            feats = b.forward(tape, feats, cond, train)?;
        }
        let pooled = tape.global_avg_pool(feats)?;
        self.classifier.forward(tape, pooled)
    }

    pub fn predict(&self, batch: &VqaBatch<T>) -> Result<Vec<usize>> {
        let tape = Tape::new();
        let logits = self.forward(&tape, batch, false)?.value();
        Ok(argmax_rows(&logits))
    }
}

/// Row-wise argmax of a `[N, K]` tensor; ties go to the lowest index.
pub fn argmax_rows<T: Element>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

impl<T: Element> Module<T> for ImagePath<T> {
    fn parameters(&self) -> Vec<ParamRef<T>> {
        match self {
            ImagePath::Flat(e) => e.parameters(),
            ImagePath::Lifted { encoder, post } => [encoder.parameters(), post.parameters()].concat(),
            ImagePath::Pretrained(e) => e.parameters(),
        }
    }

    fn buffers(&self) -> Vec<ParamRef<T>> {
        match self {
            ImagePath::Flat(e) => e.buffers(),
            ImagePath::Lifted { encoder, post } => [encoder.buffers(), post.buffers()].concat(),
            ImagePath::Pretrained(e) => e.buffers(),
        }
    }
}

impl<T: Element> Module<T> for VqaModel<T> {
    fn parameters(&self) -> Vec<ParamRef<T>> {
        let mut p = self.image.parameters();
        p.extend(self.stem.iter().flat_map(|s| s.parameters()));
        p.extend(self.question.parameters());
        p.extend(self.cam_film.iter().flat_map(|c| c.parameters()));
        p.extend(self.cam_rot.iter().flat_map(|c| c.parameters()));
        p.extend(self.blocks.iter().flat_map(|b| b.parameters()));
        p.extend(self.classifier.parameters());
        p
    }

    fn buffers(&self) -> Vec<ParamRef<T>> {
        let mut p = self.image.buffers();
        p.extend(self.stem.iter().flat_map(|s| s.buffers()));
        p.extend(self.blocks.iter().flat_map(|b| b.buffers()));
        p
    }
}
