//! Run configuration: an INI-style file with `[model]`, `[train]` and
//! `[data]` sections of `key = value` lines.
//!
//! ```text
//! [model]
//! use_3d = true
//! camera_rotation = true
//! ncf = 32            # or "none" for the raw six camera numbers
//! volume = 32,8,8,8
//!
//! [train]
//! encoder = projection-3d   # trainable-2d | projection-3d | contrastive-frozen
//! epochs = 60
//! lr = 3e-4
//!
//! [data]
//! dir = data
//! ```
//!
//! Unknown sections or keys are configuration errors. [`RunConfig::to_text`]
//! writes every key, and parsing it back gives an equal config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use crate::contrastive::{PairVariant, PretrainConfig};
use crate::error::{Error, Result};
use crate::nn::ModelConfig;
use crate::scene::ViewMode;
use crate::seeds;

/// Where image features come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderSource {
    /// Strided 2D CNN trained with the VQA loss; FILM runs in 2D.
    Trainable2d,
    /// The same CNN plus a learned 2D-to-3D lift; FILM runs in 3D.
    Projection3d,
    /// Contrastively pretrained volume encoder, frozen during VQA training.
    ContrastiveFrozen,
}

impl EncoderSource {
    pub fn name(self) -> &'static str {
        match self {
            EncoderSource::Trainable2d => "trainable-2d",
            EncoderSource::Projection3d => "projection-3d",
            EncoderSource::ContrastiveFrozen => "contrastive-frozen",
        }
    }

    pub fn of_model(m: &ModelConfig) -> Self {
        match (m.use_3d, m.contrastive_encoder) {
            (false, _) => EncoderSource::Trainable2d,
            (true, false) => EncoderSource::Projection3d,
            (true, true) => EncoderSource::ContrastiveFrozen,
        }
    }

    /// Sets the model flags this source implies.
    pub fn apply(self, m: &mut ModelConfig) {
        m.use_3d = self != EncoderSource::Trainable2d;
        m.contrastive_encoder = self == EncoderSource::ContrastiveFrozen;
    }
}

impl std::str::FromStr for EncoderSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trainable-2d" => Ok(EncoderSource::Trainable2d),
            "projection-3d" => Ok(EncoderSource::Projection3d),
            "contrastive-frozen" => Ok(EncoderSource::ContrastiveFrozen),
            other => Err(Error::Config(format!("unknown encoder source {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Pretrained volume-encoder checkpoint for `contrastive-frozen`.
    pub pretrained: Option<PathBuf>,
    /// Train and evaluate on canonical-view renders only.
    pub canonical_only: bool,
    /// Batch-preparation threads feeding the trainer.
    pub workers: usize,
    pub pretrain: PretrainConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 64,
            epochs: 60,
            seed: 0,
            pretrained: None,
            canonical_only: false,
            workers: 1,
            pretrain: PretrainConfig::new(PairVariant::TwoPlusThreeD),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub dir: PathBuf,
    /// Expected elevation regime of the dataset, checked against its genconfig.
    pub mode: Option<ViewMode>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: PathBuf::from("data"),
            mode: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

fn bool_of(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn num_of<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn opt_of<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "none" {
        Ok(None)
    } else {
        num_of(key, v).map(Some)
    }
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or("none".to_string(), |x| x.to_string())
}

impl RunConfig {
    /// Parses a config file body; see the module docs.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut encoder: Option<EncoderSource> = None;
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !["model", "train", "data"].contains(&section.as_str()) {
                    return Err(Error::Config(format!("line {}: unknown section [{section}]", lineno + 1)));
                }
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if section == "train" && k == "encoder" {
                encoder = Some(v.parse()?);
                continue;
            }
            cfg.set(&section, k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, e.to_string())))?;
        }
        if let Some(src) = encoder {
            let implied = EncoderSource::of_model(&cfg.model);
            let explicit_3d = text.contains("use_3d") || text.contains("contrastive_encoder");
            if explicit_3d && implied != src {
                return Err(Error::Config(format!(
                    "encoder = {} conflicts with [model] flags implying {}",
                    src.name(),
                    implied.name()
                )));
            }
            src.apply(&mut cfg.model);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn encoder(&self) -> EncoderSource {
        EncoderSource::of_model(&self.model)
    }

    /// Sets one key; `section` is `model`, `train` or `data`.
    pub fn set(&mut self, section: &str, k: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match (section, k) {
            ("model", "use_3d") => m.use_3d = bool_of(k, v)?,
            ("model", "camera_embed") => m.camera_embed = bool_of(k, v)?,
            ("model", "camera_rotation") => m.camera_rotation = bool_of(k, v)?,
            ("model", "n_resblocks") => m.n_resblocks = num_of(k, v)?,
            ("model", "nf") => m.nf = num_of(k, v)?,
            ("model", "rnn_dim") => m.rnn_dim = num_of(k, v)?,
            ("model", "rnn_num_layers") => m.rnn_num_layers = num_of(k, v)?,
            ("model", "with_coords") => m.with_coords = bool_of(k, v)?,
            ("model", "ncf") => m.ncf = opt_of(k, v)?,
            ("model", "volume") => {
                let parts: Vec<usize> = v.split(',').map(|p| num_of(k, p.trim())).collect::<Result<_>>()?;
                m.volume = parts
                    .try_into()
                    .map_err(|_| Error::Config("volume needs four comma-separated sizes".into()))?;
            }
            ("model", "freeze_postprocessor") => m.freeze_postprocessor = bool_of(k, v)?,
            ("model", "contrastive_encoder") => m.contrastive_encoder = bool_of(k, v)?,
            ("model", "gru_only") => m.gru_only = bool_of(k, v)?,
            ("model", "image_size") => m.image_size = num_of(k, v)?,
            ("model", "enc_channels") => m.enc_channels = num_of(k, v)?,
            ("train", "encoder") => v.parse::<EncoderSource>()?.apply(m),
            ("train", "lr") => t.adam.lr = num_of(k, v)?,
            ("train", "beta1") => t.adam.beta1 = num_of(k, v)?,
            ("train", "beta2") => t.adam.beta2 = num_of(k, v)?,
            ("train", "eps") => t.adam.eps = num_of(k, v)?,
            ("train", "weight_decay") => t.adam.weight_decay = num_of(k, v)?,
            ("train", "batch_size") => t.batch_size = num_of(k, v)?,
            ("train", "epochs") => t.epochs = num_of(k, v)?,
            ("train", "seed") => t.seed = num_of(k, v)?,
            ("train", "pretrained") => t.pretrained = (v != "none").then(|| PathBuf::from(v)),
            ("train", "canonical_only") => t.canonical_only = bool_of(k, v)?,
            ("train", "workers") => t.workers = num_of(k, v)?,
            ("train", "pretrain_augment") => t.pretrain.policy.variant = v.parse()?,
            ("train", "pretrain_tau") => t.pretrain.tau = num_of(k, v)?,
            ("train", "pretrain_batch_size") => t.pretrain.batch_size = num_of(k, v)?,
            ("train", "pretrain_epochs") => t.pretrain.epochs = num_of(k, v)?,
            ("train", "pretrain_lr") => t.pretrain.adam.lr = num_of(k, v)?,
            ("train", "pretrain_projection") => t.pretrain.projection_dim = opt_of(k, v)?,
            ("train", "crop_scale") => {
                t.pretrain.policy.crop_scale = if v == "none" {
                    None
                } else {
                    let (a, b) = v
                        .split_once(',')
                        .ok_or_else(|| Error::Config("crop_scale needs lo,hi or none".into()))?;
                    Some((num_of(k, a.trim())?, num_of(k, b.trim())?))
                }
            }
            ("train", "flip_prob") => t.pretrain.policy.flip_prob = num_of(k, v)?,
            ("train", "jitter") => t.pretrain.policy.jitter = num_of(k, v)?,
            ("data", "dir") => self.data.dir = PathBuf::from(v),
            ("data", "mode") => self.data.mode = opt_of(k, v)?,
            ("", _) => return Err(Error::Config(format!("key {k:?} appears before any section"))),
            _ => return Err(Error::Config(format!("unknown key {k:?} in [{section}]"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.adam.validate()?;
        if self.train.batch_size < 2 || self.train.epochs == 0 || self.train.workers == 0 {
            return Err(Error::Config("need batch_size >= 2, epochs >= 1 and workers >= 1".into()));
        }
        if self.model.gru_only && (self.model.camera_embed || self.model.camera_rotation) {
            return Err(Error::Config("gru_only excludes camera conditioning".into()));
        }
        Ok(())
    }

    /// Checks that everything `train` needs is present.
    pub fn validate_for_training(&self) -> Result<()> {
        self.validate()?;
        if self.model.contrastive_encoder && self.train.pretrained.is_none() {
            return Err(Error::Config("contrastive-frozen encoder needs train.pretrained".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let mut s = String::new();
        let v = m.volume;
        let _ = write!(
            s,
            "[model]\nuse_3d = {}\ncamera_embed = {}\ncamera_rotation = {}\nn_resblocks = {}\nnf = {}\n\
             rnn_dim = {}\nrnn_num_layers = {}\nwith_coords = {}\nncf = {}\nvolume = {},{},{},{}\n\
             freeze_postprocessor = {}\ncontrastive_encoder = {}\ngru_only = {}\nimage_size = {}\nenc_channels = {}\n\n",
            m.use_3d,
            m.camera_embed,
            m.camera_rotation,
            m.n_resblocks,
            m.nf,
            m.rnn_dim,
            m.rnn_num_layers,
            m.with_coords,
            fmt_opt(&m.ncf),
            v[0],
            v[1],
            v[2],
            v[3],
            m.freeze_postprocessor,
            m.contrastive_encoder,
            m.gru_only,
            m.image_size,
            m.enc_channels
        );
        let p = &t.pretrain;
        let crop = p.policy.crop_scale.map_or("none".to_string(), |(a, b)| format!("{a},{b}"));
        let _ = write!(
            s,
            "[train]\nlr = {:e}\nbeta1 = {}\nbeta2 = {}\neps = {:e}\nweight_decay = {}\nbatch_size = {}\n\
             epochs = {}\nseed = {}\npretrained = {}\ncanonical_only = {}\nworkers = {}\npretrain_augment = {}\n\
             pretrain_tau = {}\npretrain_batch_size = {}\npretrain_epochs = {}\npretrain_lr = {:e}\n\
             pretrain_projection = {}\ncrop_scale = {}\nflip_prob = {}\njitter = {}\n\n",
            t.adam.lr,
            t.adam.beta1,
            t.adam.beta2,
            t.adam.eps,
            t.adam.weight_decay,
            t.batch_size,
            t.epochs,
            t.seed,
            t.pretrained.as_ref().map_or("none".to_string(), |p| p.display().to_string()),
            t.canonical_only,
            t.workers,
            p.policy.variant.label(),
            p.tau,
            p.batch_size,
            p.epochs,
            p.adam.lr,
            fmt_opt(&p.projection_dim),
            crop,
            p.policy.flip_prob,
            p.policy.jitter
        );
        let _ = write!(
            s,
            "[data]\ndir = {}\nmode = {}\n",
            self.data.dir.display(),
            fmt_opt(&self.data.mode)
        );
        s
    }

    /// Stable 16-hex-digit hash of everything except the seed, data location
    /// and worker count, so repeats of one configuration share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.train.seed = 0;
        c.train.workers = 1;
        c.data.dir = PathBuf::new();
        c.train.pretrained = None;
        format!("{:016x}", seeds::fnv1a(c.to_text().as_bytes()))
    }
}
