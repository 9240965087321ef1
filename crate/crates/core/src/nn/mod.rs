//! The VQA model family: image encoders, the GRU question encoder, camera
//! embedders, FILM residual blocks and the answer classifier.

pub mod camera;
pub mod encoders;
pub mod film;
pub mod gru;
pub mod layers;
pub mod model;
pub mod vocab;

pub use camera::{CameraFilmEmbed, CameraRotEmbed, CAMERA_DIM};
pub use encoders::{Encoder2d, Postprocessor, VolumeEncoder, ENCODER_STRIDE};
pub use film::{coord_channels, film_modulate, FilmResBlock};
pub use gru::{GruLayer, QuestionEncoder};
pub use layers::{BatchNorm, Conv, ConvBlock, Embedding, Linear};
pub use model::{argmax_rows, ImagePath, ModelConfig, VqaBatch, VqaModel, VOLUME_ENCODER_NAME};
pub use vocab::AnswerVocab;
