//! Camera conditioning: a FILM-side embedding and a rotation head.

use rand::Rng;

use super::layers::Linear;
use crate::autodiff::{Element, Module, ParamRef, Tape, Var};
use crate::error::Result;

/// Number of raw camera parameters `(θx, θy, θz, tx, ty, tz)`.
pub const CAMERA_DIM: usize = 6;

/// Two affine layers with a ReLU between them, or the raw camera vector
/// when no embedding width is configured.
pub struct CameraFilmEmbed<T: Element> {
    pub mlp: Option<(Linear<T>, Linear<T>)>,
}

impl<T: Element> CameraFilmEmbed<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, ncf: Option<usize>, rng: &mut R) -> Self {
        CameraFilmEmbed {
            mlp: ncf.map(|d| {
                (
                    Linear::new(&format!("{name}.fc0"), CAMERA_DIM, d, rng),
                    Linear::new(&format!("{name}.fc1"), d, d, rng),
                )
            }),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.as_ref().map_or(CAMERA_DIM, |(_, l)| l.out_features())
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, c: Var<'t, T>) -> Result<Var<'t, T>> {
        match &self.mlp {
            None => Ok(c),
            Some((a, b)) => {
                let h = tape.relu(a.forward(tape, c)?)?;
                b.forward(tape, h)
            }
        }
    }
}

impl<T: Element> Module<T> for CameraFilmEmbed<T> {
    fn parameters(&self) -> Vec<ParamRef<T>> {
        match &self.mlp {
            None => Vec::new(),
            Some((a, b)) => [a.parameters(), b.parameters()].concat(),
        }
    }
}

/// Maps the raw camera to rigid-transform parameters. The output layer
/// starts at zero so the initial transform is the identity.
pub struct CameraRotEmbed<T: Element> {
    pub hidden: Linear<T>,
    pub out: Linear<T>,
}

impl<T: Element> CameraRotEmbed<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, width: usize, rng: &mut R) -> Self {
        CameraRotEmbed {
            hidden: Linear::new(&format!("{name}.fc0"), CAMERA_DIM, width, rng),
            out: Linear::zeros(&format!("{name}.fc1"), width, CAMERA_DIM),
        }
    }

    /// `[N, 6]` camera -> `[N, 6]` transform parameters.
    pub fn forward<'t>(&self, tape: &'t Tape<T>, c: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = tape.relu(self.hidden.forward(tape, c)?)?;
        self.out.forward(tape, h)
    }
}

impl<T: Element> Module<T> for CameraRotEmbed<T> {
    fn parameters(&self) -> Vec<ParamRef<T>> {
        [self.hidden.parameters(), self.out.parameters()].concat()
    }
}
