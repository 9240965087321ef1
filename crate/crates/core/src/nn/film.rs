//! Feature-wise linear modulation and the FILM residual block.

use rand::Rng;

use super::layers::{BatchNorm, Conv, Linear};
use crate::autodiff::{Element, Module, ParamRef, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `out[n, c, ...] = gamma[n, c] * f[n, c, ...] + beta[n, c]`.
pub fn film_modulate<'t, T: Element>(
    f: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let (sf, sg) = (f.shape(), gamma.shape());
    if sf.len() < 2 || sg.len() != 2 || sg[1] != sf[1] {
        return Err(Error::shape("film_modulate", &sf, &sg));
    }
    f.tape().film(f, gamma, beta)
}

/// Normalized coordinate channels `[n, dims, spatial...]` with aligned corners:
/// channel 0 runs along the last axis (x), 1 along the one before (y), and
/// for volumes 2 along depth (z).
pub fn coord_channels<T: Element>(n: usize, spatial: &[usize]) -> Tensor<T> {
    let dims = spatial.len();
    let inner: usize = spatial.iter().product();
    let coord = |i: usize, len: usize| {
        if len == 1 {
            T::zero()
        } else {
            T::from_f64_lossy(2.0 * i as f64 / (len - 1) as f64 - 1.0)
        }
    };
    let mut one = Vec::with_capacity(dims * inner);
    for axis in 0..dims {
        // axis 0 = x = last spatial axis
        let k = dims - 1 - axis;
        let stride: usize = spatial[k + 1..].iter().product();
        for flat in 0..inner {
            one.push(coord((flat / stride) % spatial[k], spatial[k]));
        }
    }
    let mut shape = vec![n, dims];
    shape.extend_from_slice(spatial);
    Tensor::new(shape, one.repeat(n)).expect("coordinate shape")
}

/// Residual block: `x + relu(FILM(bn(conv([x, coords]))))` where FILM's
/// `gamma = 1 + Δγ` and `beta` are a linear map of the conditioning vector.
/// Batch norm has no affine part; FILM provides it.
pub struct FilmResBlock<T: Element> {
    pub conv: Conv<T>,
    pub bn: BatchNorm<T>,
    pub film: Linear<T>,
    pub with_coords: bool,
}

impl<T: Element> FilmResBlock<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        dims: usize,
        channels: usize,
        cond_dim: usize,
        with_coords: bool,
        rng: &mut R,
    ) -> Self {
        let extra = if with_coords { dims } else { 0 };
        FilmResBlock {
            conv: Conv::new(&format!("{name}.conv"), dims, channels + extra, channels, 3, 1, 1, false, rng),
            bn: BatchNorm::new(&format!("{name}.bn"), channels, false),
            film: Linear::new(&format!("{name}.film"), cond_dim, 2 * channels, rng),
            with_coords,
        }
    }

    pub fn channels(&self) -> usize {
        self.conv.out_channels()
    }

    /// Per-sample `(gamma, beta)`, each `[N, C]`.
    pub fn film_params<'t>(&self, tape: &'t Tape<T>, cond: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let c = self.channels();
        let p = self.film.forward(tape, cond)?;
        let gamma = tape.scale_shift(tape.narrow(p, 1, 0, c)?, T::one(), T::one())?;
        let beta = tape.narrow(p, 1, c, c)?;
        Ok((gamma, beta))
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        cond: Var<'t, T>,
        train: bool,
    ) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let input = if self.with_coords {
            let coords = tape.constant(coord_channels(shape[0], &shape[2..]))?;
            tape.concat(&[x, coords], 1)?
        } else {
            x
        };
        let y = self.conv.forward(tape, input)?;
        let y = self.bn.forward(tape, y, train)?;
        let (gamma, beta) = self.film_params(tape, cond)?;
        let y = tape.relu(film_modulate(y, gamma, beta)?)?;
        tape.add(x, y)
    }
}

impl<T: Element> Module<T> for FilmResBlock<T> {
    fn parameters(&self) -> Vec<ParamRef<T>> {
        let mut p = self.conv.parameters();
        p.extend(self.bn.parameters());
        p.extend(self.film.parameters());
        p
    }

    fn buffers(&self) -> Vec<ParamRef<T>> {
        self.bn.buffers()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coords_2d_layout() {
        let c = coord_channels::<f64>(1, &[2, 3]);
        assert_eq!(c.shape(), &[1, 2, 2, 3]);
        // x channel varies along width
        assert_eq!(&c.data()[..6], &[-1.0, 0.0, 1.0, -1.0, 0.0, 1.0]);
        // y channel varies along height
        assert_eq!(&c.data()[6..], &[-1.0, -1.0, -1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn coords_3d_z_runs_along_depth() {
        let c = coord_channels::<f64>(2, &[3, 1, 2]);
        assert_eq!(c.shape(), &[2, 3, 3, 1, 2]);
        assert_eq!(&c.data()[12..18], &[-1.0, -1.0, 0.0, 0.0, 1.0, 1.0]);
    }
}
