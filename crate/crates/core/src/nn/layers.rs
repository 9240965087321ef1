//! Parameterized building blocks over the autodiff tape.

use rand::Rng;

use crate::autodiff::{Element, Module, Param, ParamRef, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `Normal(0, sqrt(2 / fan_in))`.
pub fn he_normal<T: Element, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    Tensor::randn(shape.to_vec(), (2.0 / fan_in as f64).sqrt(), rng)
}

/// `x . W + b` with `W: [in, out]`.
pub struct Linear<T: Element> {
    pub weight: ParamRef<T>,
    pub bias: Option<ParamRef<T>>,
}

impl<T: Element> Linear<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Linear {
            weight: Param::new(format!("{name}.weight"), he_normal(&[input, output], input, rng)),
            bias: Some(Param::new(format!("{name}.bias"), Tensor::zeros([output]))),
        }
    }

    /// All-zero weights and bias.
    pub fn zeros(name: &str, input: usize, output: usize) -> Self {
        Linear {
            weight: Param::new(format!("{name}.weight"), Tensor::zeros([input, output])),
            bias: Some(Param::new(format!("{name}.bias"), Tensor::zeros([output]))),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let b = self.bias.as_ref().map(|b| tape.param(b)).transpose()?;
        tape.linear(x, tape.param(&self.weight)?, b)
    }
}

impl<T: Element> Module<T> for Linear<T> {
    fn parameters(&self) -> Vec<ParamRef<T>> {
        let mut p = vec![self.weight.clone()];
        p.extend(self.bias.clone());
        p
    }
}

/// 2D or 3D convolution with a cubic kernel.
pub struct Conv<T: Element> {
    pub weight: ParamRef<T>,
    pub bias: Option<ParamRef<T>>,
    pub dims: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Element> Conv<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        dims: usize,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(dims == 2 || dims == 3, "conv dims must be 2 or 3");
        let mut shape = vec![output, input];
        shape.extend(std::iter::repeat_n(kernel, dims));
        let fan_in = input * kernel.pow(dims as u32);
        Conv {
            weight: Param::new(format!("{name}.weight"), he_normal(&shape, fan_in, rng)),
            bias: bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros([output]))),
            dims,
            stride,
            pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let w = tape.param(&self.weight)?;
        let b = self.bias.as_ref().map(|b| tape.param(b)).transpose()?;
        if self.dims == 2 {
            tape.conv2d(x, w, b, self.stride, self.pad)
        } else {
            tape.conv3d(x, w, b, self.stride, self.pad)
        }
    }
}

impl<T: Element> Module<T> for Conv<T> {
    fn parameters(&self) -> Vec<ParamRef<T>> {
        let mut p = vec![self.weight.clone()];
        p.extend(self.bias.clone());
        p
    }
}

/// Batch normalization over axis 1 with running statistics.
///
/// Train mode normalizes with batch statistics and updates the running
/// averages; eval mode uses the running averages.
pub struct BatchNorm<T: Element> {
    pub running_mean: ParamRef<T>,
    pub running_var: ParamRef<T>,
    pub affine: Option<(ParamRef<T>, ParamRef<T>)>,
}

impl<T: Element> BatchNorm<T> {
    pub fn new(name: &str, channels: usize, affine: bool) -> Self {
        BatchNorm {
            running_mean: Param::constant(format!("{name}.running_mean"), Tensor::zeros([channels])),
            running_var: Param::constant(format!("{name}.running_var"), Tensor::ones([channels])),
            affine: affine.then(|| {
                (
                    Param::new(format!("{name}.weight"), Tensor::ones([channels])),
                    Param::new(format!("{name}.bias"), Tensor::zeros([channels])),
                )
            }),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, train: bool) -> Result<Var<'t, T>> {
        let eps = T::from_f64_lossy(BN_EPS);
        let y = if train {
            let (y, stats) = tape.batch_norm(x, 1, eps, None)?;
            let stats = stats.expect("train mode returns statistics");
            let m = T::from_f64_lossy(BN_MOMENTUM);
            let keep = T::one() - m;
            for (buf, batch) in [(&self.running_mean, &stats.mean), (&self.running_var, &stats.var)] {
                let mut v = buf.value_mut();
                for (r, &b) in v.data_mut().iter_mut().zip(batch) {
                    *r = keep * *r + m * b;
                }
            }
            y
        } else {
            let (rm, rv) = (self.running_mean.value(), self.running_var.value());
            tape.batch_norm(x, 1, eps, Some((rm.data(), rv.data())))?.0
        };
        match &self.affine {
            Some((scale, shift)) => tape.channel_affine(y, tape.param(scale)?, tape.param(shift)?, 1),
            None => Ok(y),
        }
    }
}

impl<T: Element> Module<T> for BatchNorm<T> {
    fn parameters(&self) -> Vec<ParamRef<T>> {
        match &self.affine {
            Some((a, b)) => vec![a.clone(), b.clone()],
            None => Vec::new(),
        }
    }

    fn buffers(&self) -> Vec<ParamRef<T>> {
        vec![self.running_mean.clone(), self.running_var.clone()]
    }
}

/// Token-id lookup table.
pub struct Embedding<T: Element> {
    pub table: ParamRef<T>,
}

impl<T: Element> Embedding<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, vocab: usize, dim: usize, rng: &mut R) -> Self {
        Embedding {
            table: Param::new(format!("{name}.weight"), Tensor::randn([vocab, dim], 1.0, rng)),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, ids: &[usize]) -> Result<Var<'t, T>> {
        let n = self.vocab_size();
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::Vocab(format!("token id {bad} outside vocabulary of {n}")));
        }
        tape.embedding(tape.param(&self.table)?, ids)
    }
}

impl<T: Element> Module<T> for Embedding<T> {
    fn parameters(&self) -> Vec<ParamRef<T>> {
        vec![self.table.clone()]
    }
}

/// Convolution, batch norm (affine), ReLU.
pub struct ConvBlock<T: Element> {
    pub conv: Conv<T>,
    pub bn: BatchNorm<T>,
}

impl<T: Element> ConvBlock<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        dims: usize,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        ConvBlock {
            conv: Conv::new(&format!("{name}.conv"), dims, input, output, kernel, stride, pad, false, rng),
            bn: BatchNorm::new(&format!("{name}.bn"), output, true),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, train: bool) -> Result<Var<'t, T>> {
        let y = self.conv.forward(tape, x)?;
        let y = self.bn.forward(tape, y, train)?;
        tape.relu(y)
    }
}

impl<T: Element> Module<T> for ConvBlock<T> {
    fn parameters(&self) -> Vec<ParamRef<T>> {
        let mut p = self.conv.parameters();
        p.extend(self.bn.parameters());
        p
    }

    fn buffers(&self) -> Vec<ParamRef<T>> {
        self.bn.buffers()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn running_stats_follow_momentum() {
        let bn = BatchNorm::<f64>::new("bn", 1, false);
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_f64([4, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        bn.forward(&tape, x, true).unwrap();
        let m = bn.running_mean.value().data()[0];
        let v = bn.running_var.value().data()[0];
        assert!((m - 0.25).abs() < 1e-12);
        // unbiased variance 5/3
        assert!((v - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn embedding_rejects_unknown_token() {
        let e = Embedding::<f32>::new("e", 4, 3, &mut ChaCha8Rng::seed_from_u64(0));
        let tape = Tape::new();
        assert!(matches!(e.forward(&tape, &[1, 4]), Err(Error::Vocab(_))));
    }

    #[test]
    fn he_init_scale() {
        let w: Tensor<f64> = he_normal(&[200, 200], 50, &mut ChaCha8Rng::seed_from_u64(1));
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / w.numel() as f64;
        assert!((var - 2.0 / 50.0).abs() < 0.004);
    }
}
