//! Stacked GRU question encoder with PAD masking.

use rand::Rng;

use super::layers::{he_normal, Embedding};
use crate::autodiff::{Element, Module, Param, ParamRef, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// One GRU layer with gates ordered (reset, update, candidate):
///
/// ```text
/// r = σ(x Wxr + bxr + h Whr + bhr)
/// z = σ(x Wxz + bxz + h Whz + bhz)
/// n = tanh(x Wxn + bxn + r ⊙ (h Whn + bhn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
pub struct GruLayer<T: Element> {
    pub w_x: ParamRef<T>,
    pub b_x: ParamRef<T>,
    pub w_h: ParamRef<T>,
    pub b_h: ParamRef<T>,
}

impl<T: Element> GruLayer<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        GruLayer {
            w_x: Param::new(format!("{name}.w_x"), he_normal(&[input, 3 * hidden], input, rng)),
            b_x: Param::new(format!("{name}.b_x"), Tensor::zeros([3 * hidden])),
            w_h: Param::new(format!("{name}.w_h"), he_normal(&[hidden, 3 * hidden], hidden, rng)),
            b_h: Param::new(format!("{name}.b_h"), Tensor::zeros([3 * hidden])),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.shape()[0]
    }

    /// One recurrence step: `x [N, in]`, `h [N, H]` -> `h' [N, H]`.
    pub fn step<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, h: Var<'t, T>) -> Result<Var<'t, T>> {
        let hd = self.hidden();
        let gx = tape.linear(x, tape.param(&self.w_x)?, Some(tape.param(&self.b_x)?))?;
        let gh = tape.linear(h, tape.param(&self.w_h)?, Some(tape.param(&self.b_h)?))?;
        let part = |g: Var<'t, T>, k: usize| tape.narrow(g, 1, k * hd, hd);
        let r = tape.sigmoid(tape.add(part(gx, 0)?, part(gh, 0)?)?)?;
        let z = tape.sigmoid(tape.add(part(gx, 1)?, part(gh, 1)?)?)?;
        let n = tape.tanh(tape.add(part(gx, 2)?, tape.mul(r, part(gh, 2)?)?)?)?;
        // (1 - z) n + z h = n + z (h - n)
        tape.add(n, tape.mul(z, tape.sub(h, n)?)?)
    }
}

impl<T: Element> Module<T> for GruLayer<T> {
    fn parameters(&self) -> Vec<ParamRef<T>> {
        vec![self.w_x.clone(), self.b_x.clone(), self.w_h.clone(), self.b_h.clone()]
    }
}

/// Word embedding followed by a stack of GRU layers; returns the final
/// hidden state of the top layer.
pub struct QuestionEncoder<T: Element> {
    pub embed: Embedding<T>,
    pub layers: Vec<GruLayer<T>>,
    pub pad_id: usize,
}

impl<T: Element> QuestionEncoder<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        vocab: usize,
        pad_id: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut R,
    ) -> Self {
        let embed = Embedding::new(&format!("{name}.embed"), vocab, hidden, rng);
        let layers = (0..num_layers.max(1))
            .map(|l| GruLayer::new(&format!("{name}.gru{l}"), hidden, hidden, rng))
            .collect();
        QuestionEncoder { embed, layers, pad_id }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden()
    }

    /// Encodes `n` padded sequences stored row-major in `tokens` (`n × len`).
    /// PAD positions leave the hidden state untouched.
    pub fn forward<'t>(&self, tape: &'t Tape<T>, tokens: &[usize], n: usize) -> Result<Var<'t, T>> {
        if n == 0 || tokens.len() % n != 0 {
            return Err(Error::Argument(format!(
                "{} tokens do not split into {n} sequences",
                tokens.len()
            )));
        }
        let len = tokens.len() / n;
        let hd = self.hidden();
        let emb = self.embed.forward(tape, tokens)?;
        let emb = tape.reshape(emb, &[n, len, hd])?;
        let mut inputs: Vec<Option<Var<'t, T>>> = Vec::with_capacity(len);
        let mut masks = Vec::with_capacity(len);
        for t in 0..len {
            let live: Vec<bool> = (0..n).map(|i| tokens[i * len + t] != self.pad_id).collect();
            if !live.iter().any(|&b| b) {
                // all rows padded: the masked update is an exact no-op
                inputs.push(None);
                masks.push(None);
                continue;
            }
            let x = tape.reshape(tape.narrow(emb, 1, t, 1)?, &[n, hd])?;
            inputs.push(Some(x));
            masks.push((!live.iter().all(|&b| b)).then(|| {
                let data = live
                    .iter()
                    .flat_map(|&b| std::iter::repeat_n(if b { T::one() } else { T::zero() }, hd))
                    .collect();
                Tensor::new([n, hd], data).expect("mask shape")
            }));
        }
        let mut h = tape.constant(Tensor::zeros([n, hd]))?;
        for layer in &self.layers {
            let mut h_layer = tape.constant(Tensor::zeros([n, hd]))?;
            let mut outputs = Vec::with_capacity(len);
            for (x, mask) in inputs.iter().zip(&masks) {
                if let Some(x) = x {
                    let cand = layer.step(tape, *x, h_layer)?;
                    h_layer = match mask {
                        None => cand,
                        Some(m) => {
                            let m = tape.constant(m.clone())?;
                            tape.add(h_layer, tape.mul(m, tape.sub(cand, h_layer)?)?)?
                        }
                    };
                }
                outputs.push(x.map(|_| h_layer));
            }
            inputs = outputs;
            h = h_layer;
        }
        Ok(h)
    }
}

impl<T: Element> Module<T> for QuestionEncoder<T> {
    fn parameters(&self) -> Vec<ParamRef<T>> {
        let mut p = self.embed.parameters();
        for l in &self.layers {
            p.extend(l.parameters());
        }
        p
    }
}
