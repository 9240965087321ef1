//! Forward definitions of the differentiable op set.

use super::conv::{self, ConvGeom};
use super::tape::{ChannelLayout, Op, Tape, Var};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Per-channel batch statistics produced by a train-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as used for running-statistics updates.
    pub var: Vec<T>,
}

fn same_shape<T: Element>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<Vec<usize>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::shape(op, &sa, &sb));
    }
    Ok(sa)
}

impl<T: Element> Tape<T> {
    fn binary(
        &self,
        name: &'static str,
        a: Var<'_, T>,
        b: Var<'_, T>,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let shape = same_shape(name, &a, &b)?;
        let data = {
            let (va, vb) = (self.value_ref(a.id), self.value_ref(b.id));
            va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect()
        };
        let rg = self.any_requires_grad(&[a.id, b.id]);
        self.push(op, Tensor::new(shape, data)?, rg, None)
    }

    fn unary(&self, x: Var<'_, T>, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let value = self.value_ref(x.id).map(f);
        let rg = self.requires_grad(x.id);
        self.push(op, value, rg, None)
    }

    pub fn add(&self, a: Var<'_, T>, b: Var<'_, T>) -> Result<Var<'_, T>> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.id, b.id))
    }

    pub fn sub(&self, a: Var<'_, T>, b: Var<'_, T>) -> Result<Var<'_, T>> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.id, b.id))
    }

    pub fn mul(&self, a: Var<'_, T>, b: Var<'_, T>) -> Result<Var<'_, T>> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.id, b.id))
    }

    /// `scale * x + shift` with constant scalars.
    pub fn scale_shift(&self, x: Var<'_, T>, scale: T, shift: T) -> Result<Var<'_, T>> {
        self.unary(x, |v| scale * v + shift, Op::ScaleShift { x: x.id, scale })
    }

    pub fn relu(&self, x: Var<'_, T>) -> Result<Var<'_, T>> {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x.id))
    }

    pub fn tanh(&self, x: Var<'_, T>) -> Result<Var<'_, T>> {
        self.unary(x, |v| v.tanh(), Op::Tanh(x.id))
    }

    pub fn sigmoid(&self, x: Var<'_, T>) -> Result<Var<'_, T>> {
        self.unary(x, sigmoid, Op::Sigmoid(x.id))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, a: Var<'_, T>, b: Var<'_, T>) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        {
            let (va, vb) = (self.value_ref(a.id), self.value_ref(b.id));
            T::gemm(false, false, m, n, k, T::one(), va.data(), vb.data(), T::zero(), &mut out);
        }
        let rg = self.any_requires_grad(&[a.id, b.id]);
        self.push(Op::MatMul(a.id, b.id), Tensor::new([m, n], out)?, rg, None)
    }

    pub fn transpose(&self, x: Var<'_, T>) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let s = x.shape();
        if s.len() != 2 {
            return Err(Error::Argument(format!("transpose needs a matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let data = {
            let v = self.value_ref(x.id);
            let d = v.data();
            let mut out = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = d[i * c + j];
                }
            }
            out
        };
        let rg = self.requires_grad(x.id);
        self.push(Op::Transpose(x.id), Tensor::new([c, r], data)?, rg, None)
    }

    /// Adds a `[K]` bias to every row of `x[..., K]`.
    pub fn add_row_bias(&self, x: Var<'_, T>, bias: Var<'_, T>) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let (sx, sb) = (x.shape(), bias.shape());
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(Error::shape("add_row_bias", &sx, &sb));
        }
        let k = sb[0];
        let data = {
            let (vx, vb) = (self.value_ref(x.id), self.value_ref(bias.id));
            vx.data()
                .iter()
                .enumerate()
                .map(|(i, &v)| v + vb.data()[i % k])
                .collect()
        };
        let rg = self.any_requires_grad(&[x.id, bias.id]);
        self.push(
            Op::AddRowBias { x: x.id, bias: bias.id },
            Tensor::new(sx, data)?,
            rg,
            None,
        )
    }

    /// Affine layer `x[N, in] . w[in, out] + b[out]`.
    pub fn linear(
        &self,
        x: Var<'_, T>,
        w: Var<'_, T>,
        b: Option<Var<'_, T>>,
    ) -> Result<Var<'_, T>> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row_bias(y, b),
            None => Ok(y),
        }
    }

    fn conv_nd(
        &self,
        x: Var<'_, T>,
        w: Var<'_, T>,
        b: Option<Var<'_, T>>,
        geom: ConvGeom,
        out_shape: Vec<usize>,
    ) -> Result<Var<'_, T>> {
        if let Some(b) = b {
            let sb = b.shape();
            if sb != [geom.out_channels] {
                return Err(Error::shape("conv bias", &sb, &[geom.out_channels]));
            }
        }
        let out = {
            let (vx, vw) = (self.value_ref(x.id), self.value_ref(w.id));
            let vb = b.map(|b| self.value_ref(b.id));
            conv::forward(&geom, vx.data(), vw.data(), vb.as_ref().map(|t| t.data()))
        };
        let mut ids = vec![x.id, w.id];
        ids.extend(b.map(|b| b.id));
        let rg = self.any_requires_grad(&ids);
        self.push(
            Op::Conv {
                x: x.id,
                w: w.id,
                b: b.map(|b| b.id),
                geom,
            },
            Tensor::new(out_shape, out)?,
            rg,
            None,
        )
    }

    /// Zero-padded 2D cross-correlation: `x[N,C,H,W]`, `w[F,C,kh,kw]`.
    pub fn conv2d(
        &self,
        x: Var<'_, T>,
        w: Var<'_, T>,
        b: Option<Var<'_, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let (sx, sw) = (x.shape(), w.shape());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::shape("conv2d", &sx, &sw));
        }
        let geom = ConvGeom::new(
            sx[0],
            sx[1],
            sw[0],
            [1, sx[2], sx[3]],
            [1, sw[2], sw[3]],
            [1, stride, stride],
            [0, pad, pad],
        )?;
        let out_shape = vec![sx[0], sw[0], geom.output[1], geom.output[2]];
        self.conv_nd(x, w, b, geom, out_shape)
    }

    /// Zero-padded 3D cross-correlation: `x[N,C,D,H,W]`, `w[F,C,kd,kh,kw]`.
    pub fn conv3d(
        &self,
        x: Var<'_, T>,
        w: Var<'_, T>,
        b: Option<Var<'_, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let (sx, sw) = (x.shape(), w.shape());
        if sx.len() != 5 || sw.len() != 5 || sx[1] != sw[1] {
            return Err(Error::shape("conv3d", &sx, &sw));
        }
        let geom = ConvGeom::new(
            sx[0],
            sx[1],
            sw[0],
            [sx[2], sx[3], sx[4]],
            [sw[2], sw[3], sw[4]],
            [stride; 3],
            [pad; 3],
        )?;
        let out_shape = vec![sx[0], sw[0], geom.output[0], geom.output[1], geom.output[2]];
        self.conv_nd(x, w, b, geom, out_shape)
    }

    /// Normalizes each channel of `x` (no affine part).
    ///
    /// Train mode uses batch statistics and returns them for the caller's
    /// running averages; eval mode normalizes with the supplied running
    /// mean and variance.
    pub fn batch_norm(
        &self,
        x: Var<'_, T>,
        channel_axis: usize,
        eps: T,
        running: Option<(&[T], &[T])>,
    ) -> Result<(Var<'_, T>, Option<BatchStats<T>>)> {
        self.check_recording()?;
        let shape = x.shape();
        let layout = ChannelLayout::of(&shape, channel_axis)?;
        let train = running.is_none();
        let per_channel = layout.outer * layout.inner;
        if train && (shape[0] < 2 || per_channel < 2) {
            return Err(Error::DegenerateBatch(format!(
                "train-mode batch norm needs a batch of at least 2, got shape {shape:?}"
            )));
        }
        let c = layout.channels;
        let (mean, var) = match running {
            Some((m, v)) => {
                if m.len() != c || v.len() != c {
                    return Err(Error::shape("batch_norm running stats", &[m.len()], &[c]));
                }
                (m.to_vec(), v.to_vec())
            }
            None => {
                let vx = self.value_ref(x.id);
                let mut sum = vec![0.0f64; c];
                let mut sq = vec![0.0f64; c];
                for (i, &v) in vx.data().iter().enumerate() {
                    let ch = layout.channel_of(i);
                    let v = v.to_f64_lossy();
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
                let m = per_channel as f64;
                let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
                let var = sq
                    .iter()
                    .zip(&mean)
                    .map(|(s, mu)| (s / m - mu * mu).max(0.0))
                    .collect::<Vec<f64>>();
                (
                    mean.iter().map(|&v| T::from_f64_lossy(v)).collect(),
                    var.iter().map(|&v| T::from_f64_lossy(v)).collect(),
                )
            }
        };
        let invstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xhat: Vec<T> = {
            let vx = self.value_ref(x.id);
            vx.data()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let ch = layout.channel_of(i);
                    (v - mean[ch]) * invstd[ch]
                })
                .collect()
        };
        let stats = train.then(|| {
            let m = T::from_usize(per_channel).unwrap();
            let unbiased = var
                .iter()
                .map(|&v| v * m / (m - T::one()))
                .collect();
            BatchStats {
                mean: mean.clone(),
                var: unbiased,
            }
        });
        let value = Tensor::new(shape, xhat.clone())?;
        let rg = self.requires_grad(x.id);
        let out = self.push(
            Op::BatchNorm {
                x: x.id,
                layout,
                xhat: if train { xhat } else { Vec::new() },
                invstd,
                train,
            },
            value,
            rg,
            None,
        )?;
        Ok((out, stats))
    }

    /// `out = scale[c] * x + shift[c]` along `channel_axis`.
    pub fn channel_affine(
        &self,
        x: Var<'_, T>,
        scale: Var<'_, T>,
        shift: Var<'_, T>,
        channel_axis: usize,
    ) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let shape = x.shape();
        let layout = ChannelLayout::of(&shape, channel_axis)?;
        for p in [scale, shift] {
            if p.shape() != [layout.channels] {
                return Err(Error::shape("channel_affine", &shape, &p.shape()));
            }
        }
        let data = {
            let (vx, vs, vb) = (
                self.value_ref(x.id),
                self.value_ref(scale.id),
                self.value_ref(shift.id),
            );
            vx.data()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let ch = layout.channel_of(i);
                    vs.data()[ch] * v + vb.data()[ch]
                })
                .collect()
        };
        let rg = self.any_requires_grad(&[x.id, scale.id, shift.id]);
        self.push(
            Op::ChannelAffine {
                x: x.id,
                scale: scale.id,
                shift: shift.id,
                layout,
            },
            Tensor::new(shape, data)?,
            rg,
            None,
        )
    }

    /// Feature-wise linear modulation with per-sample parameters:
    /// `out[n,c,...] = gamma[n,c] * x[n,c,...] + beta[n,c]`.
    pub fn film(
        &self,
        x: Var<'_, T>,
        gamma: Var<'_, T>,
        beta: Var<'_, T>,
    ) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let shape = x.shape();
        if shape.len() < 2 {
            return Err(Error::Argument(format!("film needs [N, C, ...], got {shape:?}")));
        }
        let (n, c) = (shape[0], shape[1]);
        for p in [gamma, beta] {
            if p.shape() != [n, c] {
                return Err(Error::shape("film", &shape, &p.shape()));
            }
        }
        let inner: usize = shape[2..].iter().product();
        let data = {
            let (vx, vg, vb) = (
                self.value_ref(x.id),
                self.value_ref(gamma.id),
                self.value_ref(beta.id),
            );
            let mut out = vx.data().to_vec();
            for (nc, chunk) in out.chunks_mut(inner).enumerate() {
                let (g, b) = (vg.data()[nc], vb.data()[nc]);
                for v in chunk {
                    *v = g * *v + b;
                }
            }
            out
        };
        let rg = self.any_requires_grad(&[x.id, gamma.id, beta.id]);
        self.push(
            Op::Film {
                x: x.id,
                gamma: gamma.id,
                beta: beta.id,
                batch: n,
                channels: c,
                inner,
            },
            Tensor::new(shape, data)?,
            rg,
            None,
        )
    }

    /// Mean over all axes after the channel axis: `[N, C, ...] -> [N, C]`.
    pub fn global_avg_pool(&self, x: Var<'_, T>) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let shape = x.shape();
        if shape.len() < 3 {
            return Err(Error::Argument(format!(
                "global_avg_pool needs [N, C, spatial...], got {shape:?}"
            )));
        }
        let inner: usize = shape[2..].iter().product();
        let denom = T::from_usize(inner).unwrap();
        let data = {
            let vx = self.value_ref(x.id);
            vx.data()
                .chunks(inner)
                .map(|c| c.iter().copied().sum::<T>() / denom)
                .collect()
        };
        let rg = self.requires_grad(x.id);
        self.push(
            Op::GlobalAvgPool { x: x.id, inner },
            Tensor::new([shape[0], shape[1]], data)?,
            rg,
            None,
        )
    }

    pub fn sum(&self, x: Var<'_, T>) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let s = self.value_ref(x.id).data().iter().copied().sum::<T>();
        let rg = self.requires_grad(x.id);
        self.push(Op::Sum(x.id), Tensor::scalar(s), rg, None)
    }

    pub fn mean(&self, x: Var<'_, T>) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let m = {
            let v = self.value_ref(x.id);
            v.data().iter().copied().sum::<T>() / T::from_usize(v.numel()).unwrap()
        };
        let rg = self.requires_grad(x.id);
        self.push(Op::Mean(x.id), Tensor::scalar(m), rg, None)
    }

    /// Row lookup `table[V, D]` at `ids` -> `[ids.len(), D]`.
    pub fn embedding(&self, table: Var<'_, T>, ids: &[usize]) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let st = table.shape();
        if st.len() != 2 {
            return Err(Error::Argument(format!("embedding table must be 2D, got {st:?}")));
        }
        if ids.is_empty() {
            return Err(Error::Argument("embedding lookup with no ids".into()));
        }
        let (v, d) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Index(format!("embedding id {bad} out of range for {v} rows")));
        }
        let data = {
            let vt = self.value_ref(table.id);
            let mut out = Vec::with_capacity(ids.len() * d);
            for &i in ids {
                out.extend_from_slice(&vt.data()[i * d..(i + 1) * d]);
            }
            out
        };
        let rg = self.requires_grad(table.id);
        self.push(
            Op::Embedding {
                table: table.id,
                ids: ids.to_vec(),
                dim: d,
            },
            Tensor::new([ids.len(), d], data)?,
            rg,
            None,
        )
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&self, xs: &[Var<'_, T>], axis: usize) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let first = xs
            .first()
            .ok_or_else(|| Error::Argument("concat of zero tensors".into()))?
            .shape();
        if axis >= first.len() {
            return Err(Error::Argument(format!("concat axis {axis} out of range")));
        }
        let mut sizes = Vec::with_capacity(xs.len());
        for v in xs {
            let s = v.shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(a, (x, y))| a == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &first, &s));
            }
            sizes.push(s[axis]);
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        {
            let vals: Vec<_> = xs.iter().map(|v| self.value_ref(v.id)).collect();
            for o in 0..outer {
                for (val, &sz) in vals.iter().zip(&sizes) {
                    let block = sz * inner;
                    out.extend_from_slice(&val.data()[o * block..(o + 1) * block]);
                }
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let ids: Vec<usize> = xs.iter().map(|v| v.id).collect();
        let rg = self.any_requires_grad(&ids);
        self.push(
            Op::Concat {
                inputs: ids,
                sizes,
                outer,
                inner,
            },
            Tensor::new(shape, out)?,
            rg,
            None,
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, x: Var<'_, T>, axis: usize, start: usize, len: usize) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let shape = x.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::Argument(format!(
                "narrow({axis}, {start}, {len}) out of range for {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let axis_len = shape[axis];
        let data = {
            let v = self.value_ref(x.id);
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * axis_len + start) * inner;
                out.extend_from_slice(&v.data()[base..base + len * inner]);
            }
            out
        };
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let rg = self.requires_grad(x.id);
        self.push(
            Op::Narrow {
                x: x.id,
                outer,
                axis_len,
                start,
                len,
                inner,
            },
            Tensor::new(out_shape, data)?,
            rg,
            None,
        )
    }

    pub fn reshape(&self, x: Var<'_, T>, shape: &[usize]) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let value = self.value_ref(x.id).clone();
        let old = value.shape().to_vec();
        let value = value
            .reshape(shape.to_vec())
            .map_err(|_| Error::shape("reshape", &old, shape))?;
        let rg = self.requires_grad(x.id);
        self.push(Op::Reshape(x.id), value, rg, None)
    }

    /// Mean over rows of `-log softmax(logits)[target]`, max-shifted.
    pub fn softmax_cross_entropy(&self, logits: Var<'_, T>, targets: &[usize]) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let s = logits.shape();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(Error::shape("softmax_cross_entropy", &s, &[targets.len()]));
        }
        let (n, k) = (s[0], s[1]);
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Index(format!("target class {t} out of range for {k} classes")));
        }
        let (probs, loss) = {
            let v = self.value_ref(logits.id);
            let mut probs = vec![T::zero(); n * k];
            let mut loss = T::zero();
            for (r, row) in v.data().chunks(k).enumerate() {
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for (j, &x) in row.iter().enumerate() {
                    let e = (x - mx).exp();
                    probs[r * k + j] = e;
                    z += e;
                }
                for p in &mut probs[r * k..(r + 1) * k] {
                    *p = *p / z;
                }
                loss += z.ln() - (row[targets[r]] - mx);
            }
            (probs, loss / T::from_usize(n).unwrap())
        };
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite cross-entropy".into()));
        }
        let rg = self.requires_grad(logits.id);
        self.push(
            Op::SoftmaxCrossEntropy {
                logits: logits.id,
                probs,
                targets: targets.to_vec(),
                classes: k,
            },
            Tensor::scalar(loss),
            rg,
            None,
        )
    }

    /// Scales every row of `x[n, d]` to unit L2 norm.
    pub fn l2_normalize_rows(&self, x: Var<'_, T>) -> Result<Var<'_, T>> {
        self.check_recording()?;
        let s = x.shape();
        if s.len() != 2 {
            return Err(Error::Argument(format!("l2_normalize_rows needs [n, d], got {s:?}")));
        }
        let d = s[1];
        let (data, norms) = {
            let v = self.value_ref(x.id);
            let mut out = v.data().to_vec();
            let mut norms = Vec::with_capacity(s[0]);
            for (r, row) in out.chunks_mut(d).enumerate() {
                let norm = row.iter().map(|&a| a * a).sum::<T>().sqrt();
                if norm == T::zero() || !norm.is_finite() {
                    return Err(Error::Numeric(format!("row {r} has zero or non-finite norm")));
                }
                for a in row.iter_mut() {
                    *a = *a / norm;
                }
                norms.push(norm);
            }
            (out, norms)
        };
        let rg = self.requires_grad(x.id);
        self.push(
            Op::L2NormalizeRows { x: x.id, norms, dim: d },
            Tensor::new(s, data)?,
            rg,
            None,
        )
    }
}

pub(crate) fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Chaining helpers; each forwards to the corresponding [`Tape`] method.
impl<'t, T: Element> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.add(self, other)
    }
    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.sub(self, other)
    }
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.mul(self, other)
    }
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.matmul(self, other)
    }
    pub fn relu(self) -> Result<Var<'t, T>> {
        self.tape.relu(self)
    }
    pub fn tanh(self) -> Result<Var<'t, T>> {
        self.tape.tanh(self)
    }
    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        self.tape.sigmoid(self)
    }
    pub fn scale_shift(self, scale: T, shift: T) -> Result<Var<'t, T>> {
        self.tape.scale_shift(self, scale, shift)
    }
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        self.tape.reshape(self, shape)
    }
    pub fn sum(self) -> Result<Var<'t, T>> {
        self.tape.sum(self)
    }
    pub fn mean(self) -> Result<Var<'t, T>> {
        self.tape.mean(self)
    }
}
