//! Gradient rules, one arm per op.

use super::conv;
use super::tape::{Node, Op};
use super::tensor::Element;
use crate::error::Result;

fn accum<T: Element>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], id: usize, g: Vec<T>) {
    if !nodes[id].requires_grad {
        return;
    }
    match grads[id].as_mut() {
        Some(buf) => {
            for (a, b) in buf.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => grads[id] = Some(g),
    }
}

fn accum_with<T: Element>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    id: usize,
    f: impl FnOnce() -> Vec<T>,
) {
    if nodes[id].requires_grad {
        let g = f();
        accum(nodes, grads, id, g);
    }
}

pub(crate) fn apply<T: Element>(
    nodes: &[Node<T>],
    i: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) -> Result<()> {
    let out = &nodes[i].value;
    let val = |id: usize| nodes[id].value.data();
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accum(nodes, grads, *a, g.to_vec());
            accum(nodes, grads, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accum(nodes, grads, *a, g.to_vec());
            accum_with(nodes, grads, *b, || g.iter().map(|&v| -v).collect());
        }
        Op::Mul(a, b) => {
            let (a, b) = (*a, *b);
            accum_with(nodes, grads, a, || {
                g.iter().zip(val(b)).map(|(&d, &y)| d * y).collect()
            });
            accum_with(nodes, grads, b, || {
                g.iter().zip(val(a)).map(|(&d, &x)| d * x).collect()
            });
        }
        Op::ScaleShift { x, scale } => {
            accum_with(nodes, grads, *x, || g.iter().map(|&d| d * *scale).collect());
        }
        Op::Relu(x) => {
            accum_with(nodes, grads, *x, || {
                g.iter()
                    .zip(val(*x))
                    .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                    .collect()
            });
        }
        Op::Tanh(x) => {
            accum_with(nodes, grads, *x, || {
                g.iter()
                    .zip(out.data())
                    .map(|(&d, &y)| d * (T::one() - y * y))
                    .collect()
            });
        }
        Op::Sigmoid(x) => {
            accum_with(nodes, grads, *x, || {
                g.iter()
                    .zip(out.data())
                    .map(|(&d, &y)| d * y * (T::one() - y))
                    .collect()
            });
        }
        Op::MatMul(a, b) => {
            let (a, b) = (*a, *b);
            let (sa, sb) = (nodes[a].value.shape(), nodes[b].value.shape());
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            // dA = dC . B^T, dB = A^T . dC
            accum_with(nodes, grads, a, || {
                let mut da = vec![T::zero(); m * k];
                T::gemm(false, true, m, k, n, T::one(), g, val(b), T::zero(), &mut da);
                da
            });
            accum_with(nodes, grads, b, || {
                let mut db = vec![T::zero(); k * n];
                T::gemm(true, false, k, n, m, T::one(), val(a), g, T::zero(), &mut db);
                db
            });
        }
        Op::Transpose(x) => {
            let s = out.shape();
            let (r, c) = (s[0], s[1]);
            accum_with(nodes, grads, *x, || {
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[j * r + i] = g[i * c + j];
                    }
                }
                dx
            });
        }
        Op::AddRowBias { x, bias } => {
            accum(nodes, grads, *x, g.to_vec());
            let k = nodes[*bias].value.numel();
            accum_with(nodes, grads, *bias, || {
                let mut db = vec![T::zero(); k];
                for (j, &d) in g.iter().enumerate() {
                    db[j % k] += d;
                }
                db
            });
        }
        Op::Conv { x, w, b, geom } => {
            let need_dx = nodes[*x].requires_grad;
            let need_w = nodes[*w].requires_grad || b.is_some_and(|b| nodes[b].requires_grad);
            if need_dx || need_w {
                let cg = conv::backward(geom, val(*x), val(*w), g, need_dx);
                if let Some(dx) = cg.dx {
                    accum(nodes, grads, *x, dx);
                }
                accum(nodes, grads, *w, cg.dw);
                if let Some(b) = b {
                    accum(nodes, grads, *b, cg.db);
                }
            }
        }
        Op::BatchNorm {
            x,
            layout,
            xhat,
            invstd,
            train,
        } => {
            accum_with(nodes, grads, *x, || {
                if !*train {
                    return g
                        .iter()
                        .enumerate()
                        .map(|(i, &d)| d * invstd[layout.channel_of(i)])
                        .collect();
                }
                let c = layout.channels;
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (i, &d) in g.iter().enumerate() {
                    let ch = layout.channel_of(i);
                    sum_g[ch] += d;
                    sum_gx[ch] += d * xhat[i];
                }
                let m = T::from_usize(layout.outer * layout.inner).unwrap();
                g.iter()
                    .enumerate()
                    .map(|(i, &d)| {
                        let ch = layout.channel_of(i);
                        invstd[ch] / m * (m * d - sum_g[ch] - xhat[i] * sum_gx[ch])
                    })
                    .collect()
            });
        }
        Op::ChannelAffine {
            x,
            scale,
            shift,
            layout,
        } => {
            let c = layout.channels;
            let sc = val(*scale);
            accum_with(nodes, grads, *x, || {
                g.iter()
                    .enumerate()
                    .map(|(i, &d)| d * sc[layout.channel_of(i)])
                    .collect()
            });
            accum_with(nodes, grads, *scale, || {
                let xv = val(*x);
                let mut ds = vec![T::zero(); c];
                for (i, &d) in g.iter().enumerate() {
                    ds[layout.channel_of(i)] += d * xv[i];
                }
                ds
            });
            accum_with(nodes, grads, *shift, || {
                let mut db = vec![T::zero(); c];
                for (i, &d) in g.iter().enumerate() {
                    db[layout.channel_of(i)] += d;
                }
                db
            });
        }
        Op::Film {
            x,
            gamma,
            beta,
            batch,
            channels,
            inner,
        } => {
            let nc = batch * channels;
            let gam = val(*gamma);
            accum_with(nodes, grads, *x, || {
                let mut dx = g.to_vec();
                for (j, chunk) in dx.chunks_mut(*inner).enumerate() {
                    for v in chunk {
                        *v *= gam[j];
                    }
                }
                dx
            });
            accum_with(nodes, grads, *gamma, || {
                let xv = val(*x);
                (0..nc)
                    .map(|j| {
                        let r = j * inner..(j + 1) * inner;
                        g[r.clone()].iter().zip(&xv[r]).map(|(&d, &v)| d * v).sum()
                    })
                    .collect()
            });
            accum_with(nodes, grads, *beta, || {
                g.chunks(*inner).map(|c| c.iter().copied().sum()).collect()
            });
        }
        Op::GlobalAvgPool { x, inner } => {
            let denom = T::from_usize(*inner).unwrap();
            accum_with(nodes, grads, *x, || {
                g.iter()
                    .flat_map(|&d| std::iter::repeat_n(d / denom, *inner))
                    .collect()
            });
        }
        Op::Sum(x) => {
            let n = nodes[*x].value.numel();
            accum_with(nodes, grads, *x, || vec![g[0]; n]);
        }
        Op::Mean(x) => {
            let n = nodes[*x].value.numel();
            let d = g[0] / T::from_usize(n).unwrap();
            accum_with(nodes, grads, *x, || vec![d; n]);
        }
        Op::Embedding { table, ids, dim } => {
            let n = nodes[*table].value.numel();
            accum_with(nodes, grads, *table, || {
                let mut dt = vec![T::zero(); n];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..*dim {
                        dt[id * dim + j] += g[r * dim + j];
                    }
                }
                dt
            });
        }
        Op::Concat {
            inputs,
            sizes,
            outer,
            inner,
        } => {
            let total: usize = sizes.iter().sum();
            let mut offset = 0;
            for (&id, &sz) in inputs.iter().zip(sizes) {
                accum_with(nodes, grads, id, || {
                    let mut d = Vec::with_capacity(outer * sz * inner);
                    for o in 0..*outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&g[base..base + sz * inner]);
                    }
                    d
                });
                offset += sz;
            }
        }
        Op::Narrow {
            x,
            outer,
            axis_len,
            start,
            len,
            inner,
        } => {
            let n = nodes[*x].value.numel();
            accum_with(nodes, grads, *x, || {
                let mut dx = vec![T::zero(); n];
                for o in 0..*outer {
                    let dst = (o * axis_len + start) * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                dx
            });
        }
        Op::Reshape(x) => accum(nodes, grads, *x, g.to_vec()),
        Op::SoftmaxCrossEntropy {
            logits,
            probs,
            targets,
            classes,
        } => {
            let n = T::from_usize(targets.len()).unwrap();
            accum_with(nodes, grads, *logits, || {
                let scale = g[0] / n;
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * classes + t] -= scale;
                }
                d
            });
        }
        Op::L2NormalizeRows { x, norms, dim } => {
            accum_with(nodes, grads, *x, || {
                let y = out.data();
                let mut dx = vec![T::zero(); y.len()];
                for (r, &norm) in norms.iter().enumerate() {
                    let rows = r * dim..(r + 1) * dim;
                    let dot: T = y[rows.clone()]
                        .iter()
                        .zip(&g[rows.clone()])
                        .map(|(&a, &b)| a * b)
                        .sum();
                    for j in rows {
                        dx[j] = (g[j] - y[j] * dot) / norm;
                    }
                }
                dx
            });
        }
        Op::Custom { inputs, op } => {
            let needs: Vec<bool> = inputs.iter().map(|&id| nodes[id].requires_grad).collect();
            if needs.iter().any(|&b| b) {
                let ins: Vec<_> = inputs.iter().map(|&id| &nodes[id].value).collect();
                let gs = op.backward(&ins, out, g, &needs)?;
                for (&id, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        accum(nodes, grads, id, gi);
                    }
                }
            }
        }
    }
    Ok(())
}
