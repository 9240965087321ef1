//! Cross-correlation kernels shared by 2D and 3D convolutions.
//!
//! A 2D convolution is a 3D one with a unit depth axis, so both go through
//! the same im2col + GEMM path. Columns are recomputed in the backward pass
//! instead of being stored on the tape.

use super::tensor::Element;
use crate::error::{Error, Result};

/// Static description of one convolution call. Spatial arrays are `[d, h, w]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    pub fn new(
        batch: usize,
        in_channels: usize,
        out_channels: usize,
        input: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Self> {
        let mut output = [0; 3];
        for a in 0..3 {
            if stride[a] == 0 {
                return Err(Error::Config("convolution stride must be positive".into()));
            }
            let padded = input[a] + 2 * pad[a];
            if kernel[a] == 0 || kernel[a] > padded {
                return Err(Error::Config(format!(
                    "kernel {:?} larger than padded input {:?}",
                    kernel, input
                )));
            }
            let span = padded - kernel[a];
            if span % stride[a] != 0 {
                return Err(Error::Config(format!(
                    "non-integral convolution output: input {} pad {} kernel {} stride {}",
                    input[a], pad[a], kernel[a], stride[a]
                )));
            }
            output[a] = span / stride[a] + 1;
        }
        Ok(ConvGeom {
            batch,
            in_channels,
            out_channels,
            input,
            kernel,
            stride,
            pad,
            output,
        })
    }

    pub fn in_spatial(&self) -> usize {
        self.input.iter().product()
    }

    pub fn out_spatial(&self) -> usize {
        self.output.iter().product()
    }

    pub fn patch(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }
}

fn im2col<T: Element>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = g.output;
    let p = g.out_spatial();
    let mut row = 0;
    for c in 0..g.in_channels {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let mut o = 0;
                    for z in 0..od {
                        let sz = (z * g.stride[0] + kz) as isize - g.pad[0] as isize;
                        for y in 0..oh {
                            let sy = (y * g.stride[1] + ky) as isize - g.pad[1] as isize;
                            let plane_ok =
                                sz >= 0 && sz < id as isize && sy >= 0 && sy < ih as isize;
                            for xo in 0..ow {
                                let sx = (xo * g.stride[2] + kx) as isize - g.pad[2] as isize;
                                dst[o] = if plane_ok && sx >= 0 && sx < iw as isize {
                                    xc[(sz as usize * ih + sy as usize) * iw + sx as usize]
                                } else {
                                    T::zero()
                                };
                                o += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im_add<T: Element>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = g.output;
    let p = g.out_spatial();
    let mut row = 0;
    for c in 0..g.in_channels {
        let xc = &mut dx[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let src = &cols[row * p..(row + 1) * p];
                    let mut o = 0;
                    for z in 0..od {
                        let sz = (z * g.stride[0] + kz) as isize - g.pad[0] as isize;
                        for y in 0..oh {
                            let sy = (y * g.stride[1] + ky) as isize - g.pad[1] as isize;
                            let plane_ok =
                                sz >= 0 && sz < id as isize && sy >= 0 && sy < ih as isize;
                            for xo in 0..ow {
                                let sx = (xo * g.stride[2] + kx) as isize - g.pad[2] as isize;
                                if plane_ok && sx >= 0 && sx < iw as isize {
                                    xc[(sz as usize * ih + sy as usize) * iw + sx as usize] +=
                                        src[o];
                                }
                                o += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `out[n] = w * im2col(x[n]) + b`.
pub fn forward<T: Element>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let (ck, p, f) = (g.patch(), g.out_spatial(), g.out_channels);
    let in_stride = g.in_channels * g.in_spatial();
    let mut out = vec![T::zero(); g.batch * f * p];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); ck * p]
    };
    for n in 0..g.batch {
        let xn = &x[n * in_stride..(n + 1) * in_stride];
        let on = &mut out[n * f * p..(n + 1) * f * p];
        if let Some(b) = b {
            for (fi, row) in on.chunks_mut(p).enumerate() {
                row.fill(b[fi]);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        let src: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut cols);
            &cols
        };
        T::gemm(false, false, f, p, ck, T::one(), w, src, beta, on);
    }
    out
}

/// Gradients of a convolution. `dx` is only computed when requested.
pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub fn backward<T: Element>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dout: &[T],
    need_dx: bool,
) -> ConvGrads<T> {
    let (ck, p, f) = (g.patch(), g.out_spatial(), g.out_channels);
    let in_stride = g.in_channels * g.in_spatial();
    let mut dw = vec![T::zero(); f * ck];
    let mut db = vec![T::zero(); f];
    let mut dx = need_dx.then(|| vec![T::zero(); g.batch * in_stride]);
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); ck * p]
    };
    let mut dcols = if need_dx && !pointwise {
        vec![T::zero(); ck * p]
    } else {
        Vec::new()
    };
    for n in 0..g.batch {
        let xn = &x[n * in_stride..(n + 1) * in_stride];
        let dn = &dout[n * f * p..(n + 1) * f * p];
        for (fi, row) in dn.chunks(p).enumerate() {
            db[fi] += row.iter().copied().sum::<T>();
        }
        let src: &[T] = if pointwise {
            xn
        } else {
            im2col(g, xn, &mut cols);
            &cols
        };
        // dw += dout_n . cols^T
        T::gemm(false, true, f, ck, p, T::one(), dn, src, T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_stride..(n + 1) * in_stride];
            if pointwise {
                T::gemm(true, false, ck, p, f, T::one(), w, dn, T::one(), dxn);
            } else {
                T::gemm(true, false, ck, p, f, T::one(), w, dn, T::zero(), &mut dcols);
                col2im_add(g, &dcols, dxn);
            }
        }
    }
    ConvGrads { dx, dw, db }
}
