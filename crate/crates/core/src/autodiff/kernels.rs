//! Raw forward/backward kernels for the convolution and pooling primitives.

use crate::error::{dim_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Geometry of a 2-D convolution over a single `C×H×W` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        x_shape: &[usize],
        w_shape: &[usize],
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Self> {
        let (c_in, h, w) = match x_shape {
            [c, h, w] => (*c, *h, *w),
            _ => return dim_err(format!("conv2d input must be C×H×W, got {:?}", x_shape)),
        };
        let (c_out, wc, kh, kw) = match w_shape {
            [o, c, kh, kw] => (*o, *c, *kh, *kw),
            _ => return dim_err(format!("conv2d weight must be O×C×kh×kw, got {:?}", w_shape)),
        };
        if wc != c_in {
            return dim_err(format!(
                "conv2d channel mismatch: input has {} channels, weight expects {}",
                c_in, wc
            ));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return dim_err("conv2d stride must be positive");
        }
        if h + 2 * pad.0 < kh || w + 2 * pad.1 < kw {
            return dim_err(format!(
                "conv2d kernel {}×{} larger than padded input {}×{}",
                kh,
                kw,
                h + 2 * pad.0,
                w + 2 * pad.1
            ));
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            out_h: (h + 2 * pad.0 - kh) / stride.0 + 1,
            out_w: (w + 2 * pad.1 - kw) / stride.1 + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `x` into `buf[..patch_len·positions]`, overwriting every element.
/// `buf` only grows, so repeated calls reuse one allocation.
fn im2col_into<'a, T: Scalar>(x: &[T], g: &ConvGeom, buf: &'a mut Vec<T>) -> &'a [T] {
    let p = g.positions();
    let n = g.patch_len() * p;
    if buf.len() < n {
        buf.resize(n, T::zero());
    }
    let cols = &mut buf[..n];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let drow = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    let iy = (oy * g.stride.0 + i) as isize - g.pad.0 as isize;
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride.1 == 1 {
                        // valid columns form one contiguous run
                        let lo = g.pad.1.saturating_sub(j).min(g.out_w);
                        let hi = (g.w + g.pad.1).saturating_sub(j).min(g.out_w).max(lo);
                        drow[..lo].fill(T::zero());
                        let s0 = lo + j - g.pad.1;
                        drow[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        drow[hi..].fill(T::zero());
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride.1 + j) as isize - g.pad.1 as isize;
                            *d = if ix >= 0 && ix < g.w as isize {
                                src[ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, gx: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c_in {
        let plane = &mut gx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride.0 + i) as isize - g.pad.0 as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride.1 + j) as isize - g.pad.1 as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Tensor<T> {
    conv2d_forward_with(x, w, b, g, &mut Vec::new())
}

/// [`conv2d_forward`] with a caller-owned scratch buffer.
pub fn conv2d_forward_with<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    g: &ConvGeom,
    scratch: &mut Vec<T>,
) -> Tensor<T> {
    let p = g.positions();
    let mut out = match b {
        Some(b) => {
            let mut out = Vec::with_capacity(g.c_out * p);
            for &bo in &b.data()[..g.c_out] {
                out.extend(std::iter::repeat_n(bo, p));
            }
            out
        }
        None => vec![T::zero(); g.c_out * p],
    };
    if g.kh == 1 && g.kw == 1 && g.stride == (1, 1) && g.pad == (0, 0) {
        T::gemm(false, false, g.c_out, g.c_in, p, T::one(), w.data(), x.data(), T::one(), &mut out);
    } else {
        let cols = im2col_into(x.data(), g, scratch);
        T::gemm(false, false, g.c_out, g.patch_len(), p, T::one(), w.data(), cols, T::one(), &mut out);
    }
    Tensor::from_vec(&[g.c_out, g.out_h, g.out_w], out).expect("conv output shape")
}

/// Returns `(grad_x, grad_w, grad_b)`; each is computed only when requested.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    conv2d_backward_with(x, w, gout, g, need, &mut Vec::new())
}

/// [`conv2d_backward`] with a caller-owned scratch buffer.
pub fn conv2d_backward_with<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    g: &ConvGeom,
    need: (bool, bool, bool),
    scratch: &mut Vec<T>,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let p = g.positions();
    let k = g.patch_len();
    let pointwise = g.kh == 1 && g.kw == 1 && g.stride == (1, 1) && g.pad == (0, 0);
    let gw = need.1.then(|| {
        let mut gw = vec![T::zero(); g.c_out * k];
        let src = if pointwise { x.data() } else { &*im2col_into(x.data(), g, scratch) };
        T::gemm(false, true, g.c_out, p, k, T::one(), gout.data(), src, T::zero(), &mut gw);
        Tensor::from_vec(w.shape(), gw).expect("weight grad shape")
    });
    let transposed = g.stride == (1, 1) && g.pad.0 < g.kh && g.pad.1 < g.kw && !pointwise;
    let gx = need.0.then(|| {
        if transposed {
            return transposed_conv(w, gout, g, scratch);
        }
        let mut gcols = vec![T::zero(); k * p];
        T::gemm(true, false, k, g.c_out, p, T::one(), w.data(), gout.data(), T::zero(), &mut gcols);
        if pointwise {
            Tensor::from_vec(x.shape(), gcols).expect("input grad shape")
        } else {
            let mut gx = vec![T::zero(); x.len()];
            col2im(&gcols, g, &mut gx);
            Tensor::from_vec(x.shape(), gx).expect("input grad shape")
        }
    });
    let gb = need.2.then(|| {
        let sums: Vec<T> = (0..g.c_out)
            .map(|o| gout.data()[o * p..(o + 1) * p].iter().copied().sum())
            .collect();
        Tensor::from_vec(&[g.c_out], sums).expect("bias grad shape")
    });
    (gx, gw, gb)
}

/// Input gradient of a stride-1 convolution as a correlation of the output
/// gradient with the flipped, channel-transposed kernel.
fn transposed_conv<T: Scalar>(w: &Tensor<T>, gout: &Tensor<T>, g: &ConvGeom, scratch: &mut Vec<T>) -> Tensor<T> {
    let (kh, kw) = (g.kh, g.kw);
    let wd = w.data();
    let mut flipped = Vec::with_capacity(wd.len());
    for c in 0..g.c_in {
        for o in 0..g.c_out {
            let base = (o * g.c_in + c) * kh * kw;
            flipped.extend(wd[base..base + kh * kw].iter().rev().copied());
        }
    }
    let flipped = Tensor::from_vec(&[g.c_in, g.c_out, kh, kw], flipped).expect("flipped kernel shape");
    let geom = ConvGeom::new(
        gout.shape(),
        flipped.shape(),
        (1, 1),
        (kh - 1 - g.pad.0, kw - 1 - g.pad.1),
    )
    .expect("transposed geometry is valid");
    debug_assert_eq!((geom.out_h, geom.out_w), (g.h, g.w));
    conv2d_forward_with(gout, &flipped, None, &geom, scratch)
}

pub fn avg_pool<T: Scalar>(x: &Tensor<T>, fh: usize, fw: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    if fh == 0 || fw == 0 || h % fh != 0 || w % fw != 0 {
        return dim_err(format!(
            "average pool factor {}×{} does not divide {}×{}",
            fh, fw, h, w
        ));
    }
    let (oh, ow) = (h / fh, w / fw);
    let scale = T::lit(1.0 / (fh * fw) as f64);
    let mut out = vec![T::zero(); c * oh * ow];
    let xd = x.data();
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let o = (ch * oh + y / fh) * ow + xx / fw;
                out[o] = out[o] + xd[(ch * h + y) * w + xx];
            }
        }
    }
    out.iter_mut().for_each(|v| *v = *v * scale);
    Tensor::from_vec(&[c, oh, ow], out)
}

pub fn avg_pool_backward<T: Scalar>(
    x_shape: &[usize],
    gout: &Tensor<T>,
    fh: usize,
    fw: usize,
) -> Tensor<T> {
    let (h, w) = (x_shape[1], x_shape[2]);
    let (oh, ow) = (h / fh, w / fw);
    let scale = T::lit(1.0 / (fh * fw) as f64);
    let gd = gout.data();
    Tensor::from_fn(x_shape, |idx| {
        let ch = idx / (h * w);
        let y = (idx / w) % h;
        let xx = idx % w;
        gd[(ch * oh + y / fh) * ow + xx / fw] * scale
    })
}
