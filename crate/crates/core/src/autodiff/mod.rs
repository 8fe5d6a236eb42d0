//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its value and the recipe for its
//! vector-Jacobian product. Nodes are only ever appended, so the tape order
//! is a topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! Broadcasting is limited to one-element tensors combined with tensors of
//! any shape; every other binary op requires identical shapes.

pub mod kernels;

use std::cell::RefCell;

use crate::error::{dim_err, Error, Result};
use crate::mosaic::{self, MosaicLayout};
use crate::tensor::{Scalar, Tensor};
use crate::{orthoconv, wavelet};
use kernels::ConvGeom;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ExpBounded(Var, T),
    LeakyRelu(Var, T),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    AvgPool { x: Var, fh: usize, fw: usize },
    Dwt(Var),
    Idwt(Var),
    Cayley(Var),
    Decompose { x: Var, k: Var, grid: (usize, usize) },
    Recompose { f: Var, k: Var, grid: (usize, usize) },
    Splice { tiles: Vec<Var>, layout: MosaicLayout },
    Crop { x: Var, top: usize, left: usize },
    StraightThrough { x: Var, mask: Vec<bool> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Computation record for one forward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    /// Reused im2col buffer.
    scratch: RefCell<Vec<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() && a.len() != 1 && b.len() != 1 {
        return dim_err(format!(
            "{}: incompatible shapes {:?} and {:?}",
            what,
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

/// Elementwise binary op with one-element broadcasting.
fn broadcast<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    if a.shape() == b.shape() {
        a.zip_map(b, f).expect("equal shapes")
    } else if a.len() == 1 {
        let av = a.data()[0];
        b.map(|v| f(av, v))
    } else {
        let bv = b.data()[0];
        a.map(|v| f(v, bv))
    }
}

/// Reduces a gradient shaped like the broadcast output back to `target`.
fn unbroadcast<T: Scalar>(g: Tensor<T>, target: &[usize]) -> Tensor<T> {
    if g.shape() == target {
        g
    } else {
        Tensor::from_vec(target, vec![g.sum()]).expect("one-element target")
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            scratch: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; gradients are tracked only when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, "add")?;
        let out = broadcast(va, vb, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, "sub")?;
        let out = broadcast(va, vb, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, "mul")?;
        let out = broadcast(va, vb, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = T::lit(s);
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    /// `exp(B · tanh(x / B))`: equals `exp(x)` to first order at zero and
    /// stays inside `(e^-B, e^B)`. Odd in the exponent, so
    /// `exp_bounded(-x) = 1 / exp_bounded(x)`.
    pub fn exp_bounded(&mut self, x: Var, bound: f64) -> Var {
        let b = T::lit(bound);
        let out = self.value(x).map(|v| (b * (v / b).tanh()).exp());
        self.push(out, Op::ExpBounded(x, b), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::lit(slope);
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v * s });
        self.push(out, Op::LeakyRelu(x, s), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.abs());
        self.push(out, Op::Abs(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x), &[x])
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// `Σ |a - b|`.
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let d = self.abs(d);
        Ok(self.sum(d))
    }

    /// `Σ (a - b)²`.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let d = self.square(d);
        Ok(self.sum(d))
    }

    /// Channel-wise concatenation of `C_i×H×W` tensors.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return dim_err("concat of zero tensors");
        }
        let (_, h, w) = self.value(parts[0]).chw()?;
        let mut data = Vec::new();
        let mut channels = 0;
        for &p in parts {
            let (c, ph, pw) = self.value(p).chw()?;
            if (ph, pw) != (h, w) {
                return dim_err(format!(
                    "concat spatial mismatch: {}×{} vs {}×{}",
                    ph, pw, h, w
                ));
            }
            channels += c;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_vec(&[channels, h, w], data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).channels(start, len)?;
        Ok(self.push(out, Op::Slice { x, start }, &[x]))
    }

    /// Splits into channels `[0, at)` and `[at, C)`.
    pub fn split_channels(&mut self, x: Var, at: usize) -> Result<(Var, Var)> {
        let (c, _, _) = self.value(x).chw()?;
        if at == 0 || at >= c {
            return dim_err(format!("split point {} outside (0, {})", at, c));
        }
        let a = self.slice_channels(x, 0, at)?;
        let b = self.slice_channels(x, at, c - at)?;
        Ok((a, b))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, pad)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.c_out] {
                return dim_err(format!(
                    "conv2d bias shape {:?} does not match {} output channels",
                    self.shape(b),
                    geom.c_out
                ));
            }
        }
        let out = kernels::conv2d_forward_with(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &geom,
            &mut self.scratch.borrow_mut(),
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    pub fn avg_pool(&mut self, x: Var, fh: usize, fw: usize) -> Result<Var> {
        let out = kernels::avg_pool(self.value(x), fh, fw)?;
        Ok(self.push(out, Op::AvgPool { x, fh, fw }, &[x]))
    }

    pub fn dwt(&mut self, x: Var) -> Result<Var> {
        let out = wavelet::dwt_haar(self.value(x))?;
        Ok(self.push(out, Op::Dwt(x), &[x]))
    }

    pub fn idwt(&mut self, x: Var) -> Result<Var> {
        let out = wavelet::idwt_haar(self.value(x))?;
        Ok(self.push(out, Op::Idwt(x), &[x]))
    }

    /// LL subband of each channel.
    pub fn low_band(&mut self, x: Var) -> Result<Var> {
        let s = self.dwt(x)?;
        let (c4, _, _) = self.value(s).chw()?;
        let parts: Vec<Var> = (0..c4 / 4)
            .map(|c| self.slice_channels(s, 4 * c, 1))
            .collect::<Result<_>>()?;
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            self.concat_channels(&parts)
        }
    }

    pub fn cayley(&mut self, theta: Var) -> Result<Var> {
        let out = orthoconv::cayley(self.value(theta))?;
        Ok(self.push(out, Op::Cayley(theta), &[theta]))
    }

    pub fn decompose(&mut self, x: Var, k: Var, grid: (usize, usize)) -> Result<Var> {
        let out = orthoconv::decompose(self.value(x), self.value(k), grid)?;
        Ok(self.push(out, Op::Decompose { x, k, grid }, &[x, k]))
    }

    pub fn recompose(&mut self, f: Var, k: Var, grid: (usize, usize)) -> Result<Var> {
        let out = orthoconv::recompose(self.value(f), self.value(k), grid)?;
        Ok(self.push(out, Op::Recompose { f, k, grid }, &[f, k]))
    }

    pub fn splice(&mut self, tiles: &[Var], layout: &MosaicLayout) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = tiles.iter().map(|&t| self.value(t)).collect();
        let out = mosaic::splice(&refs, layout)?;
        Ok(self.push(
            out,
            Op::Splice {
                tiles: tiles.to_vec(),
                layout: *layout,
            },
            tiles,
        ))
    }

    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let out = mosaic::crop(self.value(x), top, left, h, w)?;
        Ok(self.push(out, Op::Crop { x, top, left }, &[x]))
    }

    /// Inverse of [`Tape::splice`]; padding tiles are dropped.
    pub fn split_mosaic(&mut self, msr: Var, layout: &MosaicLayout) -> Result<Vec<Var>> {
        let (_, h, w) = self.value(msr).chw()?;
        if h % layout.rows != 0 || w % layout.cols != 0 {
            return dim_err(format!(
                "mosaic {}×{} not divisible by grid {}×{}",
                h, w, layout.rows, layout.cols
            ));
        }
        (0..layout.n_secrets)
            .map(|i| {
                let (top, left, th, tw) = mosaic::cell_rect(layout, i, h, w);
                self.crop(msr, top, left, th, tw)
            })
            .collect()
    }

    /// Records `value` as the forward result with gradient passed to `x`
    /// wherever `mask` is set and zero elsewhere.
    pub fn straight_through(&mut self, x: Var, value: Tensor<T>, mask: Vec<bool>) -> Result<Var> {
        if value.shape() != self.shape(x) || mask.len() != value.len() {
            return dim_err("straight-through value/mask must match the input shape");
        }
        Ok(self.push(value, Op::StraightThrough { x, mask }, &[x]))
    }

    /// Gradient of `loss` with respect to `v`; zero when unreachable.
    pub fn grad(&self, v: Var) -> Tensor<T> {
        self.grads
            .get(v.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    /// Like [`Tape::grad`] but `None` when no gradient reached `v`.
    pub fn grad_opt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Populates gradients of the one-element `loss` for every node that
    /// requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (target, contrib) in self.vjp(i, &g) {
                if !self.nodes[target.0].requires_grad {
                    continue;
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn vjp(&self, i: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![
                (*a, unbroadcast(g.clone(), val(*a).shape())),
                (*b, unbroadcast(g.clone(), val(*b).shape())),
            ],
            Op::Sub(a, b) => vec![
                (*a, unbroadcast(g.clone(), val(*a).shape())),
                (*b, unbroadcast(g.map(|v| -v), val(*b).shape())),
            ],
            Op::Mul(a, b) => {
                let mut out = Vec::new();
                if self.wants(*a) {
                    out.push((*a, unbroadcast(broadcast(g, val(*b), |x, y| x * y), val(*a).shape())));
                }
                if self.wants(*b) {
                    out.push((*b, unbroadcast(broadcast(g, val(*a), |x, y| x * y), val(*b).shape())));
                }
                out
            }
            Op::Scale(x, s) => vec![(*x, g.map(|v| v * *s))],
            Op::ExpBounded(x, b) => {
                let gx = Tensor::from_fn(g.shape(), |k| {
                    let t = (val(*x).data()[k] / *b).tanh();
                    g.data()[k] * node.value.data()[k] * (T::one() - t * t)
                });
                vec![(*x, gx)]
            }
            Op::LeakyRelu(x, s) => {
                let gx = Tensor::from_fn(g.shape(), |k| {
                    if val(*x).data()[k] > T::zero() {
                        g.data()[k]
                    } else {
                        g.data()[k] * *s
                    }
                });
                vec![(*x, gx)]
            }
            Op::Abs(x) => {
                let gx = Tensor::from_fn(g.shape(), |k| {
                    let v = val(*x).data()[k];
                    if v > T::zero() {
                        g.data()[k]
                    } else if v < T::zero() {
                        -g.data()[k]
                    } else {
                        T::zero()
                    }
                });
                vec![(*x, gx)]
            }
            Op::Square(x) => {
                let two = T::lit(2.0);
                let gx = Tensor::from_fn(g.shape(), |k| two * val(*x).data()[k] * g.data()[k]);
                vec![(*x, gx)]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), g.item()))],
            Op::Concat(parts) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let n = val(p).len();
                    if self.wants(p) {
                        let data = g.data()[offset..offset + n].to_vec();
                        out.push((p, Tensor::from_vec(val(p).shape(), data).expect("shape")));
                    }
                    offset += n;
                }
                out
            }
            Op::Slice { x, start } => {
                let xs = val(*x).shape();
                let plane = xs[1] * xs[2];
                let mut gx = Tensor::zeros(xs);
                gx.data_mut()[start * plane..start * plane + g.len()].copy_from_slice(g.data());
                vec![(*x, gx)]
            }
            Op::Conv2d { x, w, b, geom } => {
                let need = (self.wants(*x), self.wants(*w), b.is_some_and(|b| self.wants(b)));
                let (gx, gw, gb) =
                    kernels::conv2d_backward_with(val(*x), val(*w), g, geom, need, &mut self.scratch.borrow_mut());
                let mut out = Vec::new();
                out.extend(gx.map(|t| (*x, t)));
                out.extend(gw.map(|t| (*w, t)));
                if let (Some(b), Some(t)) = (b, gb) {
                    out.push((*b, t));
                }
                out
            }
            Op::AvgPool { x, fh, fw } => {
                vec![(*x, kernels::avg_pool_backward(val(*x).shape(), g, *fh, *fw))]
            }
            // orthonormal: the adjoint is the inverse transform
            Op::Dwt(x) => vec![(*x, wavelet::idwt_haar(g).expect("shape"))],
            Op::Idwt(x) => vec![(*x, wavelet::dwt_haar(g).expect("shape"))],
            Op::Cayley(theta) => {
                let gt = orthoconv::cayley_backward(val(*theta), &node.value, g)
                    .expect("cayley backward on a previously solvable system");
                vec![(*theta, gt)]
            }
            Op::Decompose { x, k, grid } => {
                let (gx, gk) = orthoconv::decompose_backward(val(*x), val(*k), *grid, g);
                vec![(*x, gx), (*k, gk)]
            }
            Op::Recompose { f, k, grid } => {
                let (gf, gk) = orthoconv::recompose_backward(val(*f), val(*k), *grid, g);
                vec![(*f, gf), (*k, gk)]
            }
            Op::Splice { tiles, layout } => {
                let (_, h, w) = (g.shape()[0], g.shape()[1], g.shape()[2]);
                tiles
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| self.wants(**t))
                    .map(|(idx, &t)| {
                        let (top, left, th, tw) = mosaic::cell_rect(layout, idx, h, w);
                        (t, mosaic::crop(g, top, left, th, tw).expect("cell in bounds"))
                    })
                    .collect()
            }
            Op::Crop { x, top, left } => {
                let xs = val(*x).shape();
                let (c, h, w) = (g.shape()[0], g.shape()[1], g.shape()[2]);
                let mut gx = Tensor::zeros(xs);
                let gxd = gx.data_mut();
                for ch in 0..c {
                    for y in 0..h {
                        let dst = (ch * xs[1] + top + y) * xs[2] + left;
                        gxd[dst..dst + w].copy_from_slice(&g.data()[(ch * h + y) * w..(ch * h + y + 1) * w]);
                    }
                }
                vec![(*x, gx)]
            }
            Op::StraightThrough { x, mask } => {
                let gx = Tensor::from_fn(g.shape(), |k| if mask[k] { g.data()[k] } else { T::zero() });
                vec![(*x, gx)]
            }
        }
    }
}

#[cfg(test)]
mod tests;
