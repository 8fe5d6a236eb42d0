//! Convolutional building blocks and the affine coupling blocks.
//!
//! Both coupling variants update one half additively from the other half and
//! the other half affinely, so the reverse pass is closed-form for any
//! weights. Conditional blocks receive the cover features by channel-wise
//! concatenation onto every subnet input.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Negative slope of every leaky rectifier in the network.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Bound `B` of the saturating exponential in coupling scales.
pub const EXP_BOUND: f64 = 2.0;

/// A 3×3 (or 1×1) stride-1 "same" convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv {
    /// Registers `{prefix}.w` / `{prefix}.b`; He-normal weights unless `zero`.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        zero: bool,
    ) -> Self {
        let mut w = Tensor::zeros(&[c_out, c_in, kernel, kernel]);
        if !zero && c_in > 0 {
            let fan_in = (c_in * kernel * kernel) as f64;
            let std = (2.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt();
            let normal = rand_distr::Normal::new(0.0, std).expect("finite std");
            w.data_mut()
                .iter_mut()
                .for_each(|v| *v = T::lit(rand_distr::Distribution::sample(&normal, rng)));
        }
        Self {
            weight: store.add(format!("{prefix}.w"), w),
            bias: store.add(format!("{prefix}.b"), Tensor::zeros(&[c_out])),
            c_in,
            c_out,
            kernel,
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let pad = self.kernel / 2;
        tape.conv2d(x, p.var(self.weight), Some(p.var(self.bias)), (1, 1), (pad, pad))
    }
}

/// Five 3×3 convolutions with dense skip connections; the last one projects
/// to the output width and starts at zero so the subnet is initially the
/// zero function.
#[derive(Clone, Debug)]
pub struct DenseSubnet {
    convs: Vec<Conv>,
    pub c_in: usize,
    pub c_out: usize,
}

impl DenseSubnet {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        growth: usize,
    ) -> Self {
        let mut convs = Vec::with_capacity(5);
        for i in 0..4 {
            convs.push(Conv::new(store, rng, &format!("{prefix}.conv{i}"), c_in + i * growth, growth, 3, false));
        }
        convs.push(Conv::new(store, rng, &format!("{prefix}.conv4"), c_in + 4 * growth, c_out, 3, true));
        Self { convs, c_in, c_out }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let c = tape.shape(x)[0];
        if c != self.c_in {
            return dim_err(format!("subnet expects {} input channels, got {}", self.c_in, c));
        }
        let mut feats = vec![x];
        for (i, conv) in self.convs.iter().enumerate() {
            let input = if feats.len() == 1 {
                feats[0]
            } else {
                tape.concat_channels(&feats)?
            };
            let y = conv.apply(tape, p, input)?;
            if i + 1 == self.convs.len() {
                return Ok(y);
            }
            feats.push(tape.leaky_relu(y, LEAKY_SLOPE));
        }
        unreachable!("subnet has a final projection")
    }
}

/// Cover feature extractor `𝒢`: two 3×3 convolutions and average pooling
/// down to the mosaic tile resolution.
#[derive(Clone, Debug)]
pub struct CondExtractor {
    conv0: Conv,
    conv1: Conv,
    pub pool: (usize, usize),
    pub width: usize,
}

impl CondExtractor {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        channels: usize,
        width: usize,
        pool: (usize, usize),
    ) -> Self {
        Self {
            conv0: Conv::new(store, rng, "cond.conv0", channels, width, 3, false),
            conv1: Conv::new(store, rng, "cond.conv1", width, width, 3, false),
            pool,
            width,
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, cover: Var) -> Result<Var> {
        let (_, h, w) = tape.value(cover).chw()?;
        if h % self.pool.0 != 0 || w % self.pool.1 != 0 {
            return dim_err(format!(
                "cover {}×{} not divisible by pooling {}×{}",
                h, w, self.pool.0, self.pool.1
            ));
        }
        let y = self.conv0.apply(tape, p, cover)?;
        let y = tape.leaky_relu(y, LEAKY_SLOPE);
        let y = self.conv1.apply(tape, p, y)?;
        tape.avg_pool(y, self.pool.0, self.pool.1)
    }
}

/// Residual convolution stack used for secret selection and enhancement.
#[derive(Clone, Debug)]
pub struct ResidualStack {
    convs: Vec<Conv>,
}

impl ResidualStack {
    /// `layers` convolutions `channels → width → … → channels`, last one zero.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        channels: usize,
        width: usize,
        layers: usize,
    ) -> Self {
        let layers = layers.max(1);
        let convs = (0..layers)
            .map(|i| {
                let c_in = if i == 0 { channels } else { width };
                let c_out = if i + 1 == layers { channels } else { width };
                Conv::new(store, rng, &format!("{prefix}.conv{i}"), c_in, c_out, 3, i + 1 == layers)
            })
            .collect();
        Self { convs }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.apply(tape, p, h)?;
            if i + 1 < self.convs.len() {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        tape.add(x, h)
    }
}

/// Unconditional coupling block embedding the mosaic into the cover.
#[derive(Clone, Debug)]
pub struct InvBlock {
    phi: DenseSubnet,
    rho: DenseSubnet,
    psi: DenseSubnet,
    pub ms_channels: usize,
    pub cover_channels: usize,
}

impl InvBlock {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        ms_channels: usize,
        cover_channels: usize,
        growth: usize,
    ) -> Self {
        Self {
            phi: DenseSubnet::new(store, rng, &format!("{prefix}.phi"), cover_channels, ms_channels, growth),
            rho: DenseSubnet::new(store, rng, &format!("{prefix}.rho"), ms_channels, cover_channels, growth),
            psi: DenseSubnet::new(store, rng, &format!("{prefix}.psi"), ms_channels, cover_channels, growth),
            ms_channels,
            cover_channels,
        }
    }

    fn check<T: Scalar>(&self, tape: &Tape<T>, f_ms: Var, f_c: Var) -> Result<()> {
        let (a, b) = (tape.shape(f_ms), tape.shape(f_c));
        if a.len() != 3 || b.len() != 3 || a[0] != self.ms_channels || b[0] != self.cover_channels || a[1..] != b[1..] {
            return dim_err(format!(
                "Inv block expects {}×H×W and {}×H×W, got {:?} and {:?}",
                self.ms_channels, self.cover_channels, a, b
            ));
        }
        Ok(())
    }

    /// `f_ms' = f_ms + φ(f_c)`, `f_c' = f_c ⊙ e(ρ(f_ms')) + ψ(f_ms')`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, f_ms: Var, f_c: Var) -> Result<(Var, Var)> {
        self.check(tape, f_ms, f_c)?;
        let shift = self.phi.apply(tape, p, f_c)?;
        let ms = tape.add(f_ms, shift)?;
        let log_scale = self.rho.apply(tape, p, ms)?;
        let scale = tape.exp_bounded(log_scale, EXP_BOUND);
        let t = self.psi.apply(tape, p, ms)?;
        let c = tape.mul(f_c, scale)?;
        let c = tape.add(c, t)?;
        Ok((ms, c))
    }

    /// Closed-form inverse of [`InvBlock::forward`].
    pub fn reverse<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, f_ms: Var, f_c: Var) -> Result<(Var, Var)> {
        self.check(tape, f_ms, f_c)?;
        let log_scale = self.rho.apply(tape, p, f_ms)?;
        let neg = tape.scale(log_scale, -1.0);
        let inv_scale = tape.exp_bounded(neg, EXP_BOUND);
        let t = self.psi.apply(tape, p, f_ms)?;
        let c = tape.sub(f_c, t)?;
        let c = tape.mul(c, inv_scale)?;
        let shift = self.phi.apply(tape, p, c)?;
        let ms = tape.sub(f_ms, shift)?;
        Ok((ms, c))
    }
}

/// Cover-conditioned coupling block of the mosaic transform.
///
/// The top part has `(mn-1)K` channels and the bottom part `K`; with a 1×1
/// grid the top part is empty and only the additive bottom update remains.
#[derive(Clone, Debug)]
pub struct CInvBlock {
    phi: DenseSubnet,
    affine: Option<(DenseSubnet, DenseSubnet)>,
    pub top_channels: usize,
    pub bottom_channels: usize,
    pub cond_channels: usize,
}

impl CInvBlock {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        top_channels: usize,
        bottom_channels: usize,
        cond_channels: usize,
        growth: usize,
    ) -> Self {
        let phi = DenseSubnet::new(store, rng, &format!("{prefix}.phi"), top_channels + cond_channels, bottom_channels, growth);
        let affine = (top_channels > 0).then(|| {
            (
                DenseSubnet::new(store, rng, &format!("{prefix}.rho"), bottom_channels + cond_channels, top_channels, growth),
                DenseSubnet::new(store, rng, &format!("{prefix}.psi"), bottom_channels + cond_channels, top_channels, growth),
            )
        });
        Self {
            phi,
            affine,
            top_channels,
            bottom_channels,
            cond_channels,
        }
    }

    fn check<T: Scalar>(&self, tape: &Tape<T>, top: Option<Var>, bottom: Var, cond: Var) -> Result<()> {
        let b = tape.shape(bottom);
        let c = tape.shape(cond);
        if c.len() != 3 || b.len() != 3 || c[1..] != b[1..] || c[0] != self.cond_channels {
            return dim_err(format!(
                "condition {:?} does not match feature {:?} (expected {} condition channels)",
                c, b, self.cond_channels
            ));
        }
        if b[0] != self.bottom_channels {
            return dim_err(format!("bottom part expects {} channels, got {}", self.bottom_channels, b[0]));
        }
        match top {
            Some(t) if tape.shape(t)[0] != self.top_channels || tape.shape(t)[1..] != b[1..] => dim_err(format!(
                "top part expects {}×{}×{}, got {:?}",
                self.top_channels,
                b[1],
                b[2],
                tape.shape(t)
            )),
            None if self.top_channels != 0 => dim_err("top part missing"),
            _ => Ok(()),
        }
    }

    fn with_cond<T: Scalar>(tape: &mut Tape<T>, x: Option<Var>, cond: Var) -> Result<Var> {
        match x {
            Some(x) => tape.concat_channels(&[x, cond]),
            None => Ok(cond),
        }
    }

    /// `f_b' = f_b + φ_c(f_t; g)`, `f_t' = f_t ⊙ e(ρ_c(f_b'; g)) + ψ_c(f_b'; g)`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        top: Option<Var>,
        bottom: Var,
        cond: Var,
    ) -> Result<(Option<Var>, Var)> {
        self.check(tape, top, bottom, cond)?;
        let phi_in = Self::with_cond(tape, top, cond)?;
        let shift = self.phi.apply(tape, p, phi_in)?;
        let b = tape.add(bottom, shift)?;
        let t = match (&self.affine, top) {
            (Some((rho, psi)), Some(top)) => {
                let inp = tape.concat_channels(&[b, cond])?;
                let log_scale = rho.apply(tape, p, inp)?;
                let scale = tape.exp_bounded(log_scale, EXP_BOUND);
                let shift = psi.apply(tape, p, inp)?;
                let t = tape.mul(top, scale)?;
                Some(tape.add(t, shift)?)
            }
            _ => None,
        };
        Ok((t, b))
    }

    /// Closed-form inverse of [`CInvBlock::forward`] under the same condition.
    pub fn reverse<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        top: Option<Var>,
        bottom: Var,
        cond: Var,
    ) -> Result<(Option<Var>, Var)> {
        self.check(tape, top, bottom, cond)?;
        let t = match (&self.affine, top) {
            (Some((rho, psi)), Some(top)) => {
                let inp = tape.concat_channels(&[bottom, cond])?;
                let log_scale = rho.apply(tape, p, inp)?;
                let neg = tape.scale(log_scale, -1.0);
                let inv_scale = tape.exp_bounded(neg, EXP_BOUND);
                let shift = psi.apply(tape, p, inp)?;
                let t = tape.sub(top, shift)?;
                Some(tape.mul(t, inv_scale)?)
            }
            _ => None,
        };
        let phi_in = Self::with_cond(tape, t, cond)?;
        let shift = self.phi.apply(tape, p, phi_in)?;
        let b = tape.sub(bottom, shift)?;
        Ok((t, b))
    }
}
