//! End-to-end hiding and recovery.
//!
//! Hiding: selection stack → orthogonal decomposition → conditional coupling
//! chain per secret → mosaic splice → Haar → coupling chain with the cover →
//! inverse Haar → quantization. Recovery runs the invertible parts backwards
//! from the stego image and an auxiliary mosaic-shaped input `z`, then
//! applies the enhancement stack.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::coupling::{CInvBlock, CondExtractor, InvBlock, ResidualStack};
use crate::error::{contract_err, dim_err, Result};
use crate::mosaic::{grid_shape, MosaicLayout};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub n_secrets: usize,
    /// Image channels `K`.
    pub channels: usize,
    /// Width of every hidden convolution, including the condition features.
    pub width: usize,
    pub r_blocks: usize,
    pub g_blocks: usize,
    pub sis_layers: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            n_secrets: 9,
            channels: 3,
            width: 32,
            r_blocks: 8,
            g_blocks: 16,
            sis_layers: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    /// Clamp plus uniform noise of half a quantization step.
    Train,
    /// Clamp and round to the nearest multiple of 1/255.
    Eval,
    /// No quantization; used to check exact invertibility.
    Off,
}

/// Tensors produced by hiding.
#[derive(Clone, Debug)]
pub struct StegoOutput<T> {
    pub stego: Tensor<T>,
    /// The residual mosaic branch that is normally discarded.
    pub r_h: Tensor<T>,
    pub msr: Tensor<T>,
}

/// Tensors produced by recovery.
#[derive(Clone, Debug)]
pub struct Revealed<T> {
    pub cover_hat: Tensor<T>,
    pub msr_hat: Tensor<T>,
    pub secrets: Vec<Tensor<T>>,
}

/// Tape handles of one hiding pass.
#[derive(Clone, Debug)]
pub struct HideGraph {
    pub stego: Var,
    /// Stego before quantization.
    pub stego_pre: Var,
    pub r_h: Var,
    pub msr: Var,
    pub selected: Vec<Var>,
}

/// Tape handles of one recovery pass.
#[derive(Clone, Debug)]
pub struct RevealGraph {
    pub cover_hat: Var,
    pub msr_hat: Var,
    /// Recomposed secrets before enhancement.
    pub recomposed: Vec<Var>,
    pub secrets: Vec<Var>,
}

/// Maximum gap to the rounding grid tolerated when checking quantized values.
pub const QUANT_STEP: f64 = 1.0 / 255.0;

/// Quantizes on the tape with a straight-through gradient (identity inside
/// `[0, 1]`, zero outside).
pub fn quantize<T: Scalar, R: Rng>(tape: &mut Tape<T>, x: Var, mode: QuantMode, rng: &mut R) -> Result<Var> {
    let xv = tape.value(x);
    let mask: Vec<bool> = xv
        .data()
        .iter()
        .map(|&v| v >= T::zero() && v <= T::one())
        .collect();
    let value = match mode {
        QuantMode::Off => return Ok(x),
        QuantMode::Eval => xv.map(|v| T::lit((v.f64().clamp(0.0, 1.0) * 255.0).round() / 255.0)),
        QuantMode::Train => {
            let half = 0.5 / 255.0;
            let noisy: Vec<T> = xv
                .data()
                .iter()
                .map(|v| T::lit(v.f64().clamp(0.0, 1.0) + rng.random_range(-half..half)))
                .collect();
            Tensor::from_vec(xv.shape(), noisy)?
        }
    };
    tape.straight_through(x, value, mask)
}

/// Tensor-level quantization; `seed` only matters in [`QuantMode::Train`].
pub fn quantize_tensor<T: Scalar>(x: &Tensor<T>, mode: QuantMode, seed: u64) -> Tensor<T> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = quantize(&mut tape, v, mode, &mut rng).expect("shape preserved");
    tape.value(q).clone()
}

/// I.i.d. standard normal tensor, reproducible from `seed`.
pub fn sample_z<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_z_with(shape, &mut rng)
}

pub fn sample_z_with<T: Scalar, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        T::lit(v)
    })
}

/// The full network and its parameters.
#[derive(Clone, Debug)]
pub struct SmileNet<T> {
    pub config: NetConfig,
    pub layout: MosaicLayout,
    pub params: ParamStore<T>,
    sis: ResidualStack,
    cond: CondExtractor,
    theta: ParamId,
    cinv: Vec<CInvBlock>,
    inv: Vec<InvBlock>,
    sde: ResidualStack,
}

impl<T: Scalar> SmileNet<T> {
    /// Builds a network whose every invertible block and residual stack is
    /// the identity map; hidden weights are drawn from `seed`.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        if config.channels == 0 || config.width == 0 || config.sis_layers == 0 {
            return contract_err("channels, width and sis_layers must be positive");
        }
        let layout = grid_shape(config.n_secrets)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let k = config.channels;
        let w = config.width;
        let mn = layout.cells();
        let sis = ResidualStack::new(&mut params, &mut rng, "sis", k, w, config.sis_layers);
        let cond = CondExtractor::new(&mut params, &mut rng, k, w, layout.grid());
        let theta = params.add("decomp.theta", Tensor::zeros(&[mn, mn]));
        let cinv = (0..config.r_blocks)
            .map(|r| CInvBlock::new(&mut params, &mut rng, &format!("cinv.{r}"), (mn - 1) * k, k, w, w))
            .collect();
        let inv = (0..config.g_blocks)
            .map(|g| InvBlock::new(&mut params, &mut rng, &format!("inv.{g}"), 4 * mn * k, 4 * k, w))
            .collect();
        let sde = ResidualStack::new(&mut params, &mut rng, "sde", k, w, config.sis_layers);
        Ok(Self {
            config,
            layout,
            params,
            sis,
            cond,
            theta,
            cinv,
            inv,
            sde,
        })
    }

    /// Replaces the parameters, checking names and shapes.
    pub fn with_params(mut self, params: ParamStore<T>) -> Result<Self> {
        if params.len() != self.params.len() {
            return contract_err(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                params.len()
            ));
        }
        for ((n0, t0), (n1, t1)) in self.params.iter().zip(params.iter()) {
            if n0 != n1 || t0.shape() != t1.shape() {
                return contract_err(format!(
                    "parameter mismatch: expected {} {:?}, got {} {:?}",
                    n0,
                    t0.shape(),
                    n1,
                    t1.shape()
                ));
            }
        }
        self.params = params;
        Ok(self)
    }

    /// Fills every parameter (including zero-initialized projections and the
    /// skew parameter) with Gaussian noise; used to exercise invertibility.
    pub fn randomize(&mut self, seed: u64, gain: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.params.randomize(&mut rng, |name, shape| {
            if name == "decomp.theta" {
                0.5
            } else if name.ends_with(".b") {
                0.01 * gain
            } else {
                let fan_in: usize = shape.iter().skip(1).product::<usize>().max(1);
                gain / (fan_in as f64).sqrt()
            }
        });
    }

    pub fn cast<U: Scalar>(&self) -> SmileNet<U> {
        SmileNet {
            config: self.config.clone(),
            layout: self.layout,
            params: self.params.cast(),
            sis: self.sis.clone(),
            cond: self.cond.clone(),
            theta: self.theta,
            cinv: self.cinv.clone(),
            inv: self.inv.clone(),
            sde: self.sde.clone(),
        }
    }

    /// Checks that a `K×H×W` image fits the mosaic and one Haar level.
    pub fn check_image_shape(&self, shape: &[usize]) -> Result<()> {
        let (m, n) = self.layout.grid();
        match shape {
            [k, h, w] if *k == self.config.channels && h % (2 * m) == 0 && w % (2 * n) == 0 && *h > 0 && *w > 0 => Ok(()),
            _ => dim_err(format!(
                "image shape {:?} must be {}×H×W with H divisible by {} and W divisible by {}",
                shape,
                self.config.channels,
                2 * m,
                2 * n
            )),
        }
    }

    /// Shape of the mosaic representation (and of `z`) for a cover shape.
    pub fn msr_shape(&self, cover_shape: &[usize]) -> Result<[usize; 3]> {
        self.check_image_shape(cover_shape)?;
        Ok([self.layout.cells() * self.config.channels, cover_shape[1], cover_shape[2]])
    }

    fn top_channels(&self) -> usize {
        (self.layout.cells() - 1) * self.config.channels
    }

    /// Forward chain of the cover-driven mosaic transform for one selected secret.
    fn icdm_forward(&self, tape: &mut Tape<T>, p: &Bound, kernel: Var, x: Var, cond: Var) -> Result<Var> {
        let d = tape.decompose(x, kernel, self.layout.grid())?;
        let top_c = self.top_channels();
        let (mut top, mut bottom) = if top_c == 0 {
            (None, d)
        } else {
            let (t, b) = tape.split_channels(d, top_c)?;
            (Some(t), b)
        };
        for blk in &self.cinv {
            (top, bottom) = blk.forward(tape, p, top, bottom, cond)?;
        }
        match top {
            Some(t) => tape.concat_channels(&[t, bottom]),
            None => Ok(bottom),
        }
    }

    fn icdm_reverse_one(&self, tape: &mut Tape<T>, p: &Bound, kernel: Var, f: Var, cond: Var) -> Result<Var> {
        let top_c = self.top_channels();
        let (mut top, mut bottom) = if top_c == 0 {
            (None, f)
        } else {
            let (t, b) = tape.split_channels(f, top_c)?;
            (Some(t), b)
        };
        for blk in self.cinv.iter().rev() {
            (top, bottom) = blk.reverse(tape, p, top, bottom, cond)?;
        }
        let d = match top {
            Some(t) => tape.concat_channels(&[t, bottom])?,
            None => bottom,
        };
        tape.recompose(d, kernel, self.layout.grid())
    }

    /// Records a hiding pass.
    pub fn hide_graph<R: Rng>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        cover: Var,
        secrets: &[Var],
        mode: QuantMode,
        rng: &mut R,
    ) -> Result<HideGraph> {
        self.check_image_shape(tape.shape(cover))?;
        if secrets.len() != self.config.n_secrets {
            return contract_err(format!(
                "network hides {} secrets, got {}",
                self.config.n_secrets,
                secrets.len()
            ));
        }
        for &s in secrets {
            if tape.shape(s) != tape.shape(cover) {
                return dim_err(format!(
                    "secret shape {:?} differs from cover {:?}",
                    tape.shape(s),
                    tape.shape(cover)
                ));
            }
        }
        let kernel = tape.cayley(p.var(self.theta))?;
        let cond = self.cond.apply(tape, p, cover)?;
        let mut selected = Vec::with_capacity(secrets.len());
        let mut reps = Vec::with_capacity(secrets.len());
        for &s in secrets {
            let x = self.sis.apply(tape, p, s)?;
            selected.push(x);
            reps.push(self.icdm_forward(tape, p, kernel, x, cond)?);
        }
        let msr = tape.splice(&reps, &self.layout)?;
        let mut f_ms = tape.dwt(msr)?;
        let mut f_c = tape.dwt(cover)?;
        for blk in &self.inv {
            (f_ms, f_c) = blk.forward(tape, p, f_ms, f_c)?;
        }
        let stego_pre = tape.idwt(f_c)?;
        let r_h = tape.idwt(f_ms)?;
        let stego = quantize(tape, stego_pre, mode, rng)?;
        Ok(HideGraph {
            stego,
            stego_pre,
            r_h,
            msr,
            selected,
        })
    }

    /// Reverse of the embedding chain: `(msr_hat, cover_hat)`.
    pub fn imse_reverse(&self, tape: &mut Tape<T>, p: &Bound, stego: Var, z: Var) -> Result<(Var, Var)> {
        self.check_image_shape(tape.shape(stego))?;
        let expected = self.msr_shape(tape.shape(stego))?;
        if tape.shape(z) != expected {
            return dim_err(format!(
                "z shape {:?} must equal the mosaic shape {:?}",
                tape.shape(z),
                expected
            ));
        }
        let mut f_ms = tape.dwt(z)?;
        let mut f_c = tape.dwt(stego)?;
        for blk in self.inv.iter().rev() {
            (f_ms, f_c) = blk.reverse(tape, p, f_ms, f_c)?;
        }
        Ok((tape.idwt(f_ms)?, tape.idwt(f_c)?))
    }

    /// Splits the recovered mosaic and inverts the conditional chain for
    /// every tile, conditioned on `cover_hat`. Returns pre-enhancement secrets.
    pub fn icdm_reverse(&self, tape: &mut Tape<T>, p: &Bound, msr_hat: Var, cover_hat: Var) -> Result<Vec<Var>> {
        let kernel = tape.cayley(p.var(self.theta))?;
        let cond = self.cond.apply(tape, p, cover_hat)?;
        let tiles = tape.split_mosaic(msr_hat, &self.layout)?;
        tiles
            .into_iter()
            .map(|t| self.icdm_reverse_one(tape, p, kernel, t, cond))
            .collect()
    }

    pub fn enhance(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        self.sde.apply(tape, p, x)
    }

    pub fn select(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        self.sis.apply(tape, p, x)
    }

    /// Records a recovery pass.
    pub fn reveal_graph(&self, tape: &mut Tape<T>, p: &Bound, stego: Var, z: Var) -> Result<RevealGraph> {
        let (msr_hat, cover_hat) = self.imse_reverse(tape, p, stego, z)?;
        let recomposed = self.icdm_reverse(tape, p, msr_hat, cover_hat)?;
        let secrets = recomposed
            .iter()
            .map(|&x| self.enhance(tape, p, x))
            .collect::<Result<_>>()?;
        Ok(RevealGraph {
            cover_hat,
            msr_hat,
            recomposed,
            secrets,
        })
    }

    /// Hides `secrets` in `cover`. `seed` drives the training-mode noise.
    pub fn hide(&self, cover: &Tensor<T>, secrets: &[Tensor<T>], mode: QuantMode, seed: u64) -> Result<StegoOutput<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let c = tape.constant(cover.clone());
        let s: Vec<Var> = secrets.iter().map(|s| tape.constant(s.clone())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = self.hide_graph(&mut tape, &p, c, &s, mode, &mut rng)?;
        Ok(StegoOutput {
            stego: tape.value(g.stego).clone(),
            r_h: tape.value(g.r_h).clone(),
            msr: tape.value(g.msr).clone(),
        })
    }

    /// Recovers cover and secrets from a stego image and a mosaic-shaped `z`.
    pub fn reveal(&self, stego: &Tensor<T>, z: &Tensor<T>) -> Result<Revealed<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let s = tape.constant(stego.clone());
        let z = tape.constant(z.clone());
        let g = self.reveal_graph(&mut tape, &p, s, z)?;
        Ok(Revealed {
            cover_hat: tape.value(g.cover_hat).clone(),
            msr_hat: tape.value(g.msr_hat).clone(),
            secrets: g.secrets.iter().map(|&v| tape.value(v).clone()).collect(),
        })
    }

    /// Recovery with a freshly sampled standard normal `z`.
    pub fn reveal_sampled(&self, stego: &Tensor<T>, seed: u64) -> Result<Revealed<T>> {
        let z = sample_z(&self.msr_shape(stego.shape())?, seed);
        self.reveal(stego, &z)
    }

    /// Output of the secret selection stack alone.
    pub fn selected(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let v = tape.constant(x.clone());
        let out = self.select(&mut tape, &p, v)?;
        Ok(tape.value(out).clone())
    }

    /// Euclidean norm of every parameter tensor, for diagnostics.
    pub fn weight_norms(&self) -> Vec<(String, f64)> {
        self.params.iter().map(|(n, t)| (n.to_string(), t.norm_l2())).collect()
    }
}
