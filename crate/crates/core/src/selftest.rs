//! Fast invariant suite behind `smilenet selftest`.
//!
//! Each check runs the real code paths on small random inputs and reports
//! the worst error it saw against a fixed threshold.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::error::Result;
use crate::gradcheck::check_gradients;
use crate::io::{checkpoint_bytes, checkpoint_from_bytes, CheckpointMeta};
use crate::metrics::{cd_curve, nmi, psnr_from_rmse, rmse, CdRecord};
use crate::mosaic::{grid_shape, split, splice};
use crate::orthoconv::{cayley, decompose, orthogonality_defect, recompose};
use crate::params::Bound;
use crate::pipeline::{quantize_tensor, sample_z_with, NetConfig, QuantMode, SmileNet};
use crate::tensor::{Scalar, Tensor};
use crate::training::{item_losses, loss_aux_value, loss_hide_value, loss_sec_value, LossWeights};
use crate::wavelet::{dwt_haar, idwt_haar};

/// Outcome of one invariant.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{} {}: {}", tag, self.name, self.detail)
    }
}

fn bounded(name: &'static str, value: Result<f64>, limit: f64) -> Check {
    match value {
        Ok(v) => Check {
            name,
            passed: v.is_finite() && v < limit,
            detail: format!("max error {:.3e} (limit {:.0e})", v, limit),
        },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {}", e),
        },
    }
}

fn exact(name: &'static str, value: Result<bool>, what: &str) -> Check {
    match value {
        Ok(ok) => Check {
            name,
            passed: ok,
            detail: if ok { what.to_string() } else { format!("violated: {}", what) },
        },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {}", e),
        },
    }
}

fn uniform<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(0.0..1.0)))
}

fn small_config(n: usize, width: usize) -> NetConfig {
    NetConfig {
        n_secrets: n,
        channels: 3,
        width,
        r_blocks: 2,
        g_blocks: 2,
        sis_layers: 2,
    }
}

/// Runs every check.
pub fn run_all() -> Vec<Check> {
    vec![
        bounded("haar reconstruction", haar_errors(20, 1).map(|e| e.0), 1e-6),
        bounded("haar energy", haar_errors(20, 1).map(|e| e.1), 1e-5),
        bounded("cayley orthogonality", cayley_errors(20, 2).map(|e| e.0), 1e-5),
        bounded("decompose round trip", cayley_errors(20, 2).map(|e| e.1), 1e-6),
        exact("mosaic grid", mosaic_grid_matches(64), "grid matches enumeration for N in 1..=64"),
        exact("mosaic bijection", mosaic_bijective(36, 3), "split inverts splice for N in 1..=36"),
        bounded("round trip f32", round_trip_error::<f32>(&[1, 4, 9], 4), 1e-3),
        bounded("round trip f64", round_trip_error::<f64>(&[1, 4, 9], 5), 1e-7),
        exact("zero-init transparency", zero_init_transparent(6), "stego equals the quantized cover"),
        bounded("primitive gradients", primitive_gradients(7), 1e-3),
        bounded("network gradients", network_gradients(8), 1e-3),
        exact("metric oracles", metric_oracles(9), "nmi(x,x)=1, psnr/rmse agree, identity point is (0,N)"),
        bounded("loss weights", loss_weight_error(), 1e-6),
        exact("quantization", quantization_rule(), "round half away from zero on the 1/255 grid"),
        exact("checkpoint", checkpoint_round_trip(10), "bytes reload into an identical network"),
    ]
}

/// Worst `(reconstruction, relative energy)` error of the Haar transform.
pub fn haar_errors(count: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rec, mut energy) = (0.0f64, 0.0f64);
    for _ in 0..count {
        let c = rng.random_range(1..5);
        let h = 2 * rng.random_range(1..9);
        let w = 2 * rng.random_range(1..9);
        let x: Tensor<f64> = Tensor::from_fn(&[c, h, w], |_| rng.random_range(-1.0..1.0));
        let y = dwt_haar(&x)?;
        rec = rec.max(idwt_haar(&y)?.max_abs_diff(&x)?);
        let (ex, ey) = (x.norm_l2().powi(2), y.norm_l2().powi(2));
        energy = energy.max((ex - ey).abs() / ex.max(f64::MIN_POSITIVE));
    }
    Ok((rec, energy))
}

/// Worst `(‖KᵀK − I‖∞, decompose/recompose)` error over random `Θ`.
pub fn cayley_errors(count: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grids = [(2, 2), (3, 3), (4, 4), (5, 5)];
    let (mut orth, mut rt) = (0.0f64, 0.0f64);
    for i in 0..count {
        let (m, n) = grids[i % grids.len()];
        let mn = m * n;
        let theta: Tensor<f64> = Tensor::from_fn(&[mn, mn], |_| rng.random_range(-1.0..1.0));
        let k = cayley(&theta)?;
        orth = orth.max(orthogonality_defect(&k));
        let x: Tensor<f64> = Tensor::from_fn(&[3, m * 2, n * 3], |_| rng.random_range(0.0..1.0));
        let d = decompose(&x, &k, (m, n))?;
        rt = rt.max(recompose(&d, &k, (m, n))?.max_abs_diff(&x)?);
    }
    Ok((orth, rt))
}

/// The grid an enumeration of all factor pairs picks for `n` secrets.
pub fn enumerated_grid(n: usize) -> (usize, usize) {
    let composite = |c: usize| c >= 4 && (2..c).any(|d| c % d == 0);
    let cells = if n == 1 || composite(n) {
        n
    } else {
        (n + 1..).find(|&c| composite(c)).unwrap()
    };
    (1..=cells)
        .filter(|r| cells % r == 0)
        .map(|r| (r, cells / r))
        .filter(|(r, c)| r <= c)
        .min_by_key(|(r, c)| c - r)
        .unwrap()
}

pub fn mosaic_grid_matches(max_n: usize) -> Result<bool> {
    for n in 1..=max_n {
        if grid_shape(n)?.grid() != enumerated_grid(n) {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn mosaic_bijective(max_n: usize, seed: u64) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for n in 1..=max_n {
        let layout = grid_shape(n)?;
        let tiles: Vec<Tensor<f32>> = (0..n).map(|_| uniform(&[2, 3, 2], &mut rng)).collect();
        let refs: Vec<&Tensor<f32>> = tiles.iter().collect();
        let m = splice(&refs, &layout)?;
        if split(&m, &layout)? != tiles {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Worst oracle-mode round-trip error of randomly weighted networks.
///
/// Quantization is off and the hiding residual is fed back as the auxiliary
/// input, so the cover and the pre-enhancement secrets must come back.
pub fn round_trip_error<T: Scalar>(ns: &[usize], seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for (i, &n) in ns.iter().enumerate() {
        let s = seed * 100 + i as u64;
        let mut net = SmileNet::<T>::new(small_config(n, 8), s)?;
        net.randomize(s + 1, 0.1);
        worst = worst.max(oracle_error(&net, 24, s + 2)?);
    }
    Ok(worst)
}

/// Oracle-mode round-trip error of one network on random `size×size` images.
pub fn oracle_error<T: Scalar>(net: &SmileNet<T>, size: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cover = uniform::<T>(&[3, size, size], &mut rng);
    let secrets: Vec<Tensor<T>> = (0..net.config.n_secrets)
        .map(|_| uniform(&[3, size, size], &mut rng))
        .collect();
    let out = net.hide(&cover, &secrets, QuantMode::Off, 0)?;
    let mut tape = crate::Tape::new();
    let p = net.params.bind(&mut tape, false);
    let st = tape.constant(out.stego.clone());
    let z = tape.constant(out.r_h.clone());
    let g = net.reveal_graph(&mut tape, &p, st, z)?;
    let mut worst = tape.value(g.cover_hat).max_abs_diff(&cover)?;
    worst = worst.max(tape.value(g.msr_hat).max_abs_diff(&out.msr)?);
    for (v, s) in g.recomposed.iter().zip(&secrets) {
        worst = worst.max(tape.value(*v).max_abs_diff(&net.selected(s)?)?);
    }
    Ok(worst)
}

pub fn zero_init_transparent(seed: u64) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = SmileNet::<f32>::new(small_config(4, 8), seed)?;
    let cover = uniform::<f32>(&[3, 16, 16], &mut rng);
    let secrets: Vec<Tensor<f32>> = (0..4).map(|_| uniform(&[3, 16, 16], &mut rng)).collect();
    let out = net.hide(&cover, &secrets, QuantMode::Eval, 0)?;
    Ok(out.stego == quantize_tensor(&cover, QuantMode::Eval, 0))
}

/// Worst relative gradient error over a chain of every tape primitive.
pub fn primitive_gradients(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| -> Tensor<f64> { Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)) };
    let inputs = vec![r(&[2, 4, 4]), r(&[3, 2, 3, 3]), r(&[3]), r(&[4, 4]), r(&[3, 4, 4])];
    let layout = grid_shape(3)?;
    let report = check_gradients(&inputs, 1e-6, 24, |tp, v| {
        let c = tp.conv2d(v[0], v[1], Some(v[2]), (1, 1), (1, 1))?;
        let c = tp.leaky_relu(c, 0.2);
        let k = tp.cayley(v[3])?;
        let d = tp.decompose(c, k, (2, 2))?;
        let d = tp.recompose(d, k, (2, 2))?;
        let w = tp.dwt(d)?;
        let w = tp.exp_bounded(w, 2.0);
        let i = tp.idwt(w)?;
        let both = tp.concat_channels(&[i, v[4]])?;
        let (a, b) = tp.split_channels(both, 3)?;
        let ma = tp.mul(a, b)?;
        let lo = tp.low_band(ma)?;
        let pooled = tp.avg_pool(ma, 2, 2)?;
        let tiles = tp.split_mosaic(ma, &layout)?;
        let spliced = tp.splice(&tiles, &layout)?;
        let spliced = tp.square(spliced);
        let diff = tp.squared_distance(lo, pooled)?;
        let l1 = tp.l1_distance(tiles[0], tiles[1])?;
        let s = tp.sum(spliced);
        let t = tp.add(diff, l1)?;
        tp.add(t, s)
    })?;
    Ok(report.max_rel_err)
}

/// Worst relative gradient error of the total loss of a micro network.
pub fn network_gradients(seed: u64) -> Result<f64> {
    let config = NetConfig {
        n_secrets: 4,
        channels: 3,
        width: 4,
        r_blocks: 1,
        g_blocks: 1,
        sis_layers: 2,
    };
    let mut net = SmileNet::<f64>::new(config, seed)?;
    net.randomize(seed + 1, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let cover = uniform::<f64>(&[3, 8, 8], &mut rng);
    let secrets: Vec<Tensor<f64>> = (0..4).map(|_| uniform(&[3, 8, 8], &mut rng)).collect();
    let z = sample_z_with::<f64, _>(&[12, 8, 8], &mut rng);
    let w = LossWeights::default();
    let report = check_gradients(net.params.tensors(), 1e-6, 3, |tape, vars| {
        let p = Bound::from_vars(vars.to_vec());
        let c = tape.constant(cover.clone());
        let s: Vec<Var> = secrets.iter().map(|x| tape.constant(x.clone())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(item_losses(&net, tape, &p, c, &s, &z, QuantMode::Off, &mut rng, &w)?.total)
    })?;
    Ok(report.max_rel_err)
}

pub fn metric_oracles(seed: u64) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform::<f64>(&[3, 16, 16], &mut rng);
    let y = uniform::<f64>(&[3, 16, 16], &mut rng);
    let self_info = nmi(&x, &x)? == 1.0;
    let e = rmse(&x, &y)?;
    let consistent = (crate::metrics::psnr(&x, &y)? - psnr_from_rmse(e)).abs() < 1e-9;
    let n = 4;
    let secrets: Vec<Tensor<f64>> = (0..n).map(|_| uniform(&[3, 16, 16], &mut rng)).collect();
    let record = CdRecord {
        cover: x.clone(),
        stego: x.clone(),
        secrets: secrets.clone(),
        recovered: secrets,
    };
    let points = cd_curve(&[record])?;
    let identity = points.len() == 1 && points[0].distortion == 0.0 && points[0].capacity == n as f64;
    Ok(self_info && consistent && identity)
}

/// Worst deviation of the default-weighted losses from hand-computed values.
pub fn loss_weight_error() -> Result<f64> {
    let w = LossWeights::default();
    let eps = 0.01;
    let t1 = |v: f64| Tensor::<f64>::full(&[1, 1, 1], v);
    let cover = Tensor::<f64>::zeros(&[1, 2, 2]);
    let stego = Tensor::<f64>::full(&[1, 2, 2], eps);
    let hide = loss_hide_value(&cover, &stego, &w)? - 44.0 * eps * eps;
    let sec = loss_sec_value(&[t1(0.2), t1(0.0)], &[t1(0.5), t1(0.7)])? - 1.0;
    let msr = Tensor::<f64>::zeros(&[12, 2, 2]);
    let mut unit = msr.clone();
    unit.data_mut()[3] = 1.0;
    let c3 = Tensor::<f64>::zeros(&[3, 2, 2]);
    let mut c3_unit = c3.clone();
    c3_unit.data_mut()[0] = 1.0;
    let ms = loss_aux_value(&msr, &unit, &c3, &c3, &w)? - 8.0;
    let rc = loss_aux_value(&msr, &msr, &c3, &c3_unit, &w)? - 3.0;
    Ok([hide, sec, ms, rc].iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

pub fn quantization_rule() -> Result<bool> {
    let x = Tensor::<f64>::from_vec(&[1, 1, 4], vec![-0.1, 1.3, 0.5, 0.4])?;
    let q = quantize_tensor(&x, QuantMode::Eval, 0);
    let want = [0.0, 1.0, 128.0 / 255.0, 102.0 / 255.0];
    Ok(q.data().iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12))
}

pub fn checkpoint_round_trip(seed: u64) -> Result<bool> {
    let mut net = SmileNet::<f32>::new(small_config(3, 8), seed)?;
    net.randomize(seed + 1, 0.1);
    let meta = CheckpointMeta { seed, iteration: 7 };
    let bytes = checkpoint_bytes(&net, meta);
    let (back, meta2) = checkpoint_from_bytes(&bytes, std::path::Path::new("<memory>"))?;
    Ok(meta2 == meta && back.config == net.config && back.params.tensors() == net.params.tensors())
}
