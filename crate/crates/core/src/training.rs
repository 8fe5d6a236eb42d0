//! Losses, the optimization step and the training loop.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{contract_err, dim_err, Error, Result};
use crate::io::{checkpoint::CheckpointMeta, list_images, load_image, save_checkpoint};
use crate::metrics::{psnr, CdRecord};
use crate::mosaic::crop;
use crate::optim::{adam_step, clip_global_norm, step_lr, AdamState};
use crate::params::Bound;
use crate::pipeline::{quantize_tensor, sample_z_with, NetConfig, QuantMode, SmileNet};
use crate::tensor::{ImageTensor, Scalar, Tensor};

/// Global gradient norm above which gradients are rescaled.
pub const CLIP_NORM: f64 = 10.0;

/// Training images generated when no data directory is configured.
pub const SYNTHETIC_IMAGES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_h: f64,
    pub lambda_hl: f64,
    pub lambda_ms: f64,
    pub lambda_rc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_h: 10.0,
            lambda_hl: 1.0,
            lambda_ms: 8.0,
            lambda_rc: 3.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_h, self.lambda_hl, self.lambda_ms, self.lambda_rc];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return contract_err(format!("loss weights must be finite and non-negative: {:?}", self));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    /// Square patch side used for training crops.
    pub patch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub iters: u64,
    /// Learning rate halving period in iterations (0 keeps it constant).
    pub lr_half_every: u64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Directory of PNG/PPM training images; synthetic images when absent.
    pub data_dir: Option<PathBuf>,
    /// Destination of checkpoints and the CSV log; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint period in iterations (0 writes only the final checkpoint).
    pub ckpt_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            patch: 48,
            batch_size: 1,
            lr: 10f64.powf(-4.5),
            iters: 1000,
            lr_half_every: 100_000,
            seed: 0,
            weights: LossWeights::default(),
            data_dir: None,
            out_dir: None,
            ckpt_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let layout = crate::mosaic::grid_shape(self.net.n_secrets)?;
        let (m, n) = layout.grid();
        if self.patch == 0 || self.patch % (2 * m) != 0 || self.patch % (2 * n) != 0 {
            return dim_err(format!(
                "patch {} must be divisible by {} and {} for a {}×{} mosaic",
                self.patch,
                2 * m,
                2 * n,
                m,
                n
            ));
        }
        if self.batch_size == 0 {
            return contract_err("batch_size must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return contract_err(format!("learning rate must be positive, got {}", self.lr));
        }
        Ok(())
    }
}

/// `Σ_i ‖x_i − x̂_i‖₁`.
pub fn loss_sec<T: Scalar>(tape: &mut Tape<T>, secrets: &[Var], recovered: &[Var]) -> Result<Var> {
    if secrets.len() != recovered.len() || secrets.is_empty() {
        return contract_err(format!(
            "loss_sec needs equal non-empty lists, got {} and {}",
            secrets.len(),
            recovered.len()
        ));
    }
    let mut acc = tape.l1_distance(secrets[0], recovered[0])?;
    for (&s, &r) in secrets.iter().zip(recovered).skip(1) {
        let d = tape.l1_distance(s, r)?;
        acc = tape.add(acc, d)?;
    }
    Ok(acc)
}

/// `λ_h‖c − s‖² + λ_hl‖LL(c) − LL(s)‖²`.
pub fn loss_hide<T: Scalar>(tape: &mut Tape<T>, cover: Var, stego: Var, w: &LossWeights) -> Result<Var> {
    let spatial = tape.squared_distance(cover, stego)?;
    let lc = tape.low_band(cover)?;
    let ls = tape.low_band(stego)?;
    let low = tape.squared_distance(lc, ls)?;
    let a = tape.scale(spatial, w.lambda_h);
    let b = tape.scale(low, w.lambda_hl);
    tape.add(a, b)
}

/// `λ_ms‖x_ms − x̂_ms‖² + λ_rc‖x_c − x̂_c‖²`.
pub fn loss_aux<T: Scalar>(
    tape: &mut Tape<T>,
    msr: Var,
    msr_hat: Var,
    cover: Var,
    cover_hat: Var,
    w: &LossWeights,
) -> Result<Var> {
    let ms = tape.squared_distance(msr, msr_hat)?;
    let rc = tape.squared_distance(cover, cover_hat)?;
    let a = tape.scale(ms, w.lambda_ms);
    let b = tape.scale(rc, w.lambda_rc);
    tape.add(a, b)
}

pub fn loss_total<T: Scalar>(tape: &mut Tape<T>, sec: Var, hide: Var, aux: Var) -> Result<Var> {
    let s = tape.add(sec, hide)?;
    tape.add(s, aux)
}

fn eval_loss<T: Scalar>(f: impl FnOnce(&mut Tape<T>) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = f(&mut tape)?;
    Ok(tape.value(v).item().f64())
}

/// Tensor-level [`loss_sec`].
pub fn loss_sec_value<T: Scalar>(secrets: &[Tensor<T>], recovered: &[Tensor<T>]) -> Result<f64> {
    eval_loss(|t| {
        let s: Vec<Var> = secrets.iter().map(|x| t.constant(x.clone())).collect();
        let r: Vec<Var> = recovered.iter().map(|x| t.constant(x.clone())).collect();
        loss_sec(t, &s, &r)
    })
}

/// Tensor-level [`loss_hide`].
pub fn loss_hide_value<T: Scalar>(cover: &Tensor<T>, stego: &Tensor<T>, w: &LossWeights) -> Result<f64> {
    eval_loss(|t| {
        let c = t.constant(cover.clone());
        let s = t.constant(stego.clone());
        loss_hide(t, c, s, w)
    })
}

/// Tensor-level [`loss_aux`].
pub fn loss_aux_value<T: Scalar>(
    msr: &Tensor<T>,
    msr_hat: &Tensor<T>,
    cover: &Tensor<T>,
    cover_hat: &Tensor<T>,
    w: &LossWeights,
) -> Result<f64> {
    eval_loss(|t| {
        let a = t.constant(msr.clone());
        let b = t.constant(msr_hat.clone());
        let c = t.constant(cover.clone());
        let d = t.constant(cover_hat.clone());
        loss_aux(t, a, b, c, d, w)
    })
}

/// One training example: a cover and `N` secrets of the same shape.
#[derive(Clone, Debug)]
pub struct Item<T> {
    pub cover: Tensor<T>,
    pub secrets: Vec<Tensor<T>>,
}

/// Loss terms of one item.
#[derive(Clone, Copy, Debug)]
pub struct ItemLosses {
    pub sec: Var,
    pub hide: Var,
    pub aux: Var,
    pub total: Var,
}

/// Records hiding, both recovery passes and all losses for one item.
///
/// The auxiliary terms use the reverse pass fed with the hiding residual
/// `r_H`; the secret term uses the reverse pass fed with `z_sampled`. The
/// hiding term is measured on the stego before quantization.
#[allow(clippy::too_many_arguments)]
pub fn item_losses<T: Scalar, R: Rng>(
    net: &SmileNet<T>,
    tape: &mut Tape<T>,
    p: &Bound,
    cover: Var,
    secrets: &[Var],
    z_sampled: &Tensor<T>,
    mode: QuantMode,
    rng: &mut R,
    w: &LossWeights,
) -> Result<ItemLosses> {
    let hg = net.hide_graph(tape, p, cover, secrets, mode, rng)?;
    let r_h = tape.constant(tape.value(hg.r_h).clone());
    let (msr_hat, cover_hat) = net.imse_reverse(tape, p, hg.stego, r_h)?;
    let aux = loss_aux(tape, hg.msr, msr_hat, cover, cover_hat, w)?;
    let z = tape.constant(z_sampled.clone());
    let rg = net.reveal_graph(tape, p, hg.stego, z)?;
    let sec = loss_sec(tape, secrets, &rg.secrets)?;
    let hide = loss_hide(tape, cover, hg.stego_pre, w)?;
    let total = loss_total(tape, sec, hide, aux)?;
    Ok(ItemLosses { sec, hide, aux, total })
}

/// Batch-mean losses and diagnostics of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    /// 1-based index of the completed step.
    pub iteration: u64,
    pub lr: f64,
    pub l_sec: f64,
    pub l_hide: f64,
    pub l_aux: f64,
    pub total: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

struct ItemResult<T> {
    grads: Vec<Tensor<T>>,
    sec: f64,
    hide: f64,
    aux: f64,
    total: f64,
}

fn item_step<T: Scalar>(net: &SmileNet<T>, item: &Item<T>, seed: u64, w: &LossWeights) -> Result<ItemResult<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let p = net.params.bind(&mut tape, true);
    let cover = tape.constant(item.cover.clone());
    let secrets: Vec<Var> = item.secrets.iter().map(|s| tape.constant(s.clone())).collect();
    let z = sample_z_with(&net.msr_shape(item.cover.shape())?, &mut rng);
    let l = item_losses(net, &mut tape, &p, cover, &secrets, &z, QuantMode::Train, &mut rng, w)?;
    let value = |v: Var| tape.value(v).item().f64();
    let (sec, hide, aux, total) = (value(l.sec), value(l.hide), value(l.aux), value(l.total));
    if !total.is_finite() {
        return Ok(ItemResult {
            grads: Vec::new(),
            sec,
            hide,
            aux,
            total,
        });
    }
    tape.backward(l.total)?;
    let grads = p.vars().iter().map(|&v| tape.grad(v)).collect();
    Ok(ItemResult {
        grads,
        sec,
        hide,
        aux,
        total,
    })
}

/// Worker threads: `SMILE_THREADS` when set, else the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("SMILE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn item_seed(step_seed: u64, i: usize) -> u64 {
    step_seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn nan_diagnostic<T: Scalar>(net: &SmileNet<T>, sec: f64, hide: f64, aux: f64) -> Error {
    let mut norms = net.weight_norms();
    norms.sort_by(|a, b| b.1.total_cmp(&a.1));
    let top: Vec<String> = norms.iter().take(5).map(|(n, v)| format!("{n}={v:.4e}")).collect();
    Error::Numerical(format!(
        "non-finite loss (L_sec={sec}, L_hide={hide}, L_aux={aux}); largest weight norms: {}",
        top.join(", ")
    ))
}

/// One optimization step on `batch`: per-item graphs (spread over up to
/// `threads` workers), batch-mean gradients, clipping and an Adam update.
/// Results do not depend on `threads`.
pub fn train_step<T: Scalar>(
    net: &mut SmileNet<T>,
    batch: &[Item<T>],
    adam: &mut AdamState<T>,
    lr: f64,
    step_seed: u64,
    w: &LossWeights,
    threads: usize,
) -> Result<StepStats> {
    if batch.is_empty() {
        return contract_err("empty training batch");
    }
    let threads = threads.clamp(1, batch.len());
    let results: Vec<Result<ItemResult<T>>> = if threads == 1 {
        batch
            .iter()
            .enumerate()
            .map(|(i, it)| item_step(net, it, item_seed(step_seed, i), w))
            .collect()
    } else {
        let shared: &SmileNet<T> = net;
        let mut slots: Vec<Option<Result<ItemResult<T>>>> = (0..batch.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    s.spawn(move || {
                        (t..batch.len())
                            .step_by(threads)
                            .map(|i| (i, item_step(shared, &batch[i], item_seed(step_seed, i), w)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("training worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|r| r.expect("every item processed")).collect()
    };
    let scale = T::lit(1.0 / batch.len() as f64);
    let mut grads: Vec<Tensor<T>> = net.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut stats = StepStats {
        lr,
        ..Default::default()
    };
    let k = batch.len() as f64;
    for r in results {
        let r = r?;
        stats.l_sec += r.sec / k;
        stats.l_hide += r.hide / k;
        stats.l_aux += r.aux / k;
        stats.total += r.total / k;
        if !r.total.is_finite() {
            return Err(nan_diagnostic(net, r.sec, r.hide, r.aux));
        }
        for (acc, g) in grads.iter_mut().zip(&r.grads) {
            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + b * scale;
            }
        }
    }
    let mut grads: Vec<Option<Tensor<T>>> = grads.into_iter().map(Some).collect();
    stats.grad_norm = clip_global_norm(&mut grads, CLIP_NORM);
    if !stats.grad_norm.is_finite() {
        return Err(nan_diagnostic(net, stats.l_sec, stats.l_hide, stats.l_aux));
    }
    adam.lr = lr;
    adam_step(net.params.tensors_mut(), &grads, adam)?;
    Ok(stats)
}

/// Smooth random colour images quantized to 8 bits: a colour gradient,
/// a few soft blobs and a low-frequency texture.
pub fn synthetic_images(count: usize, h: usize, w: usize, seed: u64) -> Vec<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
            let grad: [(f64, f64); 3] = std::array::from_fn(|_| (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)));
            let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..4)
                .map(|_| {
                    (
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.05..0.25),
                        std::array::from_fn(|_| rng.random_range(-0.5..0.5)),
                    )
                })
                .collect();
            let (fx, fy, ph) = (rng.random_range(1.0..6.0), rng.random_range(1.0..6.0), rng.random_range(0.0..6.28));
            let amp: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.15));
            Tensor::from_fn(&[3, h, w], |i| {
                let c = i / (h * w);
                let y = ((i / w) % h) as f64 / h as f64;
                let x = (i % w) as f64 / w as f64;
                let mut v = base[c] + grad[c].0 * (x - 0.5) + grad[c].1 * (y - 0.5);
                for (bx, by, r, col) in &blobs {
                    let d2 = (x - bx).powi(2) + (y - by).powi(2);
                    v += col[c] * (-d2 / (2.0 * r * r)).exp();
                }
                v += amp[c] * (std::f64::consts::TAU * (fx * x + fy * y) + ph).sin();
                ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
            })
        })
        .collect()
}

/// Random `patch×patch` crop.
pub fn random_crop<R: Rng>(img: &ImageTensor, patch: usize, rng: &mut R) -> Result<ImageTensor> {
    let (_, h, w) = img.chw()?;
    if h < patch || w < patch {
        return dim_err(format!("image {}×{} is smaller than the {} patch", h, w, patch));
    }
    let top = rng.random_range(0..=h - patch);
    let left = rng.random_range(0..=w - patch);
    crop(img, top, left, patch, patch)
}

/// Owns the network, optimizer state and data of a training run.
pub struct Trainer {
    pub net: SmileNet<f32>,
    pub config: TrainConfig,
    pub adam: AdamState<f32>,
    pub iteration: u64,
    data: Vec<ImageTensor>,
    rng: ChaCha8Rng,
    threads: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: Vec<ImageTensor>) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return contract_err("no training images");
        }
        for img in &data {
            let (k, h, w) = img.chw()?;
            if k != config.net.channels || h < config.patch || w < config.patch {
                return dim_err(format!(
                    "training image {:?} must have {} channels and be at least {}×{}",
                    img.shape(),
                    config.net.channels,
                    config.patch,
                    config.patch
                ));
            }
        }
        let net = SmileNet::new(config.net.clone(), config.seed)?;
        let adam = AdamState::new(net.params.tensors(), config.lr);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_DA7A);
        Ok(Self {
            net,
            config,
            adam,
            iteration: 0,
            data,
            rng,
            threads: worker_threads(),
        })
    }

    pub fn set_threads(&mut self, threads: usize) {
        self.threads = threads.max(1);
    }

    /// Draws a batch; each item uses distinct images when enough exist.
    pub fn sample_batch(&mut self) -> Result<Vec<Item<f32>>> {
        let need = self.config.net.n_secrets + 1;
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let idx: Vec<usize> = if self.data.len() >= need {
                let mut all: Vec<usize> = (0..self.data.len()).collect();
                all.shuffle(&mut self.rng);
                all.truncate(need);
                all
            } else {
                (0..need).map(|_| self.rng.random_range(0..self.data.len())).collect()
            };
            let mut crops = idx
                .iter()
                .map(|&i| random_crop(&self.data[i], self.config.patch, &mut self.rng))
                .collect::<Result<Vec<_>>>()?;
            let cover = crops.remove(0);
            batch.push(Item { cover, secrets: crops });
        }
        Ok(batch)
    }

    pub fn step(&mut self) -> Result<StepStats> {
        let lr = step_lr(self.config.lr, self.iteration, self.config.lr_half_every);
        let batch = self.sample_batch()?;
        let step_seed: u64 = self.rng.random();
        let mut stats = train_step(
            &mut self.net,
            &batch,
            &mut self.adam,
            lr,
            step_seed,
            &self.config.weights,
            self.threads,
        )?;
        self.iteration += 1;
        stats.iteration = self.iteration;
        Ok(stats)
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            seed: self.config.seed,
            iteration: self.iteration,
        }
    }
}

/// Loads every image of `dir`, or generates the synthetic set.
pub fn load_training_data(config: &TrainConfig) -> Result<Vec<ImageTensor>> {
    match &config.data_dir {
        Some(dir) => {
            let files = list_images(dir)?;
            if files.is_empty() {
                return contract_err(format!("no PNG/PPM images in {}", dir.display()));
            }
            files.iter().map(|p| load_image(p)).collect()
        }
        None => {
            let side = config.patch * 2;
            Ok(synthetic_images(SYNTHETIC_IMAGES, side, side, config.seed ^ 0xDA7A))
        }
    }
}

/// Writes `iteration,lr,L_sec,L_hide,L_aux,total` rows.
pub struct TrainLog {
    writer: csv::Writer<std::fs::File>,
}

impl TrainLog {
    pub fn create(path: &Path) -> Result<Self> {
        let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
        writer
            .write_record(["iteration", "lr", "L_sec", "L_hide", "L_aux", "total"])
            .map_err(csv_err)?;
        Ok(Self { writer })
    }

    pub fn append(&mut self, s: &StepStats) -> Result<()> {
        self.writer
            .write_record([
                s.iteration.to_string(),
                format!("{:.6e}", s.lr),
                format!("{:.6}", s.l_sec),
                format!("{:.6}", s.l_hide),
                format!("{:.6}", s.l_aux),
                format!("{:.6}", s.total),
            ])
            .map_err(csv_err)?;
        self.writer.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{:?}", other)),
    }
}

/// Outcome of a full run.
pub struct TrainReport {
    pub net: SmileNet<f32>,
    pub history: Vec<StepStats>,
    pub meta: CheckpointMeta,
}

/// Runs the configured training; writes `train_log.csv`, periodic
/// `ckpt_<iteration>.smln` files and `final.smln` into `out_dir` if set.
pub fn train(config: &TrainConfig) -> Result<TrainReport> {
    let data = load_training_data(config)?;
    let mut trainer = Trainer::new(config.clone(), data)?;
    let mut log = match &config.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(TrainLog::create(&dir.join("train_log.csv"))?)
        }
        None => None,
    };
    let mut history = Vec::with_capacity(config.iters as usize);
    for _ in 0..config.iters {
        let stats = trainer.step()?;
        if let Some(log) = log.as_mut() {
            log.append(&stats)?;
        }
        if let (Some(dir), true) = (&config.out_dir, config.ckpt_every > 0) {
            if stats.iteration % config.ckpt_every == 0 {
                let path = dir.join(format!("ckpt_{:06}.smln", stats.iteration));
                save_checkpoint(&trainer.net, trainer.meta(), &path)?;
            }
        }
        history.push(stats);
    }
    if let Some(dir) = &config.out_dir {
        save_checkpoint(&trainer.net, trainer.meta(), &dir.join("final.smln"))?;
    }
    let meta = trainer.meta();
    Ok(TrainReport {
        net: trainer.net,
        history,
        meta,
    })
}

/// Held-out quality of a network.
#[derive(Clone, Debug)]
pub struct EvalReport {
    /// Mean cover/stego PSNR with eval-mode quantization.
    pub stego_psnr: f64,
    /// Mean secret PSNR when revealing with a sampled `z`.
    pub recovery_psnr: f64,
    pub records: Vec<CdRecord<f32>>,
}

/// Hides and reveals every item (sampled `z` from `seed`); recovered
/// secrets are clamped to `[0, 1]` as they would be when saved.
pub fn evaluate(net: &SmileNet<f32>, items: &[Item<f32>], seed: u64) -> Result<EvalReport> {
    if items.is_empty() {
        return contract_err("evaluation needs at least one item");
    }
    let mut stego_psnr = 0.0;
    let mut rec_psnr = 0.0;
    let mut count = 0usize;
    let mut records = Vec::with_capacity(items.len());
    for (i, it) in items.iter().enumerate() {
        let out = net.hide(&it.cover, &it.secrets, QuantMode::Eval, 0)?;
        let rev = net.reveal_sampled(&out.stego, seed.wrapping_add(i as u64))?;
        stego_psnr += psnr(&it.cover, &out.stego)?.min(100.0);
        let recovered: Vec<ImageTensor> = rev.secrets.iter().map(|s| s.map(|v| v.clamp(0.0, 1.0))).collect();
        for (s, r) in it.secrets.iter().zip(&recovered) {
            rec_psnr += psnr(s, r)?.min(100.0);
            count += 1;
        }
        records.push(CdRecord {
            cover: it.cover.clone(),
            stego: out.stego,
            secrets: it.secrets.clone(),
            recovered,
        });
    }
    Ok(EvalReport {
        stego_psnr: stego_psnr / items.len() as f64,
        recovery_psnr: rec_psnr / count as f64,
        records,
    })
}

/// Deterministic evaluation items cut from `images`: item `i` uses image `i`
/// as cover and the following `N` images as secrets.
pub fn make_items(images: &[ImageTensor], n_secrets: usize, count: usize, patch: usize) -> Result<Vec<Item<f32>>> {
    if images.is_empty() {
        return contract_err("no images");
    }
    (0..count)
        .map(|i| {
            let pick = |k: usize| crop(&images[k % images.len()], 0, 0, patch, patch);
            Ok(Item {
                cover: quantize_tensor(&pick(i)?, QuantMode::Eval, 0),
                secrets: (1..=n_secrets).map(|j| pick(i + j)).collect::<Result<_>>()?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
