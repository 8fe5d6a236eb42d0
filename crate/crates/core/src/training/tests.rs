use super::*;
use crate::gradcheck::check_gradients;

fn t1(v: f64) -> Tensor<f64> {
    Tensor::full(&[1, 1, 1], v)
}

#[test]
fn loss_sec_examples() {
    let a = vec![Tensor::<f64>::from_fn(&[3, 2, 2], |i| i as f64 / 12.0)];
    assert_eq!(loss_sec_value(&a, &a).unwrap(), 0.0);
    assert!((loss_sec_value(&[t1(0.2)], &[t1(0.5)]).unwrap() - 0.3).abs() < 1e-12);
    let v = loss_sec_value(&[t1(0.2), t1(0.0)], &[t1(0.5), t1(0.7)]).unwrap();
    assert!((v - 1.0).abs() < 1e-12);
    assert!(matches!(loss_sec_value(&[t1(0.2)], &[]), Err(Error::Contract(_))));
}

#[test]
fn loss_hide_examples() {
    let w = LossWeights::default();
    let eps = 0.01;
    let cover = Tensor::<f64>::zeros(&[1, 2, 2]);
    let stego = Tensor::<f64>::full(&[1, 2, 2], eps);
    assert_eq!(loss_hide_value(&cover, &cover, &w).unwrap(), 0.0);
    let v = loss_hide_value(&cover, &stego, &w).unwrap();
    assert!((v - 44.0 * eps * eps).abs() < 1e-12);
    let x = Tensor::<f64>::from_fn(&[3, 4, 4], |i| (i as f64 * 0.37).sin());
    let y = Tensor::<f64>::from_fn(&[3, 4, 4], |i| (i as f64 * 0.11).cos());
    let d = y.zip_map(&x, |a, b| b + 2.0 * (a - b)).unwrap();
    let base = loss_hide_value(&x, &y, &w).unwrap();
    assert!((loss_hide_value(&x, &d, &w).unwrap() - 4.0 * base).abs() < 1e-9 * base);
    let odd = Tensor::<f64>::zeros(&[1, 3, 2]);
    assert!(matches!(loss_hide_value(&odd, &odd, &w), Err(Error::Dimension(_))));
}

#[test]
fn loss_aux_examples() {
    let w = LossWeights::default();
    let msr = Tensor::<f64>::zeros(&[12, 4, 4]);
    let cover = Tensor::<f64>::zeros(&[3, 4, 4]);
    let mut unit_msr = msr.clone();
    unit_msr.data_mut()[5] = 1.0;
    let mut unit_cover = cover.clone();
    unit_cover.data_mut()[0] = 0.6;
    unit_cover.data_mut()[1] = 0.8;
    assert_eq!(loss_aux_value(&msr, &msr, &cover, &cover, &w).unwrap(), 0.0);
    assert!((loss_aux_value(&msr, &unit_msr, &cover, &cover, &w).unwrap() - 8.0).abs() < 1e-12);
    assert!((loss_aux_value(&msr, &msr, &cover, &unit_cover, &w).unwrap() - 3.0).abs() < 1e-12);
    assert!(matches!(
        loss_aux_value(&msr, &cover, &cover, &cover, &w),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn loss_total_sums_components() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::scalar(0.0));
    let t = loss_total(&mut tape, z, z, z).unwrap();
    assert_eq!(tape.value(t).item(), 0.0);
    let (a, b, c) = (
        tape.constant(Tensor::scalar(1.0)),
        tape.constant(Tensor::scalar(2.0)),
        tape.constant(Tensor::scalar(3.0)),
    );
    let t = loss_total(&mut tape, a, b, c).unwrap();
    assert_eq!(tape.value(t).item(), 6.0);
}

fn micro_config(n: usize) -> NetConfig {
    NetConfig {
        n_secrets: n,
        channels: 3,
        width: 4,
        r_blocks: 1,
        g_blocks: 1,
        sis_layers: 2,
    }
}

#[test]
fn loss_total_gradients_match_finite_differences() {
    let mut net = SmileNet::<f64>::new(micro_config(4), 3).unwrap();
    net.randomize(4, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cover = Tensor::<f64>::from_fn(&[3, 8, 8], |_| rng.random_range(0.0..1.0));
    let secrets: Vec<Tensor<f64>> = (0..4)
        .map(|_| Tensor::from_fn(&[3, 8, 8], |_| rng.random_range(0.0..1.0)))
        .collect();
    let z = sample_z_with::<f64, _>(&[12, 8, 8], &mut rng);
    let w = LossWeights::default();
    let report = check_gradients(net.params.tensors(), 1e-6, 6, |tape, vars| {
        let p = Bound::from_vars(vars.to_vec());
        let c = tape.constant(cover.clone());
        let s: Vec<Var> = secrets.iter().map(|x| tape.constant(x.clone())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = item_losses(&net, tape, &p, c, &s, &z, QuantMode::Off, &mut rng, &w)?;
        Ok(l.total)
    })
    .unwrap();
    assert!(report.checked > 100);
    assert!(report.max_rel_err < 1e-3, "max rel err {}", report.max_rel_err);
}

fn tiny_train_config(n: usize) -> TrainConfig {
    TrainConfig {
        net: NetConfig {
            n_secrets: n,
            channels: 3,
            width: 8,
            r_blocks: 2,
            g_blocks: 2,
            sis_layers: 2,
        },
        patch: 16,
        batch_size: 2,
        lr: 1e-3,
        iters: 3,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn zero_init_constant_images_smoke() {
    let cfg = tiny_train_config(4);
    let data = vec![ImageTensor::full(&[3, 16, 16], 0.5); 5];
    let mut tr = Trainer::new(cfg, data).unwrap();
    let s = tr.step().unwrap();
    assert!(s.total.is_finite() && s.grad_norm.is_finite());
    assert!(tr.net.params.tensors().iter().all(|t| t.is_finite()));
}

#[test]
fn training_is_reproducible_across_thread_counts() {
    let data = synthetic_images(6, 24, 24, 1);
    let run = |threads: usize| {
        let mut tr = Trainer::new(tiny_train_config(4), data.clone()).unwrap();
        tr.set_threads(threads);
        let losses: Vec<f64> = (0..3).map(|_| tr.step().unwrap().total).collect();
        (losses, tr.net.params.tensors()[0].clone())
    };
    let (a, pa) = run(1);
    let (b, pb) = run(1);
    let (c, pc) = run(2);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(pa, pb);
    assert_eq!(pa, pc);
}

#[test]
fn toy_run_reduces_loss() {
    let mut cfg = tiny_train_config(4);
    cfg.net.g_blocks = 4;
    cfg.patch = 32;
    cfg.batch_size = 1;
    cfg.lr = TrainConfig::default().lr;
    cfg.iters = 500;
    let data = synthetic_images(4, 32, 32, 2);
    let mut tr = Trainer::new(cfg, data).unwrap();
    tr.set_threads(1);
    let hist: Vec<f64> = (0..500).map(|_| tr.step().unwrap().total).collect();
    let first = hist[..10].iter().sum::<f64>() / 10.0;
    let last = hist[490..].iter().sum::<f64>() / 10.0;
    assert!(last < 0.4 * first, "first {first}, last {last}");
}

#[test]
fn nan_weights_abort_with_diagnostics() {
    let cfg = tiny_train_config(1);
    let mut tr = Trainer::new(cfg, synthetic_images(2, 16, 16, 3)).unwrap();
    let id = tr.net.params.find("sis.conv0.w").unwrap();
    tr.net.params.get_mut(id).data_mut()[0] = f32::NAN;
    match tr.step() {
        Err(Error::Numerical(msg)) => {
            assert!(msg.contains("L_sec") && msg.contains("weight norms"), "{msg}");
        }
        other => panic!("expected numerical error, got {:?}", other.map(|s| s.total)),
    }
}

#[test]
fn schedule_and_config_validation() {
    let lr = 10f64.powf(-4.5);
    assert_eq!(step_lr(lr, 200_000, 100_000), lr / 4.0);
    let mut cfg = tiny_train_config(9);
    cfg.patch = 16;
    assert!(matches!(cfg.validate(), Err(Error::Dimension(_))));
    cfg.patch = 24;
    assert!(cfg.validate().is_ok());
    cfg.weights.lambda_h = -1.0;
    assert!(cfg.validate().is_err());
}

#[test]
fn train_writes_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_train_config(1);
    cfg.iters = 4;
    cfg.ckpt_every = 2;
    cfg.out_dir = Some(dir.path().to_path_buf());
    let report = train(&cfg).unwrap();
    assert_eq!(report.history.len(), 4);
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("iteration,lr,L_sec,L_hide,L_aux,total"));
    assert_eq!(lines.count(), 4);
    for name in ["ckpt_000002.smln", "ckpt_000004.smln", "final.smln"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let (net, meta) = crate::io::load_checkpoint(&dir.path().join("final.smln")).unwrap();
    assert_eq!(meta.iteration, 4);
    assert_eq!(net.params.tensors(), report.net.params.tensors());
}

#[test]
fn synthetic_images_are_quantized_and_varied() {
    let imgs = synthetic_images(3, 16, 16, 4);
    for img in &imgs {
        assert!(img.data().iter().all(|v| ((*v as f64 * 255.0) - (*v as f64 * 255.0).round()).abs() < 1e-3));
    }
    assert_ne!(imgs[0], imgs[1]);
    assert_eq!(synthetic_images(3, 16, 16, 4), imgs);
}
