use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use smilenet::io::{load_image, save_checkpoint, save_image, CheckpointMeta};
use smilenet::{ImageTensor, NetConfig, SmileNet};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smilenet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn image(seed: u32, size: usize) -> ImageTensor {
    ImageTensor::from_fn(&[3, size, size], |i| ((i as u32 * 37 + seed * 101) % 256) as f32 / 255.0)
}

fn tiny(n: usize) -> NetConfig {
    NetConfig {
        n_secrets: n,
        channels: 3,
        width: 4,
        r_blocks: 1,
        g_blocks: 1,
        sis_layers: 1,
    }
}

/// Writes a checkpoint, a cover and `n` secrets into `dir`.
fn fixture(dir: &Path, n: usize, randomized: bool) -> (PathBuf, PathBuf, Vec<PathBuf>) {
    let mut net = SmileNet::<f32>::new(tiny(n), 1).unwrap();
    if randomized {
        net.randomize(2, 0.1);
    }
    let ckpt = dir.join("net.smln");
    save_checkpoint(&net, CheckpointMeta::default(), &ckpt).unwrap();
    let cover = dir.join("cover.png");
    save_image(&image(0, 16), &cover).unwrap();
    let secrets: Vec<PathBuf> = (0..n)
        .map(|i| {
            let p = dir.join(format!("s{i}.png"));
            save_image(&image(i as u32 + 1, 16), &p).unwrap();
            p
        })
        .collect();
    (ckpt, cover, secrets)
}

fn hide_args<'a>(ckpt: &'a str, cover: &'a str, secrets: &'a [String], out: &'a str) -> Vec<&'a str> {
    let mut a = vec!["hide", "--ckpt", ckpt, "--cover", cover, "--secret"];
    a.extend(secrets.iter().map(String::as_str));
    a.extend(["--out", out]);
    a
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn selftest_passes() {
    let o = run(&["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn help_documents_csv_columns() {
    let o = run(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for col in ["reference,test", "cover,stego,secrets,recovered", "N,D_rmse,C_nmi_sum,per_image_nmi", "SMILE_THREADS"] {
        assert!(text.contains(col), "help lacks {col}");
    }
}

#[test]
fn zero_init_hide_reveal_with_aux_recovers_secrets() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, cover, secrets) = fixture(dir.path(), 4, false);
    let secret_args: Vec<String> = secrets.iter().map(|p| s(p)).collect();
    let stego = dir.path().join("stego.png");
    let aux = dir.path().join("r.smlt");
    let (ckpt_s, cover_s, stego_s, aux_s) = (s(&ckpt), s(&cover), s(&stego), s(&aux));
    let mut args = hide_args(&ckpt_s, &cover_s, &secret_args, &stego_s);
    args.extend(["--save-aux", &aux_s]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(load_image(&stego).unwrap(), load_image(&cover).unwrap());

    let out = dir.path().join("out");
    let o = run(&["reveal", "--ckpt", &s(&ckpt), "--stego", &s(&stego), "--out-dir", &s(&out), "--aux", &aux_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    for (i, p) in secrets.iter().enumerate() {
        let got = load_image(&out.join(format!("secret_{i:03}.png"))).unwrap();
        assert!(got.max_abs_diff(&load_image(p).unwrap()).unwrap() <= 0.5 / 255.0 + 1e-6);
    }
    assert!(out.join("cover_hat.png").exists());
}

#[test]
fn secret_count_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, cover, secrets) = fixture(dir.path(), 4, false);
    let secret_args: Vec<String> = secrets[..3].iter().map(|p| s(p)).collect();
    let stego = s(&dir.path().join("stego.png"));
    let o = run(&hide_args(&s(&ckpt), &s(&cover), &secret_args, &stego));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("4 secrets"), "{err}");
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, cover, secrets) = fixture(dir.path(), 4, true);
    let secret_args: Vec<String> = secrets.iter().map(|p| s(p)).collect();
    let mut stegos = Vec::new();
    let mut reveals = Vec::new();
    for k in 0..2 {
        let stego = dir.path().join(format!("stego{k}.png"));
        assert!(run(&hide_args(&s(&ckpt), &s(&cover), &secret_args, &s(&stego))).status.success());
        stegos.push(fs::read(&stego).unwrap());
        let out = dir.path().join(format!("out{k}"));
        let o = run(&["reveal", "--ckpt", &s(&ckpt), "--stego", &s(&stego), "--out-dir", &s(&out), "--seed", "5"]);
        assert!(o.status.success(), "{}", stderr(&o));
        reveals.push(fs::read(out.join("secret_002.png")).unwrap());
    }
    assert_eq!(stegos[0], stegos[1]);
    assert_eq!(reveals[0], reveals[1]);
}

#[test]
fn eval_identical_pair_prints_inf() {
    let dir = tempfile::tempdir().unwrap();
    save_image(&image(3, 16), &dir.path().join("a.png")).unwrap();
    save_image(&image(4, 16), &dir.path().join("b.png")).unwrap();
    let pairs = dir.path().join("pairs.csv");
    fs::write(&pairs, "reference,test\na.png,a.png\na.png,b.png\n").unwrap();
    let o = run(&["eval", "--pairs", &s(&pairs)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    let fields: Vec<&str> = rows[0].split('\t').collect();
    assert!(fields.contains(&"psnr=inf") && fields.contains(&"rmse=0") && fields.contains(&"mae=0"), "{}", rows[0]);
    assert!(!rows[1].contains("psnr=inf"));
}

#[test]
fn cd_curve_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    for (i, name) in ["c.png", "s0.png", "s1.png", "n0.png", "n1.png"].iter().enumerate() {
        save_image(&image(i as u32 * 7, 16), &dir.path().join(name)).unwrap();
    }
    let manifest = dir.path().join("runs.csv");
    fs::write(
        &manifest,
        "cover,stego,secrets,recovered\nc.png,c.png,s0.png;s1.png,s0.png;s1.png\nc.png,n0.png,s0.png,n1.png\n",
    )
    .unwrap();
    let out = dir.path().join("curve.csv");
    let o = run(&["cd-curve", "--manifest", &s(&manifest), "--out", &s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "N,D_rmse,C_nmi_sum,per_image_nmi");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,0.000000,2.000000,1.000000;1.000000"), "{}", lines[1]);
}

#[test]
fn contract_violations_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, cover, secrets) = fixture(dir.path(), 1, false);
    let junk = dir.path().join("junk.png");
    fs::write(&junk, b"not an image").unwrap();
    let bad_ckpt = dir.path().join("bad.smln");
    fs::write(&bad_ckpt, b"SMLNxxxx").unwrap();
    let missing = s(&dir.path().join("missing.png"));
    let out = s(&dir.path().join("o.png"));
    let odd = dir.path().join("odd.png");
    save_image(&image(1, 15), &odd).unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["hide".into(), "--ckpt".into(), s(&ckpt), "--cover".into(), missing.clone(), "--secret".into(), s(&secrets[0]), "--out".into(), out.clone()],
        vec!["hide".into(), "--ckpt".into(), s(&ckpt), "--cover".into(), s(&junk), "--secret".into(), s(&secrets[0]), "--out".into(), out.clone()],
        vec!["hide".into(), "--ckpt".into(), s(&bad_ckpt), "--cover".into(), s(&cover), "--secret".into(), s(&secrets[0]), "--out".into(), out.clone()],
        vec!["hide".into(), "--ckpt".into(), s(&ckpt), "--cover".into(), s(&odd), "--secret".into(), s(&odd), "--out".into(), out.clone()],
        vec!["reveal".into(), "--ckpt".into(), s(&ckpt), "--stego".into(), s(&cover), "--out-dir".into(), s(dir.path()), "--aux".into(), s(&junk)],
        vec!["eval".into(), "--pairs".into(), s(&dir.path().join("none.csv"))],
        vec!["train".into(), "--config".into(), s(&junk)],
    ];
    for args in cases {
        let a: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = run(&a);
        assert_eq!(o.status.code(), Some(1), "{:?}: {}", a, stderr(&o));
        let err = stderr(&o);
        assert_eq!(err.trim_end().lines().count(), 1, "{:?}: {}", a, err);
        assert!(err.starts_with("smilenet: "), "{err}");
    }
    let o = run(&["hide", "--ckpt", &s(&ckpt)]);
    assert_eq!(o.status.code(), Some(2));
}

fn train_in(dir: &Path, threads: &str) -> Vec<u8> {
    let out = dir.join(format!("run{threads}"));
    let cfg = dir.join("t.cfg");
    fs::write(
        &cfg,
        format!(
            "n_secrets = 2\npatch = 16\nwidth = 4\nr_blocks = 1\ng_blocks = 1\nsis_layers = 1\niters = 3\nbatch_size = 2\nseed = 5\nout_dir = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let o = bin()
        .args(["train", "--config", &s(&cfg)])
        .env("SMILE_THREADS", threads)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "iteration,lr,L_sec,L_hide,L_aux,total");
    assert_eq!(log.lines().count(), 4);
    fs::read(out.join("final.smln")).unwrap()
}

#[test]
fn training_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(train_in(dir.path(), "1"), train_in(dir.path(), "2"));
}
