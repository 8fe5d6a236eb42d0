//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage errors (including a secret count
//! that does not match the checkpoint), 1 for every other failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::io::{load_checkpoint, load_image, load_tensor, read_config, save_image, save_tensor};
use crate::metrics::{cd_curve, fmt_metric, mae, psnr, rmse, ssim, write_cd_csv, CdRecord};
use crate::pipeline::{sample_z, QuantMode};
use crate::tensor::ImageTensor;

const AFTER_HELP: &str = "\
CSV formats:
  train log        iteration,lr,L_sec,L_hide,L_aux,total
  eval --pairs     header reference,test; one image pair per row
  cd-curve manifest header cover,stego,secrets,recovered; the secret and
                   recovered lists are ';'-separated paths in matching order
  cd-curve output  N,D_rmse,C_nmi_sum,per_image_nmi (';'-separated)
Relative paths inside a CSV are resolved against the CSV's directory.

Environment:
  SMILE_THREADS    maximum number of worker threads used for training";

#[derive(Parser, Debug)]
#[command(name = "smilenet", version, about = "Hide several secret images in one cover image", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the built-in invariant suite.
    Selftest,
    /// Train a network from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Hide secrets in a cover image.
    Hide {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        cover: PathBuf,
        #[arg(long = "secret", required = true, num_args = 1..)]
        secrets: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the hiding residual for exact recovery checks.
        #[arg(long)]
        save_aux: Option<PathBuf>,
    },
    /// Recover the cover and secrets from a stego image.
    Reveal {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        stego: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Seed of the sampled auxiliary input.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use a saved hiding residual instead of a sampled input.
        #[arg(long)]
        aux: Option<PathBuf>,
    },
    /// Print PSNR/SSIM/RMSE/MAE for image pairs.
    Eval {
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Compute capacity-distortion points for hiding results.
    CdCurve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("smilenet: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => 2,
        _ => 1,
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Selftest => {
            let checks = crate::selftest::run_all();
            let mut ok = true;
            for c in &checks {
                println!("{}", c);
                ok &= c.passed;
            }
            println!("{} of {} checks passed", checks.iter().filter(|c| c.passed).count(), checks.len());
            Ok(if ok { 0 } else { 1 })
        }
        Command::Train { config } => {
            let cfg = read_config(&config)?;
            let report = crate::training::train(&cfg)?;
            if let Some(last) = report.history.last() {
                println!(
                    "trained {} iterations: L_sec={:.4} L_hide={:.4} L_aux={:.4} total={:.4}",
                    last.iteration, last.l_sec, last.l_hide, last.l_aux, last.total
                );
            }
            if let Some(dir) = &cfg.out_dir {
                println!("checkpoint: {}", dir.join("final.smln").display());
            }
            Ok(0)
        }
        Command::Hide {
            ckpt,
            cover,
            secrets,
            out,
            save_aux,
        } => {
            let (net, _) = load_checkpoint(&ckpt)?;
            if secrets.len() != net.config.n_secrets {
                return Err(Error::Usage(format!(
                    "checkpoint hides {} secrets but {} were given",
                    net.config.n_secrets,
                    secrets.len()
                )));
            }
            let cover = load_image(&cover)?;
            let secrets = secrets.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
            let res = net.hide(&cover, &secrets, QuantMode::Eval, 0)?;
            save_image(&res.stego, &out)?;
            if let Some(aux) = save_aux {
                save_tensor(&res.r_h, &aux)?;
            }
            Ok(0)
        }
        Command::Reveal {
            ckpt,
            stego,
            out_dir,
            seed,
            aux,
        } => {
            let (net, _) = load_checkpoint(&ckpt)?;
            let stego = load_image(&stego)?;
            let z = match aux {
                Some(p) => load_tensor(&p)?,
                None => sample_z(&net.msr_shape(stego.shape())?, seed),
            };
            let rev = net.reveal(&stego, &z)?;
            std::fs::create_dir_all(&out_dir)?;
            let clamp = |t: &ImageTensor| t.map(|v| v.clamp(0.0, 1.0));
            save_image(&clamp(&rev.cover_hat), &out_dir.join("cover_hat.png"))?;
            for (i, s) in rev.secrets.iter().enumerate() {
                save_image(&clamp(s), &out_dir.join(format!("secret_{:03}.png", i)))?;
            }
            Ok(0)
        }
        Command::Eval { pairs } => {
            let rows = read_csv(&pairs, &["reference", "test"])?;
            println!("reference\ttest\tpsnr\tssim\trmse\tmae");
            for row in rows {
                let a = load_image(&row[0])?;
                let b = load_image(&row[1])?;
                println!(
                    "{}\t{}\tpsnr={}\tssim={}\trmse={}\tmae={}",
                    row[0].display(),
                    row[1].display(),
                    fmt_metric(psnr(&a, &b)?),
                    fmt_metric(ssim(&a, &b)?),
                    fmt_metric(rmse(&a, &b)?),
                    fmt_metric(mae(&a, &b)?)
                );
            }
            Ok(0)
        }
        Command::CdCurve { manifest, out } => {
            let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
            let mut reader = csv_reader(&manifest)?;
            check_headers(&mut reader, &manifest, &["cover", "stego", "secrets", "recovered"])?;
            let mut records = Vec::new();
            for rec in reader.records() {
                let rec = rec.map_err(|e| csv_error(&manifest, e))?;
                let list = |s: &str| -> Result<Vec<ImageTensor>> {
                    s.split(';')
                        .filter(|p| !p.trim().is_empty())
                        .map(|p| load_image(&base.join(p.trim())))
                        .collect()
                };
                let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
                records.push(CdRecord {
                    cover: load_image(&base.join(field(0)))?,
                    stego: load_image(&base.join(field(1)))?,
                    secrets: list(&field(2))?,
                    recovered: list(&field(3))?,
                });
            }
            let points = cd_curve(&records)?;
            write_cd_csv(&points, std::fs::File::create(&out)?)?;
            for p in &points {
                println!("N={} D={:.4} C={:.4}", p.n, p.distortion, p.capacity);
            }
            Ok(0)
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {}", path.display(), e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path)?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn check_headers(reader: &mut csv::Reader<std::fs::File>, path: &Path, expected: &[&str]) -> Result<()> {
    let headers = reader.headers().map_err(|e| csv_error(path, e))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::Format(format!(
            "{}: expected header {}, got {}",
            path.display(),
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

/// Reads rows of paths resolved against the CSV's directory.
fn read_csv(path: &Path, expected: &[&str]) -> Result<Vec<Vec<PathBuf>>> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv_reader(path)?;
    check_headers(&mut reader, path, expected)?;
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| csv_error(path, e))?;
            Ok(r.iter().map(|f| base.join(f)).collect())
        })
        .collect()
}
