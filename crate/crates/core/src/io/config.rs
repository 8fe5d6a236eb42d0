//! Flat `key = value` training configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys and
//! malformed values are rejected with their line number.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Every accepted key.
pub const CONFIG_KEYS: &[&str] = &[
    "n_secrets",
    "patch",
    "width",
    "r_blocks",
    "g_blocks",
    "sis_layers",
    "lr",
    "iters",
    "lr_half_every",
    "seed",
    "lambda_h",
    "lambda_hl",
    "lambda_ms",
    "lambda_rc",
    "data_dir",
    "out_dir",
    "batch_size",
    "ckpt_every",
];

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        msg: format!("invalid value {:?} for {}", value, key),
    })
}

/// Parses configuration text on top of [`TrainConfig::default`].
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let (key, value) = s.split_once('=').ok_or_else(|| Error::Config {
            line,
            msg: format!("expected key=value, got {:?}", s),
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "n_secrets" => c.net.n_secrets = parse(line, key, value)?,
            "patch" => c.patch = parse(line, key, value)?,
            "width" => c.net.width = parse(line, key, value)?,
            "r_blocks" => c.net.r_blocks = parse(line, key, value)?,
            "g_blocks" => c.net.g_blocks = parse(line, key, value)?,
            "sis_layers" => c.net.sis_layers = parse(line, key, value)?,
            "lr" => c.lr = parse(line, key, value)?,
            "iters" => c.iters = parse(line, key, value)?,
            "lr_half_every" => c.lr_half_every = parse(line, key, value)?,
            "seed" => c.seed = parse(line, key, value)?,
            "lambda_h" => c.weights.lambda_h = parse(line, key, value)?,
            "lambda_hl" => c.weights.lambda_hl = parse(line, key, value)?,
            "lambda_ms" => c.weights.lambda_ms = parse(line, key, value)?,
            "lambda_rc" => c.weights.lambda_rc = parse(line, key, value)?,
            "data_dir" => c.data_dir = Some(PathBuf::from(value)),
            "out_dir" => c.out_dir = Some(PathBuf::from(value)),
            "batch_size" => c.batch_size = parse(line, key, value)?,
            "ckpt_every" => c.ckpt_every = parse(line, key, value)?,
            _ => {
                return Err(Error::Config {
                    line,
                    msg: format!("unknown key {:?}", key),
                })
            }
        }
    }
    c.validate()?;
    Ok(c)
}

pub fn read_config(path: &Path) -> Result<TrainConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}
