//! Binary checkpoint and tensor sidecar formats.
//!
//! Checkpoint layout, all integers little-endian:
//!
//! ```text
//! "SMLN" | u32 version
//! u32 N | u32 K | u32 width | u32 R | u32 G | u32 L | u32 rows | u32 cols
//! u64 seed | u64 iteration | u32 tensor count
//! per tensor: u32 name length | UTF-8 name | u32 rank | u32 dims... | f32 data...
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::pipeline::{NetConfig, SmileNet};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SMLN";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const TENSOR_MAGIC: &[u8; 4] = b"SMLT";

/// Training provenance stored next to the weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub iteration: u64,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err(format!("unexpected end of data at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> std::result::Result<Tensor<f32>, String> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(format!("implausible tensor rank {}", rank));
        }
        let dims = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let count: usize = dims.iter().product();
        let bytes = self.take(count.checked_mul(4).ok_or("tensor too large")?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Tensor::from_vec(&dims, data).map_err(|e| e.to_string())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor<f32>) {
    put_u32(out, t.shape().len());
    for &d in t.shape() {
        put_u32(out, d);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn checkpoint_bytes(net: &SmileNet<f32>, meta: CheckpointMeta) -> Vec<u8> {
    let c = &net.config;
    let mut out = Vec::with_capacity(64 + 4 * net.params.numel());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize);
    for v in [c.n_secrets, c.channels, c.width, c.r_blocks, c.g_blocks, c.sis_layers, net.layout.rows, net.layout.cols] {
        put_u32(&mut out, v);
    }
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out.extend_from_slice(&meta.iteration.to_le_bytes());
    put_u32(&mut out, net.params.len());
    for (name, t) in net.params.iter() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_tensor(&mut out, t);
    }
    out
}

/// Parses checkpoint bytes; `path` is only used in error messages.
pub fn checkpoint_from_bytes(bytes: &[u8], path: &Path) -> Result<(SmileNet<f32>, CheckpointMeta)> {
    let decode = |msg: String| Error::Decode {
        path: path.to_path_buf(),
        msg,
    };
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(decode)? != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{}: not a checkpoint (bad magic)", path.display())));
    }
    let version = r.u32().map_err(decode)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {}",
            path.display(),
            version
        )));
    }
    let mut f = [0usize; 8];
    for v in f.iter_mut() {
        *v = r.u32().map_err(decode)? as usize;
    }
    let config = NetConfig {
        n_secrets: f[0],
        channels: f[1],
        width: f[2],
        r_blocks: f[3],
        g_blocks: f[4],
        sis_layers: f[5],
    };
    let meta = CheckpointMeta {
        seed: r.u64().map_err(decode)?,
        iteration: r.u64().map_err(decode)?,
    };
    let skeleton = SmileNet::<f32>::new(config, 0)?;
    if (skeleton.layout.rows, skeleton.layout.cols) != (f[6], f[7]) {
        return Err(Error::Format(format!(
            "{}: layout {}×{} does not match N={}",
            path.display(),
            f[6],
            f[7],
            f[0]
        )));
    }
    let count = r.u32().map_err(decode)? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = r.u32().map_err(decode)? as usize;
        let name = std::str::from_utf8(r.take(len).map_err(decode)?)
            .map_err(|e| decode(e.to_string()))?
            .to_string();
        let t = r.tensor().map_err(decode)?;
        params.add(name, t);
    }
    if r.pos != bytes.len() {
        return Err(decode(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let net = skeleton.with_params(params)?;
    Ok((net, meta))
}

pub fn save_checkpoint(net: &SmileNet<f32>, meta: CheckpointMeta, path: &Path) -> Result<()> {
    std::fs::File::create(path)?.write_all(&checkpoint_bytes(net, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(SmileNet<f32>, CheckpointMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes, path)
}

/// Writes one tensor as `"SMLT" | u32 rank | u32 dims... | f32 data...`.
pub fn save_tensor(t: &Tensor<f32>, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    put_tensor(&mut out, t);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path)?;
    let decode = |msg: String| Error::Decode {
        path: path.to_path_buf(),
        msg,
    };
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(4).map_err(decode)? != TENSOR_MAGIC {
        return Err(Error::Format(format!("{}: not a tensor file", path.display())));
    }
    let t = r.tensor().map_err(decode)?;
    if r.pos != bytes.len() {
        return Err(decode(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> SmileNet<f32> {
        let mut net = SmileNet::new(
            NetConfig {
                n_secrets: 3,
                channels: 3,
                width: 4,
                r_blocks: 1,
                g_blocks: 2,
                sis_layers: 2,
            },
            5,
        )
        .unwrap();
        net.randomize(6, 0.3);
        net
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = net();
        let meta = CheckpointMeta { seed: 42, iteration: 17 };
        let bytes = checkpoint_bytes(&net, meta);
        assert_eq!(&bytes[..4], b"SMLN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let (back, m) = checkpoint_from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(m, meta);
        assert_eq!(back.config, net.config);
        for ((n0, t0), (n1, t1)) in net.params.iter().zip(back.params.iter()) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            assert!(t0.data().iter().zip(t1.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert_eq!(checkpoint_bytes(&back, m), bytes);
    }

    #[test]
    fn rejects_bad_inputs() {
        let bytes = checkpoint_bytes(&net(), CheckpointMeta::default());
        let p = Path::new("ck");
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(checkpoint_from_bytes(&v2, p), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(checkpoint_from_bytes(&bad, p), Err(Error::Format(_))));
        assert!(matches!(
            checkpoint_from_bytes(&bytes[..bytes.len() - 3], p),
            Err(Error::Decode { .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(checkpoint_from_bytes(&extra, p).is_err());
    }

    #[test]
    fn tensor_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.bin");
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f32 * -0.37);
        save_tensor(&t, &p).unwrap();
        assert_eq!(load_tensor(&p).unwrap(), t);
    }
}
