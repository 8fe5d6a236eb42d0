//! Single-level orthonormal 2-D Haar transform.
//!
//! Each source channel `c` produces four output channels `4c..4c+4` in the
//! order LL, LH, HL, HH. For a 2×2 block `[a b; c d]`:
//!
//! ```text
//! LL = (a + b + c + d) / 2     LH = (a + b - c - d) / 2
//! HL = (a - b + c - d) / 2     HH = (a - b - c + d) / 2
//! ```
//!
//! The map is orthogonal, so its inverse equals its transpose and the
//! gradient of either direction is the other direction applied to the
//! incoming gradient.

use crate::error::{dim_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Forward transform: `C×H×W` to `4C×H/2×W/2`.
pub fn dwt_haar<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return dim_err(format!("Haar transform needs even spatial dims, got {}×{}", h, w));
    }
    let (oh, ow) = (h / 2, w / 2);
    let half = T::lit(0.5);
    let xd = x.data();
    let mut out = vec![T::zero(); x.len()];
    let plane = oh * ow;
    for ch in 0..c {
        let src = &xd[ch * h * w..(ch + 1) * h * w];
        let base = 4 * ch * plane;
        for i in 0..oh {
            for j in 0..ow {
                let a = src[2 * i * w + 2 * j];
                let b = src[2 * i * w + 2 * j + 1];
                let cc = src[(2 * i + 1) * w + 2 * j];
                let d = src[(2 * i + 1) * w + 2 * j + 1];
                let o = i * ow + j;
                out[base + o] = (a + b + cc + d) * half;
                out[base + plane + o] = (a + b - cc - d) * half;
                out[base + 2 * plane + o] = (a - b + cc - d) * half;
                out[base + 3 * plane + o] = (a - b - cc + d) * half;
            }
        }
    }
    Tensor::from_vec(&[4 * c, oh, ow], out)
}

/// Inverse transform: `4C×h×w` to `C×2h×2w`.
pub fn idwt_haar<T: Scalar>(s: &Tensor<T>) -> Result<Tensor<T>> {
    let (c4, oh, ow) = s.chw()?;
    if c4 % 4 != 0 {
        return dim_err(format!(
            "inverse Haar transform needs a channel count divisible by 4, got {}",
            c4
        ));
    }
    let c = c4 / 4;
    let (h, w) = (2 * oh, 2 * ow);
    let half = T::lit(0.5);
    let sd = s.data();
    let plane = oh * ow;
    let mut out = vec![T::zero(); s.len()];
    for ch in 0..c {
        let base = 4 * ch * plane;
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let o = i * ow + j;
                let ll = sd[base + o];
                let lh = sd[base + plane + o];
                let hl = sd[base + 2 * plane + o];
                let hh = sd[base + 3 * plane + o];
                dst[2 * i * w + 2 * j] = (ll + lh + hl + hh) * half;
                dst[2 * i * w + 2 * j + 1] = (ll + lh - hl - hh) * half;
                dst[(2 * i + 1) * w + 2 * j] = (ll - lh + hl - hh) * half;
                dst[(2 * i + 1) * w + 2 * j + 1] = (ll - lh - hl + hh) * half;
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

/// The LL subband of every source channel, `C×H/2×W/2`.
pub fn low_band<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = dwt_haar(x)?;
    let (c4, oh, ow) = s.chw()?;
    let plane = oh * ow;
    let mut out = Vec::with_capacity(c4 / 4 * plane);
    for ch in 0..c4 / 4 {
        out.extend_from_slice(&s.data()[4 * ch * plane..(4 * ch + 1) * plane]);
    }
    Tensor::from_vec(&[c4 / 4, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn constant_image_has_only_low_band() {
        let x = Tensor::<f64>::full(&[1, 4, 6], 0.3);
        let s = dwt_haar(&x).unwrap();
        assert_eq!(s.shape(), &[4, 2, 3]);
        for (i, v) in s.data().iter().enumerate() {
            let expected = if i < 6 { 0.6 } else { 0.0 };
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn single_block_subbands() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = dwt_haar(&x).unwrap();
        assert_eq!(s.data(), &[5.0, -2.0, -1.0, 0.0]);
    }

    #[test]
    fn odd_dims_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 3, 4]);
        assert!(matches!(dwt_haar(&x), Err(crate::Error::Dimension(_))));
        let s = Tensor::<f32>::zeros(&[3, 2, 2]);
        assert!(matches!(idwt_haar(&s), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn inverse_of_constant_low_band() {
        let s = Tensor::<f64>::from_vec(&[4, 1, 1], vec![2.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(idwt_haar(&s).unwrap().data(), &[1.0; 4]);
        let z = Tensor::<f64>::zeros(&[8, 3, 3]);
        assert!(idwt_haar(&z).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_energy_and_linearity() {
        let x = random(&[3, 8, 8], 1);
        let y = random(&[3, 8, 8], 2);
        let s = dwt_haar(&x).unwrap();
        assert!((s.norm_l2() - x.norm_l2()).abs() < 1e-5);
        assert!(idwt_haar(&s).unwrap().max_abs_diff(&x).unwrap() < 1e-6);
        let back = dwt_haar(&idwt_haar(&s).unwrap()).unwrap();
        assert!(back.max_abs_diff(&s).unwrap() < 1e-6);

        let (a, b) = (0.7, -1.3);
        let combo = x.zip_map(&y, |p, q| a * p + b * q).unwrap();
        let lhs = dwt_haar(&combo).unwrap();
        let sy = dwt_haar(&y).unwrap();
        let rhs = s.zip_map(&sy, |p, q| a * p + b * q).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-6);
    }

    #[test]
    fn low_band_matches_first_subband() {
        let x = random(&[2, 4, 4], 3);
        let ll = low_band(&x).unwrap();
        let s = dwt_haar(&x).unwrap();
        assert_eq!(&ll.data()[..4], &s.data()[..4]);
        assert_eq!(&ll.data()[4..], &s.data()[16..20]);
    }
}
