//! Image quality measures and the capacity-distortion evaluation.
//!
//! All pixel metrics work on the 0–255 scale; tensors hold `[0, 1]` values.

use std::io::Write;

use crate::error::{contract_err, dim_err, Result};
use crate::tensor::{Scalar, Tensor};

fn check_same<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return dim_err(format!("metric shape mismatch: {:?} vs {:?}", a.shape(), b.shape()));
    }
    if a.is_empty() {
        return dim_err("metric on empty image");
    }
    Ok(())
}

pub fn rmse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_same(a, b)?;
    let sq: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = (x.f64() - y.f64()) * 255.0;
            d * d
        })
        .sum();
    Ok((sq / a.len() as f64).sqrt())
}

pub fn mae<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_same(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| ((x.f64() - y.f64()) * 255.0).abs())
        .sum();
    Ok(s / a.len() as f64)
}

/// `20·log10(255 / rmse)`; `+∞` for identical images.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(psnr_from_rmse(rmse(a, b)?))
}

pub fn psnr_from_rmse(rmse: f64) -> f64 {
    if rmse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (255.0 / rmse).log10()
    }
}

/// Formats a metric value, writing `inf` for the infinite PSNR sentinel and
/// `0` for an exact zero.
pub fn fmt_metric(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:.6}")
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter over the valid region.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| win[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| win[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03 and dynamic range 255, averaged over channels and positions.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_same(a, b)?;
    let (c, h, w) = a.chw()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return contract_err(format!("SSIM needs at least 11×11 images, got {}×{}", h, w));
    }
    let win = gaussian_window();
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let x: Vec<f64> = a.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.f64() * 255.0).collect();
        let y: Vec<f64> = b.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.f64() * 255.0).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, my) = (filter_valid(&x, h, w, &win), filter_valid(&y, h, w, &win));
        let (sxx, syy, sxy) = (
            filter_valid(&xx, h, w, &win),
            filter_valid(&yy, h, w, &win),
            filter_valid(&xy, h, w, &win),
        );
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Histogram bins of the default mutual-information estimator.
pub const NMI_BINS: usize = 256;

/// Normalized mutual information `2I / (H_a + H_b)` with 256 bins.
pub fn nmi<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    nmi_with_bins(a, b, NMI_BINS)
}

fn level<T: Scalar>(v: T, bins: usize) -> usize {
    let l = (v.f64().clamp(0.0, 1.0) * 255.0).round() as usize;
    l * bins / 256
}

fn entropy(counts: &[u32], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Plug-in NMI over co-located pixels, per channel then averaged.
///
/// Pixels are quantized to 8 bits and then grouped into `bins` equal-width
/// bins (`bins` must divide 256). Two constant channels score 1; a constant
/// channel against a varying one scores 0.
pub fn nmi_with_bins<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, bins: usize) -> Result<f64> {
    check_same(a, b)?;
    if bins == 0 || 256 % bins != 0 {
        return contract_err(format!("histogram bins must divide 256, got {}", bins));
    }
    let (c, h, w) = match a.shape() {
        [c, h, w] => (*c, *h, *w),
        _ => (1, 1, a.len()),
    };
    let plane = h * w;
    let total = plane as f64;
    let mut acc = 0.0;
    let mut joint = vec![0u32; bins * bins];
    for ch in 0..c {
        joint.iter_mut().for_each(|v| *v = 0);
        let mut ha_counts = vec![0u32; bins];
        let mut hb_counts = vec![0u32; bins];
        for k in ch * plane..(ch + 1) * plane {
            let (la, lb) = (level(a.data()[k], bins), level(b.data()[k], bins));
            joint[la * bins + lb] += 1;
            ha_counts[la] += 1;
            hb_counts[lb] += 1;
        }
        let ha = entropy(&ha_counts, total);
        let hb = entropy(&hb_counts, total);
        let hab = entropy(&joint, total);
        let value = match (ha == 0.0, hb == 0.0) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ => (2.0 * (ha + hb - hab) / (ha + hb)).clamp(0.0, 1.0),
        };
        acc += value;
    }
    Ok(acc / c as f64)
}

/// One point of the empirical capacity-distortion curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CdPoint {
    pub n: usize,
    /// Mean cover/stego RMSE on the 0–255 scale.
    pub distortion: f64,
    /// Mean of `Σ_i NMI(s_i, ŝ_i)`.
    pub capacity: f64,
    /// Mean NMI per secret index.
    pub per_image: Vec<f64>,
    pub label: String,
}

/// One evaluated hiding/recovery instance.
#[derive(Clone, Debug)]
pub struct CdRecord<T> {
    pub cover: Tensor<T>,
    pub stego: Tensor<T>,
    pub secrets: Vec<Tensor<T>>,
    pub recovered: Vec<Tensor<T>>,
}

/// Evaluates records, averages them per secret count and sorts by distortion.
pub fn cd_curve<T: Scalar>(records: &[CdRecord<T>]) -> Result<Vec<CdPoint>> {
    if records.is_empty() {
        return contract_err("capacity-distortion curve needs at least one record");
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<(f64, Vec<f64>)>> = Default::default();
    for r in records {
        if r.secrets.len() != r.recovered.len() || r.secrets.is_empty() {
            return contract_err(format!(
                "record has {} secrets and {} recovered images",
                r.secrets.len(),
                r.recovered.len()
            ));
        }
        let d = rmse(&r.cover, &r.stego)?;
        let per = r
            .secrets
            .iter()
            .zip(&r.recovered)
            .map(|(s, h)| nmi(s, h))
            .collect::<Result<Vec<_>>>()?;
        groups.entry(r.secrets.len()).or_default().push((d, per));
    }
    let mut points: Vec<CdPoint> = groups
        .into_iter()
        .map(|(n, rows)| {
            let k = rows.len() as f64;
            let distortion = rows.iter().map(|r| r.0).sum::<f64>() / k;
            let per_image: Vec<f64> = (0..n).map(|i| rows.iter().map(|r| r.1[i]).sum::<f64>() / k).collect();
            let capacity = rows.iter().map(|r| r.1.iter().sum::<f64>()).sum::<f64>() / k;
            CdPoint {
                n,
                distortion,
                capacity,
                per_image,
                label: format!("N={n}"),
            }
        })
        .collect();
    points.sort_by(|a, b| a.distortion.total_cmp(&b.distortion));
    Ok(points)
}

/// Writes `N,D_rmse,C_nmi_sum,per_image_nmi` rows; the per-image list is
/// `;`-separated.
pub fn write_cd_csv<W: Write>(points: &[CdPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "N,D_rmse,C_nmi_sum,per_image_nmi")?;
    for p in points {
        let per: Vec<String> = p.per_image.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(out, "{},{:.6},{:.6},{}", p.n, p.distortion, p.capacity, per.join(";"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(shape: &[usize], seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn pixel_metric_examples() {
        let a = Tensor::<f32>::zeros(&[3, 4, 4]);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(fmt_metric(rmse(&a, &a).unwrap()), "0");
        assert_eq!(fmt_metric(1.5), "1.500000");
        assert_eq!(fmt_metric(psnr(&a, &a).unwrap()), "inf");
        let b = Tensor::<f32>::ones(&[3, 4, 4]);
        assert!((rmse(&a, &b).unwrap() - 255.0).abs() < 1e-9);
        assert!((mae(&a, &b).unwrap() - 255.0).abs() < 1e-9);
        assert!(psnr(&a, &b).unwrap().abs() < 1e-9);
        let c = Tensor::<f64>::full(&[1, 2, 2], 51.0 / 255.0);
        let z = Tensor::<f64>::zeros(&[1, 2, 2]);
        assert!((rmse(&z, &c).unwrap() - 51.0).abs() < 1e-9);
        assert!((psnr(&z, &c).unwrap() - 13.979400086720377).abs() < 1e-9);
        assert!(rmse(&a, &Tensor::zeros(&[3, 4, 5])).is_err());
    }

    #[test]
    fn ssim_properties() {
        let x = noise(&[3, 16, 16], 1);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let y = noise(&[3, 16, 16], 2);
        assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-9);
        let bin = Tensor::<f32>::from_fn(&[1, 16, 16], |i| if (i / 16 + i % 16) % 3 == 0 { 1.0 } else { 0.0 });
        let inv = bin.map(|v| 1.0 - v);
        assert!(ssim(&bin, &inv).unwrap() < 0.0);
        assert!(matches!(
            ssim(&Tensor::<f32>::zeros(&[1, 10, 16]), &Tensor::zeros(&[1, 10, 16])),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn nmi_identity_and_bijection() {
        let x = noise(&[3, 32, 32], 3);
        assert!((nmi(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let y = noise(&[3, 32, 32], 4);
        let yr = y.map(|v| 1.0 - v);
        assert!((nmi(&x, &y).unwrap() - nmi(&x, &yr).unwrap()).abs() < 1e-9);
        assert!((nmi(&x, &y).unwrap() - nmi(&y, &x).unwrap()).abs() < 1e-9);
        let v = nmi(&x, &y).unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn nmi_constant_conventions() {
        let c = Tensor::<f32>::full(&[1, 8, 8], 0.5);
        let x = noise(&[1, 8, 8], 5);
        assert_eq!(nmi(&c, &c).unwrap(), 1.0);
        assert_eq!(nmi(&c, &x).unwrap(), 0.0);
        assert_eq!(nmi(&x, &c).unwrap(), 0.0);
    }

    #[test]
    fn nmi_independence_small_images() {
        // 64×64 leaves too few samples per cell for 256 bins; 32 bins keep the
        // plug-in bias (≈ (B-1)²/2n nats) well under the threshold.
        let x = noise(&[1, 64, 64], 6);
        let y = noise(&[1, 64, 64], 7);
        assert!(nmi_with_bins(&x, &y, 32).unwrap() < 0.05);
        assert!((nmi_with_bins(&x, &x, 32).unwrap() - 1.0).abs() < 1e-12);
        let yr = y.map(|v| 1.0 - v);
        assert!((nmi_with_bins(&x, &y, 32).unwrap() - nmi_with_bins(&x, &yr, 32).unwrap()).abs() < 1e-9);
        assert!(nmi_with_bins(&x, &y, 3).is_err());
    }

    #[test]
    fn nmi_independence_full_bins() {
        let x = noise(&[1, 512, 512], 8);
        let y = noise(&[1, 512, 512], 9);
        assert!(nmi(&x, &y).unwrap() < 0.05);
    }

    #[test]
    fn cd_curve_identity_and_noise() {
        let cover = noise(&[3, 16, 16], 10);
        let secrets: Vec<_> = (0..4).map(|i| noise(&[3, 16, 16], 11 + i)).collect();
        let rec = CdRecord {
            cover: cover.clone(),
            stego: cover.clone(),
            secrets: secrets.clone(),
            recovered: secrets.clone(),
        };
        let pts = cd_curve(&[rec]).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!((pts[0].distortion, pts[0].capacity), (0.0, 4.0));

        let big: Vec<_> = (0..2).map(|i| noise(&[1, 512, 512], 20 + i)).collect();
        let other: Vec<_> = (0..2).map(|i| noise(&[1, 512, 512], 30 + i)).collect();
        let rec = CdRecord {
            cover: big[0].clone(),
            stego: big[0].clone(),
            secrets: big.clone(),
            recovered: other,
        };
        let pts = cd_curve(&[rec]).unwrap();
        assert!(pts[0].capacity < 0.05 * 2.0);
        assert!(cd_curve::<f32>(&[]).is_err());
    }

    #[test]
    fn cd_curve_sorted_by_distortion() {
        let cover = noise(&[1, 16, 16], 40);
        let mk = |n: usize, shift: f32| CdRecord {
            cover: cover.clone(),
            stego: cover.map(|v| (v + shift).min(1.0)),
            secrets: (0..n).map(|i| noise(&[1, 16, 16], 50 + i as u64)).collect(),
            recovered: (0..n).map(|i| noise(&[1, 16, 16], 50 + i as u64)).collect(),
        };
        let pts = cd_curve(&[mk(4, 0.2), mk(1, 0.01), mk(9, 0.1)]).unwrap();
        assert!(pts.windows(2).all(|w| w[0].distortion <= w[1].distortion));
        assert_eq!(pts.iter().map(|p| p.n).collect::<Vec<_>>(), vec![1, 9, 4]);
        let mut buf = Vec::new();
        write_cd_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("N,D_rmse,C_nmi_sum,per_image_nmi\n1,"));
    }
}
