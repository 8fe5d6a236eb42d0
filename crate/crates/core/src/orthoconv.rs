//! Cayley-parameterized orthogonal kernels and the invertible strided
//! decomposition they drive.
//!
//! `K = (I - A)(I + A)^-1` with `A = Θ - Θᵀ` is special orthogonal for every
//! real `Θ`. Decomposition applies `K` to every non-overlapping `m×n` patch of
//! each image channel (patch flattened row-major), producing `mn` output
//! channels per source channel; recomposition applies `Kᵀ` and scatters the
//! patches back.

use crate::error::{dim_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
/// `a` is `n×n`, `b` is `n×k`, both row-major.
pub fn solve<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize) -> Result<Vec<T>> {
    let mut a = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                a[i * n + col]
                    .abs()
                    .partial_cmp(&a[j * n + col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(col);
        if a[pivot * n + col] == T::zero() {
            return Err(crate::Error::Numerical("singular matrix in linear solve".into()));
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            for j in 0..k {
                x.swap(col * k + j, pivot * k + j);
            }
        }
        let inv = T::one() / a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] * inv;
            if f == T::zero() {
                continue;
            }
            for j in col..n {
                a[row * n + j] = a[row * n + j] - f * a[col * n + j];
            }
            for j in 0..k {
                x[row * k + j] = x[row * k + j] - f * x[col * k + j];
            }
        }
    }
    for col in (0..n).rev() {
        let inv = T::one() / a[col * n + col];
        for j in 0..k {
            let mut acc = x[col * k + j];
            for r in col + 1..n {
                acc = acc - a[col * n + r] * x[r * k + j];
            }
            x[col * k + j] = acc * inv;
        }
    }
    Ok(x)
}

fn square_dim<T: Scalar>(theta: &Tensor<T>) -> Result<usize> {
    match theta.shape() {
        [r, c] if r == c => Ok(*r),
        s => dim_err(format!("skew parameter must be square, got {:?}", s)),
    }
}

/// Skew part `Θ - Θᵀ` plus `sign·I`.
fn shifted_skew<T: Scalar>(theta: &[T], n: usize, sign: T) -> Vec<T> {
    let mut m = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = theta[i * n + j] - theta[j * n + i];
        }
        m[i * n + i] = m[i * n + i] + sign;
    }
    m
}

/// Orthogonal kernel from an unconstrained square parameter.
pub fn cayley<T: Scalar>(theta: &Tensor<T>) -> Result<Tensor<T>> {
    let n = square_dim(theta)?;
    let plus = shifted_skew(theta.data(), n, T::one());
    // I - A = -(A - I)
    let minus: Vec<T> = shifted_skew(theta.data(), n, -T::one())
        .into_iter()
        .map(|v| -v)
        .collect();
    // (I + A) and (I - A) commute, so (I - A)(I + A)^-1 = (I + A)^-1 (I - A).
    let k = solve(&plus, &minus, n, n)?;
    Tensor::from_vec(&[n, n], k)
}

/// Gradient of a scalar with respect to `Θ` given `∂L/∂K`.
///
/// With `M = I + A`, `dK = -M⁻¹ dA (I + K)`, so `∂L/∂A = -M⁻ᵀ G (I + K)ᵀ`,
/// and `M⁻ᵀ = (I - A)⁻¹` because `A` is skew.
pub fn cayley_backward<T: Scalar>(theta: &Tensor<T>, k: &Tensor<T>, gk: &Tensor<T>) -> Result<Tensor<T>> {
    let n = square_dim(theta)?;
    let mut ipk_t = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            ipk_t[i * n + j] = k.data()[j * n + i];
        }
        ipk_t[i * n + i] = ipk_t[i * n + i] + T::one();
    }
    let mut rhs = vec![T::zero(); n * n];
    T::gemm(false, false, n, n, n, T::one(), gk.data(), &ipk_t, T::zero(), &mut rhs);
    let minus: Vec<T> = shifted_skew(theta.data(), n, -T::one())
        .into_iter()
        .map(|v| -v)
        .collect();
    let y = solve(&minus, &rhs, n, n)?;
    let mut g = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            // ∂L/∂Θ = ∂L/∂A - (∂L/∂A)ᵀ with ∂L/∂A = -Y
            g[i * n + j] = y[j * n + i] - y[i * n + j];
        }
    }
    Tensor::from_vec(&[n, n], g)
}

fn check_grid(h: usize, w: usize, grid: (usize, usize)) -> Result<()> {
    if grid.0 == 0 || grid.1 == 0 || h % grid.0 != 0 || w % grid.1 != 0 {
        return dim_err(format!(
            "spatial dims {}×{} not divisible by grid {}×{}",
            h, w, grid.0, grid.1
        ));
    }
    Ok(())
}

fn kernel_dim<T: Scalar>(k: &Tensor<T>, grid: (usize, usize)) -> Result<usize> {
    let mn = grid.0 * grid.1;
    if k.shape() != [mn, mn] {
        return dim_err(format!(
            "kernel shape {:?} does not match grid {}×{}",
            k.shape(),
            grid.0,
            grid.1
        ));
    }
    Ok(mn)
}

/// One `H×W` plane to an `mn × (H/m · W/n)` patch matrix.
fn space_to_depth<T: Scalar>(plane: &[T], h: usize, w: usize, grid: (usize, usize), out: &mut [T]) {
    let (m, n) = grid;
    let (oh, ow) = (h / m, w / n);
    let cols = oh * ow;
    for y in 0..h {
        for x in 0..w {
            let l = (y % m) * n + x % n;
            out[l * cols + (y / m) * ow + x / n] = plane[y * w + x];
        }
    }
}

fn depth_to_space<T: Scalar>(patches: &[T], h: usize, w: usize, grid: (usize, usize), plane: &mut [T]) {
    let (m, n) = grid;
    let (oh, ow) = (h / m, w / n);
    let cols = oh * ow;
    for y in 0..h {
        for x in 0..w {
            let l = (y % m) * n + x % n;
            plane[y * w + x] = patches[l * cols + (y / m) * ow + x / n];
        }
    }
}

/// `C×H×W` to `mnC×H/m×W/n`; output channel `c·mn + k` holds `(K·patch)_k`.
pub fn decompose<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, grid: (usize, usize)) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    check_grid(h, w, grid)?;
    let mn = kernel_dim(k, grid)?;
    let cols = h * w / mn;
    let mut out = vec![T::zero(); x.len()];
    let mut patches = vec![T::zero(); h * w];
    for ch in 0..c {
        space_to_depth(&x.data()[ch * h * w..(ch + 1) * h * w], h, w, grid, &mut patches);
        T::gemm(false, false, mn, mn, cols, T::one(), k.data(), &patches, T::zero(), &mut out[ch * h * w..(ch + 1) * h * w]);
    }
    Tensor::from_vec(&[c * mn, h / grid.0, w / grid.1], out)
}

/// Exact inverse of [`decompose`] for orthogonal `K`.
pub fn recompose<T: Scalar>(f: &Tensor<T>, k: &Tensor<T>, grid: (usize, usize)) -> Result<Tensor<T>> {
    let (cf, oh, ow) = f.chw()?;
    let mn = kernel_dim(k, grid)?;
    if cf % mn != 0 {
        return dim_err(format!(
            "feature channels {} not divisible by grid size {}",
            cf, mn
        ));
    }
    let c = cf / mn;
    let (h, w) = (oh * grid.0, ow * grid.1);
    let plane = h * w;
    let mut out = vec![T::zero(); f.len()];
    let mut patches = vec![T::zero(); plane];
    for ch in 0..c {
        T::gemm(true, false, mn, mn, oh * ow, T::one(), k.data(), &f.data()[ch * plane..(ch + 1) * plane], T::zero(), &mut patches);
        depth_to_space(&patches, h, w, grid, &mut out[ch * plane..(ch + 1) * plane]);
    }
    Tensor::from_vec(&[c, h, w], out)
}

/// Gradients of [`decompose`]: `(∂L/∂x, ∂L/∂K)`.
pub(crate) fn decompose_backward<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    grid: (usize, usize),
    gout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mn = grid.0 * grid.1;
    let plane = h * w;
    let cols = plane / mn;
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); mn * mn];
    let mut patches = vec![T::zero(); plane];
    let mut gpatch = vec![T::zero(); plane];
    for ch in 0..c {
        let g = &gout.data()[ch * plane..(ch + 1) * plane];
        space_to_depth(&x.data()[ch * plane..(ch + 1) * plane], h, w, grid, &mut patches);
        T::gemm(false, true, mn, cols, mn, T::one(), g, &patches, T::one(), &mut gk);
        T::gemm(true, false, mn, mn, cols, T::one(), k.data(), g, T::zero(), &mut gpatch);
        depth_to_space(&gpatch, h, w, grid, &mut gx[ch * plane..(ch + 1) * plane]);
    }
    (
        Tensor::from_vec(x.shape(), gx).expect("shape"),
        Tensor::from_vec(&[mn, mn], gk).expect("shape"),
    )
}

/// Gradients of [`recompose`]: `(∂L/∂f, ∂L/∂K)`.
pub(crate) fn recompose_backward<T: Scalar>(
    f: &Tensor<T>,
    k: &Tensor<T>,
    grid: (usize, usize),
    gout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (c, h, w) = (gout.shape()[0], gout.shape()[1], gout.shape()[2]);
    let mn = grid.0 * grid.1;
    let plane = h * w;
    let cols = plane / mn;
    let mut gf = vec![T::zero(); f.len()];
    let mut gk = vec![T::zero(); mn * mn];
    let mut gpatch = vec![T::zero(); plane];
    for ch in 0..c {
        space_to_depth(&gout.data()[ch * plane..(ch + 1) * plane], h, w, grid, &mut gpatch);
        let fc = &f.data()[ch * plane..(ch + 1) * plane];
        // patches = Kᵀ F  =>  ∂L/∂F = K G,  ∂L/∂K = F Gᵀ
        T::gemm(false, false, mn, mn, cols, T::one(), k.data(), &gpatch, T::zero(), &mut gf[ch * plane..(ch + 1) * plane]);
        T::gemm(false, true, mn, cols, mn, T::one(), fc, &gpatch, T::one(), &mut gk);
    }
    (
        Tensor::from_vec(f.shape(), gf).expect("shape"),
        Tensor::from_vec(&[mn, mn], gk).expect("shape"),
    )
}

/// `‖KᵀK - I‖_∞` (max-abs entry).
pub fn orthogonality_defect<T: Scalar>(k: &Tensor<T>) -> f64 {
    let n = k.shape()[0];
    let mut ktk = vec![T::zero(); n * n];
    T::gemm(true, false, n, n, n, T::one(), k.data(), k.data(), T::zero(), &mut ktk);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((ktk[i * n + j].f64() - target).abs());
        }
    }
    worst
}

/// Determinant via LU with partial pivoting, in `f64`.
pub fn determinant<T: Scalar>(k: &Tensor<T>) -> f64 {
    let n = k.shape()[0];
    let mut a: Vec<f64> = k.data().iter().map(|v| v.f64()).collect();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if a[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            det = -det;
        }
        det *= a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for j in col..n {
                a[row * n + j] -= f * a[col * n + j];
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
    }

    #[test]
    fn zero_theta_gives_identity() {
        let k = cayley(&Tensor::<f64>::zeros(&[4, 4])).unwrap();
        assert_eq!(orthogonality_defect(&k), 0.0);
        for i in 0..4 {
            assert_eq!(k.data()[i * 5], 1.0);
        }
    }

    #[test]
    fn two_by_two_quarter_turn() {
        let theta = Tensor::<f64>::from_vec(&[2, 2], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let k = cayley(&theta).unwrap();
        let expected = [0.0, -1.0, 1.0, 0.0];
        for (a, b) in k.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn random_kernel_is_special_orthogonal() {
        let theta = random(&[9, 9], 7, 1.0);
        let k = cayley(&theta).unwrap();
        assert!(orthogonality_defect(&k) < 1e-5);
        assert!((determinant(&k) - 1.0).abs() < 1e-4);
        let k32 = cayley(&theta.cast::<f32>()).unwrap();
        assert!(orthogonality_defect(&k32) < 1e-5);
    }

    #[test]
    fn identity_kernel_is_space_to_depth() {
        let x = Tensor::<f64>::from_fn(&[1, 4, 4], |i| i as f64);
        let k = Tensor::<f64>::from_fn(&[4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 });
        let d = decompose(&x, &k, (2, 2)).unwrap();
        assert_eq!(d.shape(), &[4, 2, 2]);
        // channel 0 = top-left of every patch, channel 3 = bottom-right
        assert_eq!(&d.data()[..4], &[0.0, 2.0, 8.0, 10.0]);
        assert_eq!(&d.data()[12..], &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn hand_rotation_on_single_patch() {
        // K rotates coordinates 0 and 1 by a quarter turn, identity elsewhere:
        // K·[1,2,3,4] = [-2, 1, 3, 4]
        let mut kd = vec![0.0; 16];
        kd[1] = -1.0;
        kd[4] = 1.0;
        kd[10] = 1.0;
        kd[15] = 1.0;
        let k = Tensor::from_vec(&[4, 4], kd).unwrap();
        let x = Tensor::<f64>::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let d = decompose(&x, &k, (2, 2)).unwrap();
        assert_eq!(d.data(), &[-2.0, 1.0, 3.0, 4.0]);
        assert_eq!(recompose(&d, &k, (2, 2)).unwrap().data(), x.data());
    }

    #[test]
    fn round_trip_and_norm() {
        for (grid, seed) in [((2, 2), 1), ((3, 3), 2), ((2, 4), 3), ((1, 1), 4)] {
            let mn = grid.0 * grid.1;
            let k = cayley(&random(&[mn, mn], seed, 0.8)).unwrap();
            let x = random(&[3, 12, 12], seed + 10, 1.0);
            let d = decompose(&x, &k, grid).unwrap();
            assert_eq!(d.shape(), &[3 * mn, 12 / grid.0, 12 / grid.1]);
            assert!((d.norm_l2() - x.norm_l2()).abs() < 1e-5);
            assert!(recompose(&d, &k, grid).unwrap().max_abs_diff(&x).unwrap() < 1e-6);
            let f = random(d.shape(), seed + 20, 1.0);
            let back = decompose(&recompose(&f, &k, grid).unwrap(), &k, grid).unwrap();
            assert!(back.max_abs_diff(&f).unwrap() < 1e-6);
        }
        let k = cayley(&Tensor::<f64>::zeros(&[4, 4])).unwrap();
        let z = recompose(&Tensor::<f64>::zeros(&[8, 2, 2]), &k, (2, 2)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indivisible_dims_rejected() {
        let k = cayley(&Tensor::<f64>::zeros(&[4, 4])).unwrap();
        assert!(decompose(&Tensor::<f64>::zeros(&[1, 3, 4]), &k, (2, 2)).is_err());
        assert!(recompose(&Tensor::<f64>::zeros(&[3, 2, 2]), &k, (2, 2)).is_err());
    }

    #[test]
    fn solve_matches_known_system() {
        let a = [2.0f64, 1.0, 1.0, 3.0];
        let b = [3.0f64, 5.0];
        let x = solve(&a, &b, 2, 1).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
        assert!(solve(&[0.0, 0.0, 0.0, 0.0], &b, 2, 1).is_err());
    }
}
