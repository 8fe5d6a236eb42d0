use super::*;
use crate::gradcheck::check_gradients;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

#[test]
fn identity_kernel_conv() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::ones(&[1, 2, 2]));
    let w = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv2d(x, w, Some(b), (1, 1), (0, 0)).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0; 4]);
}

#[test]
fn strided_summing_conv() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let w = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
    let y = tape.conv2d(x, w, None, (2, 2), (0, 0)).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 1]);
    assert_eq!(tape.value(y).data(), &[10.0]);
}

#[test]
fn conv_output_geometry_and_errors() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[3, 7, 5]));
    let w = tape.constant(Tensor::zeros(&[4, 3, 3, 3]));
    let y = tape.conv2d(x, w, None, (2, 1), (1, 1)).unwrap();
    assert_eq!(tape.shape(y), &[4, 4, 5]);
    let bad = tape.constant(Tensor::zeros(&[4, 2, 3, 3]));
    assert!(matches!(tape.conv2d(x, bad, None, (1, 1), (1, 1)), Err(Error::Dimension(_))));
}

#[test]
fn conv_weight_gradient_is_input_correlation() {
    // d/dw sum(conv(x, w)) for a 3×3 pad-1 kernel: each tap sums the shifted input.
    let x = random(&[2, 5, 4], 1);
    let w = random(&[3, 2, 3, 3], 2);
    let b = random(&[3], 3);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.leaf(x.clone(), true), tape.leaf(w, true), tape.leaf(b, true));
    let y = tape.conv2d(xv, wv, Some(bv), (1, 1), (1, 1)).unwrap();
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    let gw = tape.grad(wv);
    for c in 0..2 {
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for y in 0..5isize {
                    for xx in 0..4isize {
                        let (iy, ix) = (y + i as isize - 1, xx + j as isize - 1);
                        if (0..5).contains(&iy) && (0..4).contains(&ix) {
                            acc += x.data()[(c * 5 + iy as usize) * 4 + ix as usize];
                        }
                    }
                }
                for o in 0..3 {
                    let a = gw.data()[((o * 2 + c) * 3 + i) * 3 + j];
                    assert!((a - acc).abs() < 1e-12);
                }
            }
        }
    }
    assert_eq!(tape.grad(bv).data(), &[20.0; 3]);
}

#[test]
fn conv_matches_finite_differences() {
    for (stride, pad, k) in [((1, 1), (1, 1), 3), ((2, 2), (0, 0), 2), ((2, 1), (1, 0), 3)] {
        let x = random(&[2, 6, 5], 4);
        let w = random(&[3, 2, k, k], 5);
        let b = random(&[3], 6);
        let r = check_gradients(&[x, w, b], 1e-6, 64, |tp, v| {
            let y = tp.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
            let y = tp.square(y);
            Ok(tp.sum(y))
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-5, "{:?}", r);
    }
}

#[test]
fn exp_bounded_values() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[3], &[0.0, 1e6, -1e6]));
    let y = tape.exp_bounded(x, 2.0);
    let v = tape.value(y).data();
    assert_eq!(v[0], 1.0);
    assert!((v[1] - 2f64.exp()).abs() < 1e-12 && v[1].is_finite());
    assert!((v[2] - (-2f64).exp()).abs() < 1e-12);
}

#[test]
fn elementwise_basics_and_broadcast() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(t(&[2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2], &[3.0, 4.0]));
    let s = tape.add(a, b).unwrap();
    assert_eq!(tape.value(s).data(), &[4.0, 6.0]);
    let k = tape.constant(Tensor::scalar(2.0));
    let p = tape.mul(a, k).unwrap();
    assert_eq!(tape.value(p).data(), &[2.0, 4.0]);
    let c = tape.constant(Tensor::zeros(&[3]));
    assert!(matches!(tape.add(a, c), Err(Error::Dimension(_))));
}

#[test]
fn elementwise_gradients() {
    let x = random(&[2, 3, 3], 7);
    let y = random(&[2, 3, 3], 8);
    let s = random(&[1], 9);
    let r = check_gradients(&[x, y, s], 1e-6, 32, |tp, v| {
        let a = tp.mul(v[0], v[1])?;
        let a = tp.add(a, v[2])?;
        let e = tp.exp_bounded(a, 2.0);
        let l = tp.leaky_relu(v[1], 0.2);
        let d = tp.sub(e, l)?;
        let d = tp.scale(d, 0.7);
        let m = tp.mul(d, v[2])?;
        let q = tp.abs(m);
        let q2 = tp.square(d);
        let sum = tp.add(q, q2)?;
        Ok(tp.sum(sum))
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{:?}", r);
}

#[test]
fn scalar_backward_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[1], &[3.0]), true);
    let sq = tape.square(x);
    let l = tape.sum(sq);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).data(), &[6.0]);

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]), true);
    let y = tape.leaf(t(&[3], &[4.0, 5.0, 6.0]), true);
    let p = tape.mul(x, y).unwrap();
    let l = tape.sum(p);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).data(), &[4.0, 5.0, 6.0]);
    assert_eq!(tape.grad(y).data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn non_scalar_loss_rejected_and_unreachable_is_zero() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
    let unused = tape.leaf(t(&[2], &[1.0, 2.0]), true);
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    let l = tape.sum(x);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(unused).data(), &[0.0, 0.0]);
    assert!(tape.grad_opt(unused).is_none());
}

#[test]
fn concat_split_routing() {
    let a = Tensor::<f64>::zeros(&[1, 2, 2]);
    let b = Tensor::<f64>::ones(&[1, 2, 2]);
    let mut tape = Tape::new();
    let (av, bv) = (tape.leaf(a.clone(), true), tape.leaf(b.clone(), true));
    let c = tape.concat_channels(&[av, bv]).unwrap();
    assert_eq!(tape.value(c).data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    let (top, bottom) = tape.split_channels(c, 1).unwrap();
    assert_eq!(tape.value(top), &a);
    assert_eq!(tape.value(bottom), &b);
    let l = tape.sum(top);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(av).data(), &[1.0; 4]);
    assert_eq!(tape.grad(bv).data(), &[0.0; 4]);

    let wrong = tape.constant(Tensor::zeros(&[1, 3, 2]));
    assert!(tape.concat_channels(&[av, wrong]).is_err());
    assert!(tape.split_channels(c, 0).is_err());
    assert!(tape.split_channels(c, 2).is_err());
}

#[test]
fn structural_ops_match_finite_differences() {
    let x = random(&[2, 4, 4], 10);
    let theta = random(&[4, 4], 11);
    let pool_in = random(&[3, 4, 6], 12);
    let r = check_gradients(&[x, theta, pool_in], 1e-6, 32, |tp, v| {
        let k = tp.cayley(v[1])?;
        let d = tp.decompose(v[0], k, (2, 2))?;
        let w = tp.dwt(d)?;
        let w = tp.square(w);
        let i = tp.idwt(w)?;
        let r = tp.recompose(i, k, (2, 2))?;
        let r = tp.exp_bounded(r, 2.0);
        let p = tp.avg_pool(v[2], 2, 3)?;
        let p = tp.square(p);
        let a = tp.sum(r);
        let b = tp.sum(p);
        tp.add(a, b)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{:?}", r);
}

#[test]
fn splice_crop_gradients() {
    let tiles: Vec<Tensor<f64>> = (0..3).map(|i| random(&[2, 2, 3], 20 + i)).collect();
    let layout = crate::mosaic::grid_shape(3).unwrap();
    let r = check_gradients(&tiles, 1e-6, 16, |tp, v| {
        let m = tp.splice(v, &layout)?;
        let m = tp.square(m);
        let parts = tp.split_mosaic(m, &layout)?;
        let e = tp.exp_bounded(parts[1], 2.0);
        let a = tp.sum(e);
        let b = tp.sum(parts[2]);
        tp.add(a, b)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-5, "{:?}", r);
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(random(&[3, 8, 8], 30).cast());
        let w = tape.constant(random(&[4, 3, 3, 3], 31).cast());
        let y = tape.conv2d(x, w, None, (1, 1), (1, 1)).unwrap();
        tape.value(y).clone()
    };
    assert_eq!(run().into_data(), run().into_data());
}
