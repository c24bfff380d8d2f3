use defog_tensor::{Padding, Tape, Tensor};

fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed;
    move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = lcg(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r()).collect()).unwrap()
}

/// Direct loop cross-correlation, independent of the library kernel.
fn conv_reference(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: Padding) -> Tensor<f64> {
    let [h, wd, cin] = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let [kh, kw, _, cout] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let oh = (h + pad.top + pad.bottom - kh) / stride + 1;
    let ow = (wd + pad.left + pad.right - kw) / stride + 1;
    let mut out = vec![0.0; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cout {
                let mut acc = b.data()[co];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * stride + ky) as isize - pad.top as isize;
                        let ix = (ox * stride + kx) as isize - pad.left as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            let xv = x.data()[(iy as usize * wd + ix as usize) * cin + ci];
                            let wv = w.data()[((ky * kw + kx) * cin + ci) * cout + co];
                            acc += xv * wv;
                        }
                    }
                }
                out[(oy * ow + ox) * cout + co] = acc;
            }
        }
    }
    Tensor::new(&[oh, ow, cout], out).unwrap()
}

fn run_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: Padding) -> Tensor<f64> {
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let y = tape.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
    tape.value(y).clone()
}

#[test]
fn conv_identity_kernel_copies_input() {
    let x = random(&[4, 3, 2], 1);
    let w = Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
    let b = Tensor::zeros(&[2]);
    assert_eq!(run_conv(&x, &w, &b, 1, Padding::NONE), x);
}

#[test]
fn conv_zero_weights_yield_bias() {
    let x = random(&[5, 5, 3], 2);
    let w = Tensor::zeros(&[3, 3, 3, 2]);
    let b = Tensor::from_f64(&[2], &[0.25, -4.0]).unwrap();
    let y = run_conv(&x, &w, &b, 1, Padding::uniform(1));
    assert_eq!(y.shape(), &[5, 5, 2]);
    for px in y.data().chunks(2) {
        assert_eq!(px, &[0.25, -4.0]);
    }
}

#[test]
fn conv_matches_direct_loops_exactly() {
    let x = random(&[5, 5, 3], 3);
    let b = random(&[4], 4);
    for (k, stride, pad) in [
        (3, 1, Padding::uniform(1)),
        (3, 2, Padding::ceil_mode(5, 5, 3, 2)),
        (2, 2, Padding::NONE),
        (5, 1, Padding::NONE),
        (1, 3, Padding::NONE),
    ] {
        let w = random(&[k, k, 3, 4], 5 + k as u64);
        let got = run_conv(&x, &w, &b, stride, pad);
        let want = conv_reference(&x, &w, &b, stride, pad);
        assert_eq!(got.shape(), want.shape());
        // Same reduction order, so bit-identical.
        assert_eq!(got.data(), want.data(), "k={k} stride={stride}");
    }
}

#[test]
fn conv_output_extent_formula() {
    let x = random(&[7, 6, 1], 6);
    let w = random(&[3, 3, 1, 1], 7);
    let b = Tensor::zeros(&[1]);
    let y = run_conv(&x, &w, &b, 2, Padding::NONE);
    assert_eq!(y.shape(), &[(7 - 3) / 2 + 1, (6 - 3) / 2 + 1, 1]);
}

#[test]
fn conv_shape_errors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[4, 4, 3]));
    let w_bad = tape.constant(Tensor::zeros(&[3, 3, 2, 1]));
    assert!(tape.conv2d(x, w_bad, None, 1, Padding::NONE).is_err());
    let w_big = tape.constant(Tensor::zeros(&[5, 5, 3, 1]));
    assert!(tape.conv2d(x, w_big, None, 1, Padding::NONE).is_err());
    let w = tape.constant(Tensor::zeros(&[3, 3, 3, 2]));
    let b = tape.constant(Tensor::zeros(&[3]));
    assert!(tape.conv2d(x, w, Some(b), 1, Padding::NONE).is_err());
}

#[test]
fn ceil_mode_stride_two_halves_rounding_up() {
    for n in 1..=33 {
        let x = Tensor::<f64>::zeros(&[n, n, 1]);
        let w = Tensor::zeros(&[3, 3, 1, 1]);
        let b = Tensor::zeros(&[1]);
        let y = run_conv(&x, &w, &b, 2, Padding::ceil_mode(n, n, 3, 2));
        assert_eq!(y.shape()[0], n.div_ceil(2), "n={n}");
    }
}

#[test]
fn elu_values() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(&[3], &[0.0, -1e3, 2.0]).unwrap());
    let y = tape.elu(x);
    let v = tape.value(y).data();
    assert_eq!(v[0], 0.0);
    assert!((v[1] + 1.0).abs() < 1e-12);
    assert_eq!(v[2], 2.0);
}

#[test]
fn glu_values_and_odd_rejection() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(&[2, 2], &[3.0, 0.0, -1.0, 2.0]).unwrap());
    let y = tape.glu(x).unwrap();
    let v = tape.value(y).data().to_vec();
    assert_eq!(tape.shape(y), &[2, 1]);
    assert_eq!(v[0], 1.5);
    assert!((v[1] - (-1.0 / (1.0 + (-2.0f64).exp()))).abs() < 1e-15);
    let odd = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(tape.glu(odd).is_err());
}

#[test]
fn sigmoid_tanh_relu_are_finite_on_extremes() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::from_f64(&[4], &[-1e4, -50.0, 50.0, 1e4]).unwrap());
    for y in [tape.sigmoid(x), tape.tanh(x), tape.relu(x), tape.elu(x)] {
        assert!(tape.value(y).is_finite());
    }
}

#[test]
fn sum_pool_values() {
    let mut tape = Tape::<f64>::new();
    let ones = tape.constant(Tensor::full(&[4, 4, 3], 1.0));
    let s = tape.sum_spatial(ones).unwrap();
    assert_eq!(tape.value(s).data(), &[16.0, 16.0, 16.0]);

    let mut single = Tensor::zeros(&[3, 2, 4]);
    single.data_mut()[(2 * 2 + 1) * 4 + 2] = 7.5;
    let x = tape.constant(single);
    let s = tape.sum_spatial(x).unwrap();
    assert_eq!(tape.value(s).data(), &[0.0, 0.0, 7.5, 0.0]);

    let r = random(&[5, 3, 2], 9);
    let mut want = [0.0; 2];
    for i in 0..5 {
        for j in 0..3 {
            for c in 0..2 {
                want[c] += r.data()[(i * 3 + j) * 2 + c];
            }
        }
    }
    let x = tape.constant(r);
    let s = tape.sum_spatial(x).unwrap();
    assert_eq!(tape.value(s).data(), &want);
}

#[test]
fn upsample_nearest_cases() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(random(&[3, 2, 2], 10));
    let same = tape.upsample_nearest(x, 1, 3, 2).unwrap();
    assert_eq!(tape.value(same), tape.value(x));

    let one = tape.constant(Tensor::from_f64(&[1, 1, 1], &[2.0]).unwrap());
    let up = tape.upsample_nearest(one, 4, 4, 4).unwrap();
    assert_eq!(tape.value(up).data(), &[2.0; 16]);
    let s = tape.sum_all(up);
    assert_eq!(tape.value(s).item(), 2.0 * 16.0);

    // 4x4 -> x2 = 8x8, cropped to 7x7.
    let big = tape.constant(random(&[4, 4, 1], 11));
    let up = tape.upsample_nearest(big, 2, 7, 7).unwrap();
    assert_eq!(tape.shape(up), &[7, 7, 1]);
    let src = tape.value(big).data().to_vec();
    let out = tape.value(up).data();
    assert_eq!(out[6 * 7 + 6], src[3 * 4 + 3]);
    assert_eq!(out[7 + 2], src[1]);
    assert!(tape.upsample_nearest(big, 3, 7, 7).is_err());
}

#[test]
fn huber_closed_form() {
    let cases = [(0.0, 1.0, 0.0), (0.5, 1.0, 0.125), (2.0, 1.0, 1.5), (-2.0, 1.0, 1.5), (3.0, 2.0, 4.0)];
    for (e, delta, want) in cases {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::from_f64(&[1], &[e]).unwrap());
        let l = tape.huber(p, &Tensor::zeros(&[1]), delta).unwrap();
        assert_eq!(tape.value(l).item(), want, "e={e}");
    }
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(Tensor::zeros(&[2]));
    assert!(tape.huber(p, &Tensor::zeros(&[3]), 1.0).is_err());
}

#[test]
fn bce_values() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::from_f64(&[2], &[0.0, 0.0]).unwrap());
    let l = tape.bce_with_logits(z, &Tensor::from_f64(&[2], &[1.0, 0.0]).unwrap()).unwrap();
    assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);

    let z = tape.constant(Tensor::from_f64(&[1], &[100.0]).unwrap());
    let l = tape.bce_with_logits(z, &Tensor::from_f64(&[1], &[1.0]).unwrap()).unwrap();
    assert!(tape.value(l).item() < 1e-40);

    // Naive formula oracle on |z| <= 10.
    let mut r = lcg(12);
    for _ in 0..200 {
        let zv = r() * 10.0;
        let y = if r() > 0.0 { 1.0 } else { 0.0 };
        let p = 1.0 / (1.0 + (-zv).exp());
        let naive = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        let z = tape.constant(Tensor::from_f64(&[1], &[zv]).unwrap());
        let l = tape.bce_with_logits(z, &Tensor::from_f64(&[1], &[y]).unwrap()).unwrap();
        assert!((tape.value(l).item() - naive).abs() < 1e-12 * naive.max(1.0), "z={zv}");
    }
}

#[test]
fn lstm_zero_weights_zero_state() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(random(&[3, 4], 13));
    let h = tape.constant(Tensor::zeros(&[3, 2]));
    let c = tape.constant(Tensor::zeros(&[3, 2]));
    let w = tape.constant(Tensor::zeros(&[6, 8]));
    let b = tape.constant(Tensor::zeros(&[8]));
    let (h2, c2) = tape.lstm_cell(x, h, c, w, b).unwrap();
    assert!(tape.value(h2).data().iter().all(|&v| v == 0.0));
    assert!(tape.value(c2).data().iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_saturated_forget_gate_accumulates() {
    let (n, din, hd) = (2, 3, 2);
    let x0 = random(&[n, din], 14);
    let h0 = random(&[n, hd], 15);
    let c0 = random(&[n, hd], 16);
    let w0 = random(&[din + hd, 4 * hd], 17);
    let mut b0 = random(&[4 * hd], 18);
    for k in hd..2 * hd {
        b0.data_mut()[k] = 100.0;
    }
    let mut tape = Tape::<f64>::new();
    let (x, h, c, w, b) = (
        tape.constant(x0.clone()),
        tape.constant(h0.clone()),
        tape.constant(c0.clone()),
        tape.constant(w0.clone()),
        tape.constant(b0.clone()),
    );
    let (_, c2) = tape.lstm_cell(x, h, c, w, b).unwrap();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    for r in 0..n {
        let mut xh: Vec<f64> = x0.data()[r * din..][..din].to_vec();
        xh.extend_from_slice(&h0.data()[r * hd..][..hd]);
        for k in 0..hd {
            let pre = |gate: usize| {
                let col = gate * hd + k;
                b0.data()[col] + xh.iter().enumerate().map(|(i, v)| v * w0.data()[i * 4 * hd + col]).sum::<f64>()
            };
            let expected = c0.data()[r * hd + k] + sig(pre(0)) * pre(2).tanh();
            assert!((tape.value(c2).data()[r * hd + k] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn backward_product_rule() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_f64(&[2], &[3.0, -1.0]).unwrap().with_grad());
    let y = tape.leaf(Tensor::from_f64(&[2], &[0.5, 4.0]).unwrap().with_grad());
    let p = tape.mul(x, y).unwrap();
    let s = tape.sum_all(p);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0.5, 4.0]);
    assert_eq!(g.get(y).unwrap(), &[3.0, -1.0]);
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(random(&[3, 3, 2], 19));
    let w = tape.leaf(random(&[3, 3, 2, 2], 20).with_grad());
    let y = tape.conv2d(x, w, None, 1, Padding::uniform(1)).unwrap();
    let z = tape.scale(y, 0.0);
    let s = tape.sum_all(z);
    let g = tape.backward(s).unwrap();
    assert!(g.get(w).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_requires_scalar() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[2]).with_grad());
    assert!(tape.backward(x).is_err());
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::<f64>::new();
    let c = tape.constant(Tensor::full(&[2], 1.0));
    let x = tape.leaf(Tensor::full(&[2], 2.0).with_grad());
    let y = tape.mul(c, x).unwrap();
    let s = tape.sum_all(y);
    let g = tape.backward(s).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.get(x).unwrap(), &[1.0, 1.0]);
}
