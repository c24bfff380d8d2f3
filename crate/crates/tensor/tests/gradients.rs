//! Finite-difference checks for every differentiable op, 64-bit.

use defog_tensor::gradcheck::{check_fn, Tolerance};
use defog_tensor::{Padding, Tensor};
use proptest::prelude::*;

fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed ^ 0x9e37_79b9_7f4a_7c15;
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

/// Values bounded away from the kinks of relu/huber so central differences
/// stay on one side.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let t = random(shape, seed);
    let data = t.data().iter().map(|&v| if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v }).collect();
    Tensor::new(shape, data).unwrap()
}

fn tol() -> Tolerance {
    Tolerance {
        rtol: 1e-3,
        atol: 1e-6,
        step: 1e-5,
    }
}

fn assert_passes(report: defog_tensor::gradcheck::Report) {
    assert!(report.checked > 0);
    assert!(report.passed(), "{:?}", &report.mismatches[..report.mismatches.len().min(5)]);
}

#[test]
fn composite_conv_elu_pool_huber() {
    let inputs = [random(&[5, 4, 3], 1), random(&[3, 3, 3, 4], 2), random(&[4], 3)];
    let target = random(&[4], 4);
    let report = check_fn(&inputs, tol(), |t, v| {
        let pad = Padding::ceil_mode(5, 4, 3, 2);
        let y = t.conv2d(v[0], v[1], Some(v[2]), 2, pad)?;
        let y = t.elu(y);
        let p = t.sum_spatial(y)?;
        t.huber(p, &target, 1.0)
    })
    .unwrap();
    assert_passes(report);
}

#[test]
fn lstm_cell_gradients() {
    let (n, din, hd) = (3, 4, 2);
    let inputs = [
        random(&[n, din], 5),
        random(&[n, hd], 6),
        random(&[n, hd], 7),
        random(&[din + hd, 4 * hd], 8),
        random(&[4 * hd], 9),
    ];
    let report = check_fn(&inputs, tol(), |t, v| {
        let (h, c) = t.lstm_cell(v[0], v[1], v[2], v[3], v[4])?;
        let both = t.concat(&[h, c])?;
        let sq = t.mul(both, both)?;
        let s = t.sum_all(sq);
        Ok(s)
    })
    .unwrap();
    assert_passes(report);
}

#[test]
fn two_step_lstm_unroll() {
    let inputs = [random(&[2, 3], 10), random(&[5, 8], 11), random(&[8], 12)];
    let report = check_fn(&inputs, tol(), |t, v| {
        let h0 = t.constant(Tensor::zeros(&[2, 2]));
        let c0 = t.constant(Tensor::zeros(&[2, 2]));
        let (h1, c1) = t.lstm_cell(v[0], h0, c0, v[1], v[2])?;
        let (h2, _) = t.lstm_cell(v[0], h1, c1, v[1], v[2])?;
        Ok(t.sum_all(h2))
    })
    .unwrap();
    assert_passes(report);
}

#[test]
fn activation_gradients() {
    let x = away_from_zero(&[3, 4], 13);
    let tight = Tolerance {
        rtol: 1e-4,
        ..tol()
    };
    type Unary = fn(&mut defog_tensor::Tape<f64>, defog_tensor::Var) -> defog_tensor::Var;
    let unaries: [(&str, Unary); 4] = [
        ("elu", |t, v| t.elu(v)),
        ("relu", |t, v| t.relu(v)),
        ("sigmoid", |t, v| t.sigmoid(v)),
        ("tanh", |t, v| t.tanh(v)),
    ];
    let weights = random(&[3, 4], 14);
    for (name, op) in unaries {
        let report = check_fn(&[x.clone()], tight, |t, v| {
            let y = op(t, v[0]);
            let w = t.constant(weights.clone());
            let y = t.mul(y, w)?;
            Ok(t.sum_all(y))
        })
        .unwrap();
        assert!(report.passed(), "{name}: {:?}", report.mismatches);
    }
    let report = check_fn(&[x], tight, |t, v| {
        let y = t.glu(v[0])?;
        let w = t.constant(random(&[3, 2], 15));
        let y = t.mul(y, w)?;
        Ok(t.sum_all(y))
    })
    .unwrap();
    assert!(report.passed(), "glu: {:?}", report.mismatches);
}

#[test]
fn structural_op_gradients() {
    let inputs = [random(&[2, 3, 2], 16), random(&[2, 3, 1], 17), random(&[3], 18)];
    let report = check_fn(&inputs, tol(), |t, v| {
        let cat = t.concat(&[v[0], v[1]])?;
        let sl = t.slice(cat, 1, 2)?;
        let up = t.upsample_nearest(sl, 2, 3, 5)?;
        let sub = t.subsample(up, 2)?;
        let n = sub_len(t.shape(sub));
        let flat = t.reshape(sub, &[n])?;
        let b = t.broadcast_spatial(v[2], 1, 1)?;
        let bsum = t.sum_spatial(b)?;
        let a = t.sum_all(flat);
        let bb = t.mul(bsum, bsum)?;
        let c = t.mean_all(bb);
        let d = t.sub(a, c)?;
        let e = t.scale(d, 1.5);
        let sq = t.mul(e, e)?;
        t.add_n(&[sq, e, a])
    })
    .unwrap();
    assert_passes(report);
}

fn sub_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[test]
fn linear_and_bce_gradients() {
    let inputs = [random(&[6], 19), random(&[6, 3], 20), random(&[3], 21)];
    let targets = Tensor::from_f64(&[3], &[1.0, 0.0, 1.0]).unwrap();
    let report = check_fn(&inputs, tol(), |t, v| {
        let z = t.linear(v[0], v[1], Some(v[2]))?;
        t.bce_with_logits(z, &targets)
    })
    .unwrap();
    assert_passes(report);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_gradients_on_random_shapes(
        h in 1usize..6, w in 1usize..6, cin in 1usize..4, cout in 1usize..4,
        k in prop::sample::select(vec![1usize, 2, 3]), stride in 1usize..3, seed in 0u64..1000,
    ) {
        let pad = Padding::ceil_mode(h, w, k, stride);
        let inputs = [random(&[h, w, cin], seed), random(&[k, k, cin, cout], seed + 1), random(&[cout], seed + 2)];
        let target_shape = [h.div_ceil(stride), w.div_ceil(stride), cout];
        let target = random(&target_shape, seed + 3);
        let report = check_fn(&inputs, tol(), |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
            let y = t.tanh(y);
            t.huber(y, &target, 0.5)
        }).unwrap();
        prop_assert!(report.passed(), "{:?}", report.mismatches);
    }

    #[test]
    fn elementwise_chain_gradients(n in 1usize..8, seed in 0u64..1000) {
        let inputs = [random(&[n], seed), random(&[n], seed + 7)];
        let report = check_fn(&inputs, tol(), |t, v| {
            let a = t.add(v[0], v[1])?;
            let s = t.sigmoid(a);
            let m = t.mul(s, v[1])?;
            let e = t.elu(m);
            Ok(t.mean_all(e))
        }).unwrap();
        prop_assert!(report.passed(), "{:?}", report.mismatches);
    }
}
