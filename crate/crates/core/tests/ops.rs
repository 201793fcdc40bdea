//! Gradient, adjoint and value oracles for every differentiable operation.

use handcast::tensor::finite_difference_check;
use handcast::tensor::{Optimizer, OptimizerConfig, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn check(f: impl Fn(&mut Tape<f64>, &[Var]) -> handcast::Result<Var>, inputs: &[Tensor<f64>], what: &str) {
    let r = finite_difference_check(f, inputs, EPS).unwrap();
    assert!(r.max_relative_error <= TOL, "{what}: relative error {:e} at {:?}", r.max_relative_error, r.worst);
}

#[test]
fn conv2d_gradients_over_strides_and_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for stride in [1, 2] {
        for padding in [0, 1, 2] {
            let c = rng.gen_range(1..4);
            let o = rng.gen_range(1..4);
            let k = rng.gen_range(1..4);
            let h = rng.gen_range(k..k + 4);
            let w = rng.gen_range(k..k + 4);
            let x = random(&[c, h, w], &mut rng);
            let kern = random(&[o, c, k, k], &mut rng);
            let b = random(&[o], &mut rng);
            check(
                |t, v| t.conv2d(v[0], v[1], v[2], stride, padding),
                &[x, kern, b],
                &format!("conv2d stride {stride} padding {padding}"),
            );
        }
    }
}

#[test]
fn conv2d_gradient_on_five_by_five_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[3, 8, 8], &mut rng);
    let k = random(&[4, 3, 5, 5], &mut rng);
    let b = random(&[4], &mut rng);
    check(|t, v| t.conv2d(v[0], v[1], v[2], 1, 2), &[x, k, b], "conv2d 3x8x8 / 4x3x5x5");
}

#[test]
fn transposed_conv2d_gradients_over_strides_and_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for stride in [1, 2] {
        for padding in [0, 1, 2] {
            let c = rng.gen_range(1..4);
            let o = rng.gen_range(1..4);
            let k = rng.gen_range(padding + 1..padding + 4);
            let h = rng.gen_range(2..5);
            let x = random(&[c, h, h + 1], &mut rng);
            let kern = random(&[c, o, k, k], &mut rng);
            let b = random(&[o], &mut rng);
            check(
                |t, v| t.conv_transpose2d(v[0], v[1], v[2], stride, padding),
                &[x, kern, b],
                &format!("transposed_conv2d stride {stride} padding {padding}"),
            );
        }
    }
}

#[test]
fn transposed_conv2d_is_adjoint_of_conv2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..100 {
        let stride = 1 + case % 2;
        let padding = case % 3;
        let c = rng.gen_range(1..4);
        let o = rng.gen_range(1..4);
        let k: usize = rng.gen_range(padding.max(1)..padding + 4);
        let out: usize = rng.gen_range(2..5);
        // Input size whose conv output is `out` with no leftover rows.
        let full = (out - 1) * stride + k;
        if full <= 2 * padding {
            continue;
        }
        let h = full - 2 * padding;
        let x = random(&[c, h, h], &mut rng);
        let kern = random(&[o, c, k, k], &mut rng);
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x.clone());
        let kv = tape.constant(kern.clone());
        let zo = tape.constant(Tensor::zeros(&[o]));
        let zc = tape.constant(Tensor::zeros(&[c]));
        let cx = tape.conv2d(xv, kv, zo, stride, padding).unwrap();
        let y = random(tape.value(cx).shape(), &mut rng);
        let yv = tape.constant(y.clone());
        let ty = tape.conv_transpose2d(yv, kv, zc, stride, padding).unwrap();
        assert_eq!(tape.value(ty).shape(), x.shape(), "case {case}");
        let lhs = tape.value(cx).dot(&y).unwrap();
        let rhs = x.dot(tape.value(ty)).unwrap();
        assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0), "case {case}: {lhs} vs {rhs}");
    }
}

#[test]
fn dense_relu_concat_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[11], &mut rng);
    let w = random(&[32, 11], &mut rng);
    let b = random(&[32], &mut rng);
    check(|t, v| t.dense(v[0], v[1], v[2]), &[x, w, b], "dense 11->32");

    let x = Tensor::from_fn(&[20], |i| if i % 2 == 0 { 0.3 + i as f64 * 0.1 } else { -0.4 - i as f64 * 0.1 });
    check(|t, v| Ok(t.relu(v[0])), &[x], "relu");

    let a = random(&[2, 3, 3], &mut rng);
    let b = random(&[1, 3, 3], &mut rng);
    let c = random(&[3, 3, 3], &mut rng);
    check(|t, v| t.concat_channels(v), &[a, b, c], "concat_channels");
}

#[test]
fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let target = random(&[3, 4], &mut rng);
    let pred = random(&[3, 4], &mut rng);
    let tg = target.clone();
    check(move |t, v| t.mse_loss(v[0], &tg), &[pred], "mse_loss");

    let logits = random(&[6, 5], &mut rng);
    let labels = vec![0, 1, 2, 3, 4, 2];
    let weights = vec![1.0, 0.5, 2.0, 1.0, 0.0, 1.5];
    check(
        move |t, v| t.softmax_cross_entropy(v[0], &labels, &weights),
        &[logits],
        "softmax_cross_entropy",
    );

    // |diff| of 0.5 (quadratic branch) and 2.0 (linear branch).
    let target = Tensor::new(vec![4], vec![0.0, 1.0, -1.0, 0.5]).unwrap();
    let pred = Tensor::new(vec![4], vec![0.5, 3.0, -1.5, -1.5]).unwrap();
    let mask = Tensor::new(vec![4], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
    check(move |t, v| t.smooth_l1_loss(v[0], &target, &mask), &[pred], "smooth_l1_loss");
}

#[test]
fn conv_relu_dense_chain_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[2, 6, 6], &mut rng);
    let k = random(&[3, 2, 3, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let w = random(&[4, 3 * 3 * 3], &mut rng);
    let bd = random(&[4], &mut rng);
    check(
        |t, v| {
            let c = t.conv2d(v[0], v[1], v[2], 2, 1)?;
            let r = t.relu(c);
            let f = t.reshape(r, &[27])?;
            t.dense(f, v[3], v[4])
        },
        &[x, k, b, w, bd],
        "conv-relu-dense",
    );
}

#[test]
fn mse_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random(&[5, 7], &mut rng);
    let q = random(&[5, 7], &mut rng);
    let mut tape = Tape::<f64>::new();
    let v = tape.constant(p.clone());
    let l = tape.mse_loss(v, &q).unwrap();
    let mut sum = 0.0;
    for (a, b) in p.data().iter().zip(q.data()) {
        sum += (a - b) * (a - b);
    }
    assert!((tape.value(l).data()[0] - sum / 35.0).abs() < 1e-9);
}

#[test]
fn sgd_descends_quadratic_bowl() {
    let mut params = ParamStore::<f64>::new();
    params.add("x", Tensor::new(vec![1], vec![3.0]).unwrap()).unwrap();
    let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.0));
    for _ in 0..200 {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = bound.get(0);
        let sq = tape.mse_loss(x, &Tensor::zeros(&[1])).unwrap();
        tape.backward(sq).unwrap();
        params.accumulate_grads(&tape, &bound);
        opt.step(&mut params).unwrap();
    }
    assert!(params.get(0).value.data()[0].abs() < 1e-3);
}

#[test]
fn shape_and_arithmetic_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[2, 3, 4], &mut rng);
    check(|t, v| t.reshape(v[0], &[6, 4]), &[x.clone()], "reshape");
    check(|t, v| t.permute(v[0], &[2, 0, 1]), &[x.clone()], "permute");
    check(|t, v| Ok(t.scale(v[0], -1.7)), &[x.clone()], "scale");
    let y = random(&[2, 3, 4], &mut rng);
    check(|t, v| t.add(v[0], v[1]), &[x.clone(), y], "add");
    let w: Vec<f64> = (0..24).map(|i| (i as f64 - 12.0) / 7.0).collect();
    check(move |t, v| t.weighted_sum(v[0], &w), &[x], "weighted_sum");

    let pred = random(&[4, 3], &mut rng);
    let target = random(&[4, 3], &mut rng);
    let mask = Tensor::from_fn(&[4, 3], |i| (i % 3 != 1) as u8 as f64);
    check(move |t, v| t.masked_mse_loss(v[0], &target, &mask), &[pred], "masked_mse_loss");
}

#[test]
fn batched_convolution_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(&[2, 2, 5, 5], &mut rng);
    let k = random(&[3, 2, 3, 3], &mut rng);
    let b = random(&[3], &mut rng);
    check(|t, v| t.conv2d(v[0], v[1], v[2], 2, 1), &[x, k, b], "batched conv2d");
    let x = random(&[2, 3, 3, 3], &mut rng);
    let k = random(&[3, 2, 4, 4], &mut rng);
    let b = random(&[2], &mut rng);
    check(|t, v| t.conv_transpose2d(v[0], v[1], v[2], 2, 1), &[x, k, b], "batched transposed conv2d");
}
