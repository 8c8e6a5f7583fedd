use nn::{gradient_check, init, NnError, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init::normal(shape, 0.0, 1.0, &mut rng)
}

/// Reduce to a scalar with fixed, non-uniform weights so that no gradient
/// component is trivially zero.
fn probe(tape: &mut Tape<f64>, y: Var, seed: u64) -> nn::Result<Var> {
    let w = random(tape.value(y).shape(), seed);
    tape.weighted_sum(y, &w)
}

#[test]
fn linear_layer() {
    let inputs = [random([2, 3, 1, 1], 1), random([4, 3, 1, 1], 2), random([1, 4, 1, 1], 3)];
    let r = gradient_check(&inputs, EPS, |t, v| {
        let y = t.linear(v[0], v[1], Some(v[2]))?;
        probe(t, y, 9)
    })
    .unwrap();
    assert_eq!(r.checked, 6 + 12 + 4);
    assert!(r.max_relative_error <= 1e-7, "{r:?}");
}

#[test]
fn conv2d_3x3() {
    let inputs = [random([1, 2, 5, 5], 4), random([3, 2, 3, 3], 5), random([1, 3, 1, 1], 6)];
    let r = gradient_check(&inputs, EPS, |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
        probe(t, y, 10)
    })
    .unwrap();
    assert!(r.max_relative_error <= 1e-4, "{r:?}");
}

#[test]
fn conv2d_strided() {
    let inputs = [random([2, 2, 6, 6], 7), random([3, 2, 4, 4], 8)];
    let r = gradient_check(&inputs, EPS, |t, v| {
        let y = t.conv2d(v[0], v[1], None, 2, 1)?;
        probe(t, y, 11)
    })
    .unwrap();
    assert!(r.max_relative_error <= 1e-4, "{r:?}");
}

#[test]
fn conv_transpose2d() {
    let inputs = [random([2, 3, 3, 3], 12), random([3, 2, 4, 4], 13), random([1, 2, 1, 1], 14)];
    let r = gradient_check(&inputs, EPS, |t, v| {
        let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)?;
        probe(t, y, 15)
    })
    .unwrap();
    assert!(r.max_relative_error <= 1e-4, "{r:?}");
}

#[test]
fn tanh_chain() {
    let inputs = [random([1, 2, 3, 3], 16)];
    let r = gradient_check(&inputs, EPS, |t, v| {
        let a = t.tanh(v[0]);
        let b = t.scale(a, 1.7);
        let c = t.tanh(b);
        let d = t.tanh(c);
        probe(t, d, 17)
    })
    .unwrap();
    assert!(r.max_relative_error <= 1e-6, "{r:?}");
}

#[test]
fn pointwise_activations() {
    let inputs = [random([1, 3, 4, 4], 18)];
    let r = gradient_check(&inputs, EPS, |t, v| {
        let a = t.leaky_relu(v[0], 0.2);
        let b = t.sigmoid(a);
        let r = t.relu(v[0]);
        let s = t.add(b, r)?;
        probe(t, s, 19)
    })
    .unwrap();
    assert!(r.max_relative_error <= 1e-4, "{r:?}");
}

#[test]
fn batch_norm() {
    let inputs = [random([2, 3, 3, 3], 20), random([1, 3, 1, 1], 21), random([1, 3, 1, 1], 22)];
    let r = gradient_check(&inputs, EPS, |t, v| {
        let y = t.batch_norm(v[0], v[1], v[2], 1e-5)?;
        probe(t, y, 23)
    })
    .unwrap();
    assert!(r.max_relative_error <= 1e-4, "{r:?}");
}

#[test]
fn concat_dropout_and_losses() {
    let inputs = [random([1, 2, 3, 3], 24), random([1, 1, 3, 3], 25), random([1, 3, 3, 3], 26)];
    let r = gradient_check(&inputs, EPS, |t, v| {
        let c = t.concat(v[0], v[1])?;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = t.dropout(c, 0.5, &mut rng);
        let bce = t.bce_with_logits(d, 1.0);
        let bce0 = t.bce_with_logits(v[2], 0.0);
        let l1 = t.mean_abs_diff(d, v[2])?;
        let diff = t.sub(d, v[2])?;
        let m = t.mean(diff);
        let scaled = t.scale(l1, 100.0);
        let a = t.add(bce, scaled)?;
        let b = t.add(a, m)?;
        t.add(b, bce0)
    })
    .unwrap();
    assert!(r.max_relative_error <= 1e-4, "{r:?}");
}

#[test]
fn gradient_check_reports_wrong_gradients() {
    // detach hides the dependency from the tape, so the analytic gradient
    // is zero while the numeric one is not.
    let inputs = [random([1, 1, 2, 2], 27)];
    let r = gradient_check(&inputs, EPS, |t, v| {
        let d = t.detach(v[0]);
        let s = t.add(d, v[0])?;
        probe(t, s, 28)
    })
    .unwrap();
    assert!(r.max_relative_error > 0.1);
}

#[test]
fn backward_on_non_scalar_is_an_error() {
    let inputs = [random([1, 1, 2, 2], 29)];
    let r = gradient_check(&inputs, EPS, |_, v| Ok(v[0]));
    assert!(matches!(r, Err(NnError::NotScalar(_))));
}

fn conv_and_transpose(x: &Tensor<f64>, y: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> (f64, f64) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w.clone());
    let cx = tape.conv2d(xv, wv, None, stride, pad).unwrap();
    let lhs = tape.value(cx).dot(y);
    let yv = tape.constant(y.clone());
    let ty = tape.conv_transpose2d(yv, wv, None, stride, pad).unwrap();
    let rhs = x.dot(tape.value(ty));
    (lhs, rhs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_transpose_is_adjoint_of_conv(
        seed in any::<u64>(),
        ci in 1usize..4,
        co in 1usize..4,
        k in 1usize..5,
        stride in 1usize..3,
        pad in 0usize..2,
        out in 1usize..5,
    ) {
        // Pick an input size whose strided convolution lands exactly on `out`.
        let size = (out - 1) * stride + k;
        prop_assume!(size > 2 * pad);
        let size = size - 2 * pad;
        let x = random([1, ci, size, size], seed);
        let y = random([1, co, out, out], seed ^ 1);
        let w = random([co, ci, k, k], seed ^ 2);
        let (lhs, rhs) = conv_and_transpose(&x, &y, &w, stride, pad);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>()) {
        let x = random([1, 2, 6, 6], seed);
        let w = random([3, 2, 4, 4], seed ^ 3);
        let run = || {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let wv = tape.constant(w.clone());
            let y = tape.conv2d(xv, wv, None, 2, 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = tape.dropout(y, 0.5, &mut rng);
            tape.value(d).clone()
        };
        prop_assert_eq!(run(), run());
    }
}
