use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

#[test]
fn square_derivative() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let y = tape.square(x);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.wrt(x).unwrap().item(), 6.0);
}

#[test]
fn softmax_cross_entropy_gradient() {
    let tape = Tape::new();
    let logits = tape.leaf(Tensor::<f64>::from_vec(&[1, 2], vec![0.0, 0.0]));
    let target = tape.constant(Tensor::from_vec(&[1, 2], vec![1.0, 0.0]));
    let logp = tape.log_softmax(logits);
    let loss = tape.neg(tape.sum(tape.mul(logp, target)));
    let g = tape.backward(loss).unwrap();
    let d = g.wrt(logits).unwrap().data().to_vec();
    assert!((d[0] + 0.5).abs() < 1e-15 && (d[1] - 0.5).abs() < 1e-15, "{d:?}");
}

#[test]
fn non_scalar_loss_is_rejected() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let y = tape.square(x);
    assert_eq!(
        tape.backward(y).unwrap_err(),
        AutodiffError::NonScalarLoss { shape: vec![2] }
    );
}

#[test]
fn nan_reports_originating_primitive() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::vector(vec![-1.0, 4.0]));
    let y = tape.sqrt(x);
    let z = tape.exp(y);
    let loss = tape.sum(z);
    assert_eq!(tape.backward(loss).unwrap_err(), AutodiffError::NonFinite { op: "sqrt" });
}

#[test]
#[should_panic(expected = "contract violation")]
fn mixing_tapes_panics() {
    let a = Tape::<f64>::new();
    let b = Tape::<f64>::new();
    let x = a.leaf(Tensor::scalar(1.0));
    let y = b.leaf(Tensor::scalar(1.0));
    let _ = b.add(x, y);
}

fn lecun_mlp(seed: u64) -> (ParamStore<f64>, Tensor<f64>, Tensor<f64>) {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |shape: &[usize], scale: f64| {
        let n = shape.iter().product();
        Tensor::from_vec(
            shape,
            (0..n)
                .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); scale * z })
                .collect(),
        )
    };
    let mut store = ParamStore::new();
    store.add("w1", normal(&[8, 16], 8f64.sqrt().recip()));
    store.add("b1", normal(&[16], 0.1));
    store.add("w2", normal(&[16, 4], 0.25));
    store.add("b2", normal(&[4], 0.1));
    let input = normal(&[1, 8], 1.0);
    let coef = normal(&[1, 4], 1.0);
    (store, input, coef)
}

fn mlp_check(seed: u64, h: f64) -> f64 {
    let (store, input, coef) = lecun_mlp(seed);
    gradient_check_store(
        |t, b| {
            let x = t.constant(input.clone());
            let h = t.tanh(t.add(t.matmul(x, b.get(ParamId(0))), b.get(ParamId(1))));
            let o = t.tanh(t.add(t.matmul(h, b.get(ParamId(2))), b.get(ParamId(3))));
            t.sum(t.mul(o, t.constant(coef.clone())))
        },
        &store,
        h,
    )
}

// At h = 1e-6 the central difference of an 8-16-4 net carries ~1e-10 of
// roundoff, which exceeds 1e-6 relative on its smallest coordinates for
// some draws. h = 1e-5 keeps truncation and roundoff both below that.
#[test]
fn two_layer_tanh_mlp_matches_finite_differences() {
    for seed in 0..20 {
        let err = mlp_check(seed, 1e-5);
        assert!(err < 1e-6, "seed {seed}: max relative error {err}");
    }
}

#[test]
fn mlp_finite_difference_error_is_roundoff_at_small_steps() {
    for seed in 0..20 {
        let fine = mlp_check(seed, 1e-6);
        let coarse = mlp_check(seed, 1e-5);
        assert!(fine < 1e-5, "seed {seed}: {fine}");
        assert!(coarse <= fine, "seed {seed}: {coarse} > {fine}");
    }
}

#[test]
fn tanh_check_and_linear_exactness() {
    let err = gradient_check(|t, x| t.sum(t.tanh(x)), &Tensor::scalar(0.3), 1e-6);
    assert!(err < 1e-7, "{err}");
    for x0 in [-3.0, 0.0, 0.7, 12.5] {
        let err = gradient_check(|t, x| t.sum(t.scale(x, 2.0)), &Tensor::scalar(x0), 1e-6);
        assert!(err < 1e-9, "{err}");
    }
}

#[test]
fn backward_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = randn(&mut rng, &[5, 3]);
    let x = randn(&mut rng, &[4, 5]);
    let run = || {
        let t = Tape::new();
        let wv = t.leaf(w.clone());
        let y = t.log_softmax(t.matmul(t.constant(x.clone()), wv));
        let l = t.mean(t.square(y));
        t.backward(l).unwrap().wrt(wv).unwrap().clone()
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn broadcast_gradient_equals_explicit_tiling() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let rows = rng.random_range(1..6);
        let cols = rng.random_range(1..6);
        let a = randn(&mut rng, &[rows, cols]);
        let b = randn(&mut rng, &[cols]);
        let coef = randn(&mut rng, &[rows, cols]);

        let t = Tape::new();
        let bv = t.leaf(b.clone());
        let l = t.sum(t.mul(t.mul(t.constant(a.clone()), bv), t.constant(coef.clone())));
        let g_broadcast = t.backward(l).unwrap().wrt(bv).unwrap().clone();

        let mut tiled = Vec::new();
        for _ in 0..rows {
            tiled.extend_from_slice(b.data());
        }
        let t = Tape::new();
        let tv = t.leaf(Tensor::from_vec(&[rows, cols], tiled));
        let l = t.sum(t.mul(t.mul(t.constant(a.clone()), tv), t.constant(coef.clone())));
        let g_tiled = t.backward(l).unwrap().wrt(tv).unwrap().clone();
        for c in 0..cols {
            let s: f64 = (0..rows).map(|r| g_tiled.data()[r * cols + c]).sum();
            assert!((s - g_broadcast.data()[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn reused_leaf_accumulates() {
    let t = Tape::new();
    let x = t.leaf(Tensor::scalar(2.0));
    let y = t.mul(x, x);
    let z = t.add(y, x);
    let g = t.backward(z).unwrap();
    assert_eq!(g.wrt(x).unwrap().item(), 5.0);
}

#[test]
fn works_in_single_precision() {
    let t = Tape::<f32>::new();
    let x = t.leaf(Tensor::vector(vec![1.0f32, -2.0]));
    let l = t.sum(t.huber(x, 1.0));
    let g = t.backward(l).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[1.0f32, -1.0]);
}
