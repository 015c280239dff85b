use std::rc::Rc;

use adgraph::gradcheck::gradcheck;
use adgraph::{AdError, Adam, AdamConfig, Result, Tape, Tensor, Var, HAZARD_LOGIT_CAP};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const DRAWS: usize = 100;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Reduces `out` to a scalar with fixed pseudo-random weights so every element
/// contributes a distinct amount to the root.
fn weighted_sum(tape: &mut Tape, out: Var) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(&shape, (0..n).map(|i| 0.3 + ((i * 7919) % 13) as f64 / 10.0).collect())?;
    let w = tape.constant(w);
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

fn check_op<G, F>(name: &str, seed: u64, mut gen: G, f: F)
where
    G: FnMut(&mut ChaCha8Rng) -> Vec<Tensor>,
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for draw in 0..DRAWS {
        let inputs = gen(&mut rng);
        let report = gradcheck(&inputs, H, |t, v| {
            let out = f(t, v)?;
            weighted_sum(t, out)
        })
        .unwrap();
        assert!(
            report.max_rel_error < TOL,
            "{name} draw {draw}: rel err {} ({} vs {})",
            report.max_rel_error,
            report.analytic,
            report.numeric
        );
    }
}

#[test]
fn elementwise_binary_ops_match_finite_differences() {
    let pair = |rng: &mut ChaCha8Rng| vec![random(rng, &[3, 4], -2.0, 2.0), random(rng, &[3, 4], -2.0, 2.0)];
    check_op("add", 1, pair, |t, v| t.add(v[0], v[1]));
    check_op("sub", 2, pair, |t, v| t.sub(v[0], v[1]));
    check_op("mul", 3, pair, |t, v| t.mul(v[0], v[1]));
    check_op(
        "div",
        4,
        |rng| vec![random(rng, &[3, 4], -2.0, 2.0), random(rng, &[3, 4], 0.5, 2.0)],
        |t, v| t.div(v[0], v[1]),
    );
}

#[test]
fn unary_ops_match_finite_differences() {
    let wide = |rng: &mut ChaCha8Rng| vec![random(rng, &[2, 5], -3.0, 3.0)];
    let positive = |rng: &mut ChaCha8Rng| vec![random(rng, &[2, 5], 0.2, 3.0)];
    check_op("neg", 10, wide, |t, v| t.neg(v[0]));
    check_op("scale", 11, wide, |t, v| t.scale(v[0], -1.7));
    check_op("add_scalar", 12, wide, |t, v| t.add_scalar(v[0], 0.4));
    check_op("tanh", 13, wide, |t, v| t.tanh(v[0]));
    check_op("sigmoid", 14, wide, |t, v| t.sigmoid(v[0]));
    check_op("softplus", 15, wide, |t, v| t.softplus(v[0]));
    check_op("exp", 16, wide, |t, v| t.exp(v[0]));
    check_op("square", 17, wide, |t, v| t.square(v[0]));
    check_op("sin", 18, wide, |t, v| t.sin(v[0]));
    check_op("cos", 19, wide, |t, v| t.cos(v[0]));
    check_op("log", 20, positive, |t, v| t.log(v[0]));
    check_op("sqrt", 21, positive, |t, v| t.sqrt(v[0]));
    check_op("reshape", 22, wide, |t, v| t.reshape(v[0], &[5, 2]));
}

/// Inputs kept at least `margin` away from `kink`.
fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], kink: f64, margin: f64) -> Tensor {
    let mut t = random(rng, shape, kink - 3.0, kink + 3.0);
    for v in t.data_mut() {
        if (*v - kink).abs() < margin {
            *v = kink + margin.copysign(*v - kink);
        }
    }
    t
}

#[test]
fn kinked_ops_match_away_from_kinks() {
    check_op(
        "clamp_min",
        30,
        |rng| vec![away_from(rng, &[3, 3], 0.25, 1e-3)],
        |t, v| t.clamp_min(v[0], 0.25),
    );
    check_op(
        "clamp_max",
        31,
        |rng| vec![away_from(rng, &[3, 3], -0.5, 1e-3)],
        |t, v| t.clamp_max(v[0], -0.5),
    );
    check_op(
        "l1_norm",
        32,
        |rng| vec![away_from(rng, &[4, 2], 0.0, 1e-3)],
        |t, v| t.l1_norm(v[0]),
    );
    check_op(
        "min_reduce",
        33,
        |rng| {
            // distinct values so the argmin is unique by a margin
            let mut t = random(rng, &[1, 6], -2.0, 2.0);
            let base = rng.random_range(-1.0..1.0);
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v = base + 0.1 * i as f64 + 0.01 * v.sin();
            }
            vec![t]
        },
        |t, v| t.min_reduce(v[0]),
    );
    check_op(
        "disk_overlap",
        34,
        |rng| vec![random(rng, &[2, 6], 0.01, 0.98)],
        |t, v| t.disk_overlap(v[0]),
    );
}

#[test]
fn reductions_and_layout_ops_match_finite_differences() {
    let m = |rng: &mut ChaCha8Rng| vec![random(rng, &[4, 3], -2.0, 2.0)];
    check_op("sum", 40, m, |t, v| t.sum(v[0]));
    check_op("mean", 41, m, |t, v| t.mean(v[0]));
    check_op("sum_axis0", 42, m, |t, v| t.sum_axis(v[0], 0));
    check_op("sum_axis1", 43, m, |t, v| t.sum_axis(v[0], 1));
    check_op("smooth_min", 44, m, |t, v| t.smooth_min(v[0], 0.1));
    check_op("slice_rows", 45, m, |t, v| t.slice(v[0], 0, 1, 2));
    check_op("slice_cols", 46, m, |t, v| t.slice(v[0], 1, 1, 2));
    check_op(
        "concat0",
        47,
        |rng| vec![random(rng, &[2, 3], -1.0, 1.0), random(rng, &[1, 3], -1.0, 1.0)],
        |t, v| t.concat(&[v[0], v[1], v[0]], 0),
    );
    check_op(
        "concat1",
        48,
        |rng| vec![random(rng, &[2, 3], -1.0, 1.0), random(rng, &[2, 1], -1.0, 1.0)],
        |t, v| t.concat(&[v[0], v[1]], 1),
    );
    let idx: Rc<[usize]> = Rc::from(vec![3, 0, 0, 2]);
    let i2 = idx.clone();
    check_op("gather_rows", 49, m, move |t, v| t.gather_rows(v[0], i2.clone()));
    check_op("scatter_add_rows", 50, m, move |t, v| {
        t.scatter_add_rows(v[0], idx.clone(), 5)
    });
    check_op(
        "hazard_chain",
        51,
        |rng| vec![random(rng, &[3, 7], -4.0, 1.0)],
        |t, v| t.hazard_chain(v[0]),
    );
    check_op(
        "hazard_chain_saturated",
        52,
        |rng| vec![random(rng, &[2, 24], -2.0, 3.0)],
        |t, v| t.hazard_chain(v[0]),
    );
}

#[test]
fn hazard_chain_logits_stay_bounded_on_long_rows() {
    let mut t = Tape::new();
    let l = t.constant(Tensor::full(&[1, 400], 0.5));
    let z = t.hazard_chain(l).unwrap();
    let v = t.value(z);
    assert!(v.data().iter().all(|z| *z <= HAZARD_LOGIT_CAP));
    assert!(v.data()[399] > 19.0);
}

#[test]
fn hazard_chain_small_masses_give_conditional_probabilities() {
    // Masses 0.01 each: the k-th conditional probability is 0.01 / (1 − 0.01·(k−1))
    // up to the O(m²) softplus approximation.
    let mut t = Tape::new();
    let l = t.constant(Tensor::full(&[1, 5], 0.01f64.ln()));
    let z = t.hazard_chain(l).unwrap();
    for (k, z) in t.value(z).data().iter().enumerate() {
        let q = 1.0 / (1.0 + (-z).exp());
        let exact = 0.01 / (1.0 - 0.01 * k as f64);
        assert!((q - exact).abs() < 2e-4, "step {k}: {q} vs {exact}");
    }
}

#[test]
fn matmul_and_affine_match_finite_differences() {
    check_op(
        "matmul",
        60,
        |rng| vec![random(rng, &[3, 4], -1.0, 1.0), random(rng, &[4, 2], -1.0, 1.0)],
        |t, v| t.matmul(v[0], v[1]),
    );
    check_op(
        "affine",
        61,
        |rng| {
            vec![
                random(rng, &[5, 3], -1.0, 1.0),
                random(rng, &[3, 4], -1.0, 1.0),
                random(rng, &[4], -1.0, 1.0),
            ]
        },
        |t, v| t.affine(v[0], v[1], v[2]),
    );
}

#[test]
fn two_layer_network_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for draw in 0..DRAWS {
        let inputs = vec![
            random(&mut rng, &[6, 3], -1.0, 1.0),
            random(&mut rng, &[3, 8], -1.0, 1.0),
            random(&mut rng, &[8], -0.5, 0.5),
            random(&mut rng, &[8, 1], -1.0, 1.0),
            random(&mut rng, &[1], -0.5, 0.5),
        ];
        let report = gradcheck(&inputs, H, |t, v| {
            let h = t.affine(v[0], v[1], v[2])?;
            let h = t.tanh(h)?;
            let y = t.affine(h, v[3], v[4])?;
            let y = t.sigmoid(y)?;
            t.mean(y)
        })
        .unwrap();
        assert!(report.max_rel_error < TOL, "draw {draw}: {report:?}");
    }
}

#[test]
fn sigmoid_of_zero_is_half() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::scalar(0.0));
    let y = tape.sigmoid(x).unwrap();
    assert_eq!(tape.scalar_value(y), 0.5);
}

#[test]
fn matmul_with_identity_returns_operand() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&mut rng, &[3, 4], -5.0, 5.0);
    let mut tape = Tape::new();
    let i = tape.constant(Tensor::identity(3));
    let av = tape.constant(a.clone());
    let p = tape.matmul(i, av).unwrap();
    assert_eq!(tape.value(p), &a);
}

#[test]
fn softplus_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, &[1, 20], -10.0, 10.0);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = tape.softplus(xv).unwrap();
    for (got, &xi) in tape.value(y).data().iter().zip(x.data()) {
        assert!((got - (1.0 + xi.exp()).ln()).abs() < 1e-12);
    }
}

#[test]
fn sum_gradient_is_all_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(&[2, 3], vec![1.0, -2.0, 0.5, 4.0, 9.0, -1.0]).unwrap());
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(x), Tensor::ones(&[2, 3]));
}

#[test]
fn product_rule() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let y = tape.leaf(Tensor::scalar(2.0));
    let p = tape.mul(x, y).unwrap();
    let g = tape.backward(p).unwrap();
    assert_eq!((g.wrt(x).item(), g.wrt(y).item()), (2.0, 3.0));
}

#[test]
fn unused_leaves_get_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::row(&[1.0, 2.0]));
    let unused = tape.leaf(Tensor::row(&[5.0, 6.0, 7.0]));
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(unused), Tensor::zeros(&[1, 3]));
}

#[test]
fn non_scalar_root_is_rejected() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::row(&[1.0, 2.0]));
    let y = tape.tanh(x).unwrap();
    assert_eq!(tape.backward(y).unwrap_err(), AdError::NonScalarRoot(vec![1, 2]));
}

#[test]
fn shape_mismatch_is_a_contract_error() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(&[2, 3]));
    let b = tape.leaf(Tensor::zeros(&[3, 2]));
    assert!(matches!(tape.add(a, b), Err(AdError::Shape { op: "add", .. })));
    assert!(matches!(tape.matmul(a, a), Err(AdError::Shape { op: "matmul", .. })));
    let bias = tape.leaf(Tensor::zeros(&[3]));
    assert!(matches!(tape.affine(a, a, bias), Err(AdError::Shape { .. })));
}

#[test]
fn non_finite_result_is_a_numeric_error() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(-1.0));
    assert_eq!(tape.log(x).unwrap_err(), AdError::NonFinite { op: "log" });
    let big = tape.leaf(Tensor::scalar(1000.0));
    assert_eq!(tape.exp(big).unwrap_err(), AdError::NonFinite { op: "exp" });
}

#[test]
fn min_reduce_routes_ties_to_lowest_index() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::row(&[3.0, 1.0, 1.0, 2.0]));
    let m = tape.min_reduce(x).unwrap();
    let g = tape.backward(m).unwrap();
    assert_eq!(g.wrt(x).data(), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn smooth_min_bias_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let x = random(&mut rng, &[1, 120], 0.0, 5.0);
        let exact = x.data().iter().copied().fold(f64::INFINITY, f64::min);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let s = tape.smooth_min(xv, 0.1).unwrap();
        let s = tape.scalar_value(s);
        assert!(s <= exact + 1e-12 && s >= exact - 0.1 * (120f64).ln() - 1e-12);
    }
}

#[test]
fn convex_quadratic_converges_under_adam() {
    // f(w) = ½ Σ a_i (w_i − c_i)², gradient a ∘ (w − c)
    let a = [1.0, 2.0, 3.0];
    let c = [0.5, -1.0, 2.0];
    let mut w = vec![Tensor::row(&[3.0, 2.0, -1.0])];
    // β1 = 0.5 damps the momentum oscillation that β1 = 0.9 shows near the optimum.
    let config = AdamConfig {
        lr: 0.1,
        beta1: 0.5,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(config, &w);
    let grad = |w: &Tensor| {
        Tensor::row(&[
            a[0] * (w.data()[0] - c[0]),
            a[1] * (w.data()[1] - c[1]),
            a[2] * (w.data()[2] - c[2]),
        ])
    };
    for _ in 0..200 {
        let g = grad(&w[0]);
        adam.step(&mut w, &[g]).unwrap();
    }
    let norm = grad(&w[0]).data().iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(norm < 1e-6, "gradient norm {norm}");
}

fn replay(x: &Tensor, w: &Tensor) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let wv = tape.leaf(w.clone());
    let h = tape.matmul(xv, wv).unwrap();
    let h = tape.tanh(h).unwrap();
    let s = tape.smooth_min(h, 0.1).unwrap();
    let g = tape.backward(s).unwrap();
    (tape.value(s).clone(), g.wrt(wv))
}

proptest! {
    #[test]
    fn value_used_twice_accumulates_both_paths(v in -10.0f64..10.0) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(v));
        let twice = tape.add(x, x).unwrap();
        let gx = tape.backward(twice).unwrap().wrt(x).item();

        let mut tape2 = Tape::new();
        let y = tape2.leaf(Tensor::scalar(v));
        let scaled = tape2.scale(y, 2.0).unwrap();
        let gy = tape2.backward(scaled).unwrap().wrt(y).item();
        prop_assert_eq!(gx, gy);
    }

    #[test]
    fn tape_replay_is_bit_identical(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[3, 4], -1.0, 1.0);
        let w = random(&mut rng, &[4, 5], -1.0, 1.0);
        let first = replay(&x, &w);
        let second = replay(&x, &w);
        prop_assert_eq!(first.0.data(), second.0.data());
        prop_assert_eq!(first.1.data(), second.1.data());
    }

    #[test]
    fn node_ids_increase_in_creation_order(n in 1usize..20) {
        let mut tape = Tape::new();
        let mut last = tape.leaf(Tensor::scalar(0.1));
        for _ in 0..n {
            let next = tape.tanh(last).unwrap();
            prop_assert!(next > last);
            last = next;
        }
    }
}
