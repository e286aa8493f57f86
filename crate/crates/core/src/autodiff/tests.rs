use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn tensor(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(rows, cols, v.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Central differences of a loss built by `f` from a single parameter.
fn central_diff(
    x: &Tensor<f64>,
    h: f64,
    f: &dyn Fn(&mut Tape<f64>, Var) -> Var,
) -> Tensor<f64> {
    let value_at = |t: &Tensor<f64>| {
        let mut tape = Tape::new();
        let v = tape.param(t.clone());
        let out = f(&mut tape, v);
        tape.value(out).item()
    };
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for k in 0..x.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let plus = value_at(&probe);
        probe.data_mut()[k] = orig - h;
        let minus = value_at(&probe);
        probe.data_mut()[k] = orig;
        out.data_mut()[k] = (plus - minus) / (2.0 * h);
    }
    out
}

fn analytic(x: &Tensor<f64>, f: &dyn Fn(&mut Tape<f64>, Var) -> Var) -> Tensor<f64> {
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v);
    tape.backward(out).unwrap().wrt(v)
}

fn max_rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

fn assert_fd(x: &Tensor<f64>, f: &dyn Fn(&mut Tape<f64>, Var) -> Var) {
    let err = max_rel_err(&analytic(x, f), &central_diff(x, 1e-5, f));
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn leaky_relu_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(tensor(1, 3, &[2.0, -1.0, -3.0]));
    let y = tape.leaky_relu(x, 0.2);
    assert_eq!(tape.value(y).data(), &[2.0, -0.2, -0.6000000000000001]);
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap().wrt(x);
    assert_eq!(g.data(), &[1.0, 0.2, 0.2]);
}

#[test]
fn cross_entropy_uniform_logits_is_ln_c() {
    let mut tape = Tape::<f64>::new();
    let logits = tape.param(Tensor::zeros(3, 7));
    let loss = tape
        .cross_entropy_with_logits(logits, Arc::from(vec![0, 3, 6]), Arc::from(vec![0, 1, 2]))
        .unwrap();
    assert!((tape.value(loss).item() - 7f64.ln()).abs() < 1e-12);
    assert!((7f64.ln() - 1.9459).abs() < 1e-4);
}

#[test]
fn cross_entropy_vanishes_with_margin() {
    let mut last = f64::INFINITY;
    for margin in [1.0, 5.0, 20.0, 50.0] {
        let mut tape = Tape::<f64>::new();
        let logits = tape.param(tensor(1, 3, &[margin, 0.0, 0.0]));
        let loss = tape
            .cross_entropy_with_logits(logits, Arc::from(vec![0]), Arc::from(vec![0]))
            .unwrap();
        let l = tape.value(loss).item();
        assert!(l < last);
        last = l;
    }
    assert!(last < 1e-20);
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, 5, 3);
    let targets: Arc<[u32]> = Arc::from(vec![0, 2, 1, 1, 0]);
    let mask: Arc<[u32]> = Arc::from(vec![0, 2, 3]);
    let f = |t: &mut Tape<f64>, v: Var| {
        t.cross_entropy_with_logits(v, targets.clone(), mask.clone())
            .unwrap()
    };
    assert_fd(&x, &f);

    // Unmasked rows get exactly zero gradient.
    let g = analytic(&x, &f);
    assert!(g.row(1).iter().chain(g.row(4)).all(|&v| v == 0.0));
}

#[test]
fn cross_entropy_rejects_empty_mask() {
    let mut tape = Tape::<f64>::new();
    let logits = tape.param(Tensor::zeros(2, 2));
    assert!(tape
        .cross_entropy_with_logits(logits, Arc::from(vec![0, 1]), Arc::from(Vec::<u32>::new()))
        .is_err());
}

#[test]
fn linear_loss_gradient_is_outer_product() {
    // loss = sum(W x) → dW[i][j] = x[j] for every row i.
    let mut tape = Tape::<f64>::new();
    let w = tape.param(tensor(2, 3, &[1., 2., 3., 4., 5., 6.]));
    let x = tape.constant(tensor(3, 1, &[0.5, -1.0, 2.0]));
    let y = tape.matmul(w, x).unwrap();
    let loss = tape.sum(y);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.wrt(w).data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    assert!(grads.get(x).is_none());
}

#[test]
fn disconnected_parameter_gets_zero_gradient() {
    let mut tape = Tape::<f64>::new();
    let used = tape.param(tensor(1, 2, &[1.0, 2.0]));
    let unused = tape.param(tensor(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let loss = tape.sum(used);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.wrt(unused), Tensor::zeros(2, 2));
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::zeros(2, 2));
    assert!(tape.backward(x).is_err());
}

#[test]
fn grad_check_linear_regression_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, 6, 3);
    let y = random(&mut rng, 6, 1);
    let params = vec![("w".to_string(), random(&mut rng, 3, 1))];
    let report = grad_check(
        |tape, vars| {
            let xv = tape.constant(x.clone());
            let pred = tape.matmul(xv, vars[0])?;
            let neg = tape.constant(y.map(|v| -v));
            let r = tape.add(pred, neg)?;
            let sq = tape.mul(r, r)?;
            Ok(tape.sum(sq))
        },
        &params,
        1e-5,
        1e-7,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn grad_check_catches_wrong_backward_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, 4, 3);
    let params = vec![("w".to_string(), random(&mut rng, 3, 2))];
    let report = grad_check(
        |tape, vars| {
            tape.inject_backward_fault();
            let xv = tape.constant(x.clone());
            let y = tape.matmul(xv, vars[0])?;
            let y = tape.elu(y);
            Ok(tape.sum(y))
        },
        &params,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(!report.passed());
    assert_eq!(report.worst().unwrap().name, "w");
}

#[test]
fn replay_reproduces_every_value_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::<f64>::new();
    let x = tape.param(random(&mut rng, 6, 4));
    let w = tape.param(random(&mut rng, 4, 3));
    let z = tape.matmul(x, w).unwrap();
    let z = tape.leaky_relu(z, 0.2);
    let e = tape.gather_rows(z, Arc::from(vec![0, 1, 1, 5, 4, 2, 3])).unwrap();
    let a = tape.segment_softmax(e, Arc::from(vec![0, 2, 2, 7])).unwrap();
    let s = tape.scatter_add_rows(a, Arc::from(vec![0, 0, 2, 2, 1, 1, 1]), 3).unwrap();
    let zero = tape.constant(Tensor::zeros(3, 3));
    let u = tape.lif_integrate(zero, None, s, 1.0, 0.0).unwrap();
    let o = tape.lif_fire(u, 0.5, 1.0);
    let u = tape.lif_reset(u, o, 0.0).unwrap();
    let u2 = tape.lif_integrate(u, Some(o), s, 0.9, 0.0).unwrap();
    let m = tape.mean_rows(u2).unwrap();
    let _ = tape.sum(m);
    let replayed = tape.replay();
    for (stored, again) in tape.values().zip(&replayed) {
        assert_eq!(stored, again);
    }
}

#[test]
fn gather_scatter_are_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let n = rng.gen_range(1..10);
        let m = rng.gen_range(1..20);
        let idx: Vec<u32> = (0..m).map(|_| rng.gen_range(0..n) as u32).collect();
        let idx: Arc<[u32]> = Arc::from(idx);
        let x = random(&mut rng, n, 3);
        let y = random(&mut rng, m, 3);
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let gx = tape.gather_rows(xv, idx.clone()).unwrap();
        let sy = tape.scatter_add_rows(yv, idx, n).unwrap();
        let lhs: f64 = tape.value(gx).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(tape.value(sy).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}

#[test]
fn gradient_accumulation_is_additive() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, 3, 3);
    let l1 = |t: &mut Tape<f64>, v: Var| {
        let y = t.elu(v);
        t.sum(y)
    };
    let l2 = |t: &mut Tape<f64>, v: Var| {
        let y = t.mul(v, v).unwrap();
        t.sum(y)
    };
    let both = |t: &mut Tape<f64>, v: Var| {
        let a = l1(t, v);
        let b = l2(t, v);
        t.add(a, b).unwrap()
    };
    let g1 = analytic(&x, &l1);
    let g2 = analytic(&x, &l2);
    let g = analytic(&x, &both);
    assert_eq!(g, g1.zip_map(&g2, |a, b| a + b));
}

fn away_from_zero(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|v| if v.abs() < 1e-3 { v + 0.01 } else { v })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn smooth_primitives_match_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = away_from_zero(random(&mut rng, 4, 3));
        let w = random(&mut rng, 3, 2);
        let other = random(&mut rng, 4, 3);
        let left = random(&mut rng, 2, 4);
        let row = random(&mut rng, 1, 3);
        let col = random(&mut rng, 4, 1);
        let weights = random(&mut rng, 4, 6);
        let idx: Arc<[u32]> = Arc::from(vec![3, 0, 0, 2, 1, 3]);
        let offsets: Arc<[usize]> = Arc::from(vec![0, 1, 1, 4, 6]);
        let factors: Arc<[f64]> = Arc::from(vec![0.5, -2.0, 1.5, 3.0]);

        // Each case ends with a weighted sum so every output entry matters.
        let weighted = |t: &mut Tape<f64>, y: Var, seed_w: &Tensor<f64>| {
            let (r, c) = t.shape(y);
            let wv = t.constant(Tensor::from_fn(r, c, |i, j| seed_w.get(i % 4, j % 6)));
            let p = t.mul(y, wv).unwrap();
            t.sum(p)
        };
        let cases: Vec<Box<dyn Fn(&mut Tape<f64>, Var) -> Var>> = vec![
            Box::new(|t, v| { let wv = t.constant(w.clone()); let y = t.matmul(v, wv).unwrap(); weighted(t, y, &weights) }),
            Box::new(|t, v| { let l = t.constant(left.clone()); let y = t.matmul(l, v).unwrap(); weighted(t, y, &weights) }),
            Box::new(|t, v| { let o = t.constant(other.clone()); let y = t.mul(v, o).unwrap(); weighted(t, y, &weights) }),
            Box::new(|t, v| { let r = t.constant(row.clone()); let y = t.add_row(v, r).unwrap(); let y = t.mul(y, y).unwrap(); weighted(t, y, &weights) }),
            Box::new(|t, v| { let c = t.constant(col.clone()); let y = t.mul_col(v, c).unwrap(); weighted(t, y, &weights) }),
            Box::new(|t, v| { let y = t.scale_rows(v, factors.clone()).unwrap(); weighted(t, y, &weights) }),
            Box::new(|t, v| { let y = t.leaky_relu(v, 0.2); weighted(t, y, &weights) }),
            Box::new(|t, v| { let y = t.elu(v); weighted(t, y, &weights) }),
            Box::new(|t, v| { let a = t.slice_cols(v, 1, 2).unwrap(); let y = t.concat_cols(&[v, a]).unwrap(); weighted(t, y, &weights) }),
            Box::new(|t, v| { let y = t.gather_rows(v, idx.clone()).unwrap(); weighted(t, y, &weights) }),
            Box::new(|t, v| { let g = t.gather_rows(v, idx.clone()).unwrap(); let y = t.scatter_add_rows(g, idx.clone(), 4).unwrap(); weighted(t, y, &weights) }),
            Box::new(|t, v| { let g = t.gather_rows(v, idx.clone()).unwrap(); let y = t.segment_softmax(g, offsets.clone()).unwrap(); weighted(t, y, &weights) }),
            Box::new(|t, v| { let y = t.mean_rows(v).unwrap(); weighted(t, y, &weights) }),
            Box::new(|t, v| { let y = t.scale(v, -1.5); let y = t.mul(y, v).unwrap(); weighted(t, y, &weights) }),
            Box::new(|t, v| t.cross_entropy_with_logits(v, Arc::from(vec![0, 1, 2, 0]), Arc::from(vec![0, 1, 3])).unwrap()),
        ];
        for (k, case) in cases.iter().enumerate() {
            let err = max_rel_err(&analytic(&x, case.as_ref()), &central_diff(&x, 1e-5, case.as_ref()));
            prop_assert!(err < 1e-4, "case {} rel err {}", k, err);
        }
    }
}

#[test]
fn dropout_scales_forward_and_backward_by_mask() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(tensor(1, 4, &[1.0, 2.0, 3.0, 4.0]));
    let y = tape.dropout(x, Arc::from(vec![2.0, 0.0, 2.0, 0.0])).unwrap();
    assert_eq!(tape.value(y).data(), &[2.0, 0.0, 6.0, 0.0]);
    let s = tape.sum(y);
    assert_eq!(tape.backward(s).unwrap().wrt(x).data(), &[2.0, 0.0, 2.0, 0.0]);
}
