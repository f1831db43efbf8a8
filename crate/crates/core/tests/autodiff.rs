use std::collections::BTreeMap;

use climat::autodiff::{grad_check, GradCheckOptions, Graph, LN_EPS};
use climat::{Error, Tensor};
use proptest::prelude::*;

fn bind(pairs: &[(&str, Tensor)]) -> BTreeMap<String, Tensor> {
    pairs.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
}

#[test]
fn matmul_with_identity_is_noop() {
    let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let mut g = Graph::new();
    let i = g.constant(Tensor::identity(2));
    let x = g.input("a", &[2, 2]);
    let y = g.matmul(i, x).unwrap();
    g.forward(&bind(&[("a", a.clone())])).unwrap();
    assert_eq!(g.value(y).unwrap(), &a);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[3]));
    let y = g.softmax(x, 0).unwrap();
    g.forward(&BTreeMap::new()).unwrap();
    for &p in g.value(y).unwrap().data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn layer_norm_hand_evaluation() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let gamma = g.constant(Tensor::ones(&[3]));
    let beta = g.constant(Tensor::zeros(&[3]));
    let y = g.layer_norm(x, gamma, beta, LN_EPS).unwrap();
    g.forward(&BTreeMap::new()).unwrap();
    let inv = 1.0 / (2.0f64 / 3.0 + 1e-5).sqrt();
    let expected = [-inv, 0.0, inv];
    let got = g.value(y).unwrap().data();
    for (a, b) in got.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((got[0] + 1.2247).abs() < 1e-4);
}

#[test]
fn square_derivative() {
    let mut g = Graph::new();
    let x = g.param("x", &[]).unwrap();
    let y = g.mul(x, x).unwrap();
    g.forward(&bind(&[("x", Tensor::scalar(3.0))])).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads["x"].item(), Some(6.0));
}

#[test]
fn softmax_cross_entropy_gradient_is_p_minus_onehot() {
    let mut g = Graph::new();
    let z = g.param("z", &[2]).unwrap();
    let p = g.softmax(z, 0).unwrap();
    let logp = g.log(p);
    let onehot = g.constant(Tensor::vector(vec![1.0, 0.0]));
    let picked = g.mul(logp, onehot).unwrap();
    let s = g.sum_all(picked);
    let loss = g.neg(s);
    g.forward(&bind(&[("z", Tensor::vector(vec![0.0, 0.0]))])).unwrap();
    let grads = g.backward(loss).unwrap();
    let d = grads["z"].data();
    assert!((d[0] + 0.5).abs() < 1e-15 && (d[1] - 0.5).abs() < 1e-15);
}

#[test]
fn broadcast_operand_gradient_sums_over_broadcast_axes() {
    let mut g = Graph::new();
    let a = g.param("a", &[2, 3]).unwrap();
    let b = g.param("b", &[3]).unwrap();
    let s = g.add(a, b).unwrap();
    let w = g.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let m = g.mul(s, w).unwrap();
    let loss = g.sum_all(m);
    g.forward(&bind(&[("a", Tensor::zeros(&[2, 3])), ("b", Tensor::zeros(&[3]))]))
        .unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads["b"].data(), &[5.0, 7.0, 9.0]);
    assert_eq!(grads["a"].data(), w_data());

    fn w_data() -> &'static [f64] {
        &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    }
}

#[test]
fn cubic_polynomial_passes_gradcheck() {
    // f(x) = sum(x^3 - 2x^2 + x)
    let mut g = Graph::new();
    let x = g.param("x", &[4]).unwrap();
    let x2 = g.mul(x, x).unwrap();
    let x3 = g.mul(x2, x).unwrap();
    let t = g.scale(x2, -2.0);
    let a = g.add(x3, t).unwrap();
    let b = g.add(a, x).unwrap();
    let f = g.sum_all(b);
    let point = bind(&[("x", Tensor::vector(vec![-1.5, 0.3, 0.9, 2.0]))]);
    let report = grad_check(&mut g, f, &point, &GradCheckOptions::default()).unwrap();
    assert!(report.max_relative_error < 1e-7, "{report:?}");
    assert_eq!(report.probed, 4);
}

#[test]
fn constant_graph_has_zero_gradient() {
    let mut g = Graph::new();
    let x = g.param("x", &[3]).unwrap();
    let c = g.scalar(2.5);
    let _unused = g.scale(x, 3.0);
    let point = bind(&[("x", Tensor::vector(vec![1.0, 2.0, 3.0]))]);
    let report = grad_check(&mut g, c, &point, &GradCheckOptions::default()).unwrap();
    assert_eq!(report.max_relative_error, 0.0);
    let grads = g.backward(c).unwrap();
    assert!(grads["x"].data().iter().all(|&v| v == 0.0));
}

#[test]
fn error_paths() {
    let mut g = Graph::new();
    let x = g.param("x", &[2]).unwrap();
    assert!(matches!(g.backward(x), Err(Error::NotEvaluated)));
    assert!(matches!(g.forward(&BTreeMap::new()), Err(Error::Unbound(_))));
    assert!(matches!(
        g.forward(&bind(&[("x", Tensor::zeros(&[3]))])),
        Err(Error::Shape { .. })
    ));
    g.forward(&bind(&[("x", Tensor::zeros(&[2]))])).unwrap();
    assert!(matches!(g.backward(x), Err(Error::NonScalarRoot(_))));

    let y = g.param("y", &[3]).unwrap();
    assert!(g.add(x, y).is_err());
    let m = g.param("m", &[2, 3]).unwrap();
    assert!(g.matmul(m, m).is_err());
}

#[test]
fn non_finite_intermediate_reports_node() {
    let mut g = Graph::new();
    let x = g.param("x", &[1]).unwrap();
    let l = g.log(x);
    let err = g.forward(&bind(&[("x", Tensor::vector(vec![0.0]))])).unwrap_err();
    match err {
        Error::NonFinite { node, op } => {
            assert_eq!(node, l.index());
            assert_eq!(op, "log");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn forward_backward_are_bitwise_deterministic() {
    let build = || {
        let mut g = Graph::new();
        let w = g.param("w", &[3, 4]).unwrap();
        let x = g.constant(Tensor::new(vec![2, 3], vec![0.1, -0.4, 0.7, 1.2, -0.3, 0.5]).unwrap());
        let h = g.matmul(x, w).unwrap();
        let a = g.gelu(h);
        let s = g.softmax(a, 1).unwrap();
        let l = g.log(s);
        let loss = g.mean_all(l);
        (g, loss)
    };
    let w = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let point = bind(&[("w", w)]);
    let (mut g1, l1) = build();
    let (mut g2, l2) = build();
    g1.forward(&point).unwrap();
    g2.forward(&point).unwrap();
    assert_eq!(g1.value(l1).unwrap().data()[0].to_bits(), g2.value(l2).unwrap().data()[0].to_bits());
    assert_eq!(g1.backward(l1).unwrap(), g2.backward(l2).unwrap());
}

/// Scalar-valued composite touching every primitive, for finite-difference checks.
fn every_primitive_graph() -> (Graph, climat::autodiff::NodeId) {
    let mut g = Graph::new();
    let a = g.param("a", &[2, 3, 4]).unwrap();
    let w = g.param("w", &[4, 4]).unwrap();
    let gamma = g.param("gamma", &[4]).unwrap();
    let beta = g.param("beta", &[4]).unwrap();
    let bias = g.param("bias", &[1, 4]).unwrap();
    let ln = g.layer_norm(a, gamma, beta, LN_EPS).unwrap();
    let h = g.matmul(ln, w).unwrap();
    let h = g.add(h, bias).unwrap();
    let act = g.gelu(h);
    let ht = g.transpose(act).unwrap(); // [2,4,3]
    let scores = g.matmul(act, ht).unwrap(); // [2,3,3] batched
    let scores = g.scale(scores, 0.5);
    let attn = g.softmax(scores, 2).unwrap();
    let mixed = g.matmul(attn, act).unwrap(); // [2,3,4]
    let left = g.slice(mixed, 2, 0, 2).unwrap();
    let right = g.slice(mixed, 2, 2, 2).unwrap();
    let cat = g.concat(&[right, left], 2).unwrap();
    let diff = g.sub(cat, a).unwrap();
    let ab = g.abs(diff);
    let mx = g.max(ab, 1).unwrap(); // [2,1,4]
    let mn = g.mean(ab, 2).unwrap(); // [2,3,1]
    let e = g.exp(mn);
    let one = g.add_scalar(e, 1.0);
    let lg = g.log(one);
    let q = g.div(mx, one).unwrap(); // [2,3,4]
    let s1 = g.sum(q, 0).unwrap();
    let s1 = g.neg(s1);
    let bc = g.broadcast_to(lg, &[2, 3, 4]).unwrap();
    let prod = g.mul(bc, s1).unwrap();
    let total = g.sum_all(prod);
    (g, total)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_primitive_matches_finite_differences(seed in 0u64..10_000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (mut g, root) = every_primitive_graph();
        let mut point = BTreeMap::new();
        for (name, id) in g.params() {
            let shape = g.shape(id).to_vec();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            point.insert(name.to_string(), Tensor::new(shape, data).unwrap());
        }
        let report = grad_check(&mut g, root, &point, &GradCheckOptions::default()).unwrap();
        prop_assert!(report.max_relative_error < 1e-6, "{:?}", report);
    }

    #[test]
    fn softmax_rows_are_distributions(data in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![3, 4], data).unwrap());
        let y = g.softmax(x, 1).unwrap();
        g.forward(&BTreeMap::new()).unwrap();
        let v = g.value(y).unwrap();
        for r in 0..3 {
            let row = v.row(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
