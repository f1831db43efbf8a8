use std::collections::BTreeMap;

use climat::autodiff::{grad_check, GradCheckOptions, Graph};
use climat::losses::{
    self, build_objective, club, club_grad_identities, constrain_tau, cross_entropy, tce, LossKind, ObjectiveSpec,
    TaskTargets, NOISE_PARAM,
};
use climat::metrics::{balanced_accuracy, ece, ece_from_confidences, hand_till_mauc};
use climat::stats::{wilcoxon_signed_rank, Wilcoxon};
use climat::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn ce_shift_invariance() {
    let l = [0.3, -1.2, 2.2, 0.0];
    for c in [-50.0, 3.0, 700.0] {
        let shifted: Vec<f64> = l.iter().map(|v| v + c).collect();
        assert!((cross_entropy(&shifted, 2).unwrap() - cross_entropy(&l, 2).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn club_is_affine_in_tau() {
    let l = [0.5, -0.4, 1.7];
    let ce = cross_entropy(&l, 1).unwrap();
    let slope = ce - 3f64.ln();
    for tau in [0.1, 0.35, 0.8] {
        let d = club(&l, 1, tau + 0.1).unwrap() - club(&l, 1, tau).unwrap();
        assert!((d - 0.1 * slope).abs() < 1e-12);
    }
}

#[test]
fn grad_identity_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::new(vec![4, 3], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let w = Tensor::new(vec![3, 5], (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let r = club_grad_identities(&x, &w, &[0, 4, 2, 2], 0.7).unwrap();
    assert!(r.theta < 1e-8 && r.tau < 1e-8, "{r:?}");
    let r = club_grad_identities(&x, &w, &[0, 4, 2, 2], 1.0).unwrap();
    assert_eq!(r.theta, 0.0);

    // uniform logits: CE = log N_c, so ∂CLUB/∂τ = 0
    let zero = Tensor::zeros(&[3, 5]);
    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let wi = g.param("w", &[3, 5]).unwrap();
    let t = g.param("t", &[1]).unwrap();
    let logits = g.matmul(xi, wi).unwrap();
    let y = g.constant(TaskTargets::from_options(5, &[Some(1); 4]).onehot().unwrap().reshape(vec![4, 5]).unwrap());
    let per = losses::graph::club(&mut g, logits, y, t).unwrap();
    let root = g.mean_all(per);
    let point: BTreeMap<String, Tensor> = [("w".to_string(), zero), ("t".to_string(), Tensor::vector(vec![0.4]))].into();
    g.forward(&point).unwrap();
    assert!(g.backward(root).unwrap()["t"].data()[0].abs() < 1e-15);
}

#[test]
fn tau_graph_matches_scalar_and_gradchecks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in 1..6 {
        let sigma: Vec<f64> = (0..t).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut g = Graph::new();
        let s = g.param("s", &[t]).unwrap();
        let tau = losses::graph::constrain_tau(&mut g, s, 0.1).unwrap();
        let w = g.constant(Tensor::vector((0..t).map(|i| i as f64 + 0.5).collect()));
        let wt = g.mul(tau, w).unwrap();
        let root = g.sum_all(wt);
        let point: BTreeMap<String, Tensor> = [("s".to_string(), Tensor::vector(sigma.clone()))].into();
        g.forward(&point).unwrap();
        assert_eq!(g.value(tau).unwrap().data(), constrain_tau(&sigma, 0.1).unwrap().as_slice());
        let rep = grad_check(&mut g, root, &point, &GradCheckOptions::default()).unwrap();
        assert!(rep.max_relative_error < 1e-6, "{rep:?}");
    }
}

fn objective_value(targets: &[TaskTargets], kind: LossKind, lambda: f64, logits: &[Tensor], diag: &Tensor) -> (f64, BTreeMap<String, Tensor>) {
    let mut g = Graph::new();
    let traj: Vec<_> = (0..logits.len()).map(|t| g.param(&format!("f{t}"), logits[t].shape()).unwrap()).collect();
    let d = g.param("d", diag.shape()).unwrap();
    let spec = ObjectiveSpec { kind, lambda, tau_eps: 0.1, diagnosis_ce: false };
    let nodes = build_objective(&mut g, &traj, d, targets, &spec).unwrap();
    let mut point: BTreeMap<String, Tensor> = logits.iter().enumerate().map(|(t, l)| (format!("f{t}"), l.clone())).collect();
    point.insert("d".into(), diag.clone());
    point.insert(NOISE_PARAM.into(), Tensor::vector((0..logits.len()).map(|t| 0.5 + 0.3 * t as f64).collect()));
    g.forward(&point).unwrap();
    let v = g.value(nodes.total).unwrap().item().unwrap();
    (v, g.backward(nodes.total).unwrap())
}

fn random_batch(rng: &mut ChaCha8Rng, b: usize, tasks: usize, nc: usize) -> (Vec<TaskTargets>, Vec<Tensor>, Tensor) {
    let mut targets: Vec<TaskTargets> = (0..tasks)
        .map(|_| TaskTargets {
            classes: nc,
            labels: (0..b).map(|_| rng.gen_range(0..nc)).collect(),
            mask: (0..b).map(|_| rng.gen_bool(0.7)).collect(),
        })
        .collect();
    targets[0].mask[0] = true;
    let logit = |rng: &mut ChaCha8Rng| Tensor::new(vec![b, 1, nc], (0..b * nc).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
    let logits = (0..tasks).map(|_| logit(rng)).collect();
    (targets, logits, logit(rng))
}

#[test]
fn objective_matches_scalar_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (targets, logits, diag) = random_batch(&mut rng, 6, 3, 4);
    let sigma: Vec<f64> = (0..3).map(|t| 0.5 + 0.3 * t as f64).collect();
    let tau = constrain_tau(&sigma, 0.1).unwrap();
    let per: Vec<Vec<f64>> = (0..6)
        .map(|b| {
            (0..3)
                .map(|t| if targets[t].mask[b] { club(logits[t].row(b), targets[t].labels[b], tau[t]).unwrap() } else { 0.0 })
                .collect()
        })
        .collect();
    let masks: Vec<Vec<bool>> = (0..6).map(|b| (0..3).map(|t| targets[t].mask[b]).collect()).collect();
    let prog = losses::prognosis_loss(&per, &masks).unwrap();
    let rows = |t: &Tensor| (0..6).map(|b| t.row(b).to_vec()).collect::<Vec<_>>();
    let cons = losses::consistency_loss(&rows(&diag), &rows(&logits[0])).unwrap();
    let want = losses::total_loss(prog, cons, 0.5).unwrap();
    let (got, _) = objective_value(&targets, LossKind::Club, 0.5, &logits, &diag);
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");

    // TCE and CE variants
    let (got, _) = objective_value(&targets, LossKind::Tce, 0.0, &logits, &diag);
    let per_tce: Vec<Vec<f64>> = (0..6)
        .map(|b| (0..3).map(|t| if targets[t].mask[b] { tce(logits[t].row(b), targets[t].labels[b], tau[t]).unwrap() } else { 0.0 }).collect())
        .collect();
    assert!((got - losses::prognosis_loss(&per_tce, &masks).unwrap()).abs() < 1e-12);
}

#[test]
fn objective_gradcheck_every_kind() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (targets, logits, diag) = random_batch(&mut rng, 4, 3, 3);
    for kind in [LossKind::Club, LossKind::Ce, LossKind::Tce, LossKind::Mtl, LossKind::Focal { gamma: 2.0 }, LossKind::Focal { gamma: 1.5 }] {
        let mut g = Graph::new();
        let traj: Vec<_> = (0..3).map(|t| g.param(&format!("f{t}"), &[4, 1, 3]).unwrap()).collect();
        let d = g.param("d", &[4, 1, 3]).unwrap();
        let spec = ObjectiveSpec { kind, lambda: 0.5, tau_eps: 0.1, diagnosis_ce: true };
        let nodes = build_objective(&mut g, &traj, d, &targets, &spec).unwrap();
        let mut point: BTreeMap<String, Tensor> = logits.iter().enumerate().map(|(t, l)| (format!("f{t}"), l.clone())).collect();
        point.insert("d".into(), diag.clone());
        point.insert(NOISE_PARAM.into(), Tensor::vector(vec![0.4, 1.1, -0.7]));
        let rep = grad_check(&mut g, nodes.total, &point, &GradCheckOptions::default()).map_err(|e| format!("{kind:?}: {e}")).unwrap();
        assert!(rep.max_relative_error < 1e-6, "{kind:?}: {rep:?}");
    }
}

#[test]
fn zero_lambda_drops_consistency_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (targets, logits, diag) = random_batch(&mut rng, 5, 2, 3);
    let (_, grads) = objective_value(&targets, LossKind::Club, 0.0, &logits, &diag);
    assert!(grads["d"].data().iter().all(|&v| v == 0.0));
    let (_, grads) = objective_value(&targets, LossKind::Club, 0.5, &logits, &diag);
    assert!(grads["d"].data().iter().any(|&v| v != 0.0));
}

#[test]
fn masked_slots_are_inert_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..200 {
        let (targets, logits, diag) = random_batch(&mut rng, 4, 3, 3);
        let (v, g) = objective_value(&targets, LossKind::Club, 0.5, &logits, &diag);
        let mut relabeled = targets.clone();
        let mut scrambled = logits.clone();
        for (t, tt) in relabeled.iter_mut().enumerate() {
            for b in 0..4 {
                if !tt.mask[b] {
                    tt.labels[b] = rng.gen_range(0..3);
                    // f_0 also feeds the consistency term, so only later horizons
                    if t > 0 {
                        for x in &mut scrambled[t].data_mut()[b * 3..b * 3 + 3] {
                            *x = rng.gen_range(-3.0..3.0);
                        }
                    }
                }
            }
        }
        let (v2, g2) = objective_value(&relabeled, LossKind::Club, 0.5, &logits, &diag);
        assert_eq!(v.to_bits(), v2.to_bits());
        assert_eq!(g, g2);
        let (v3, _) = objective_value(&targets, LossKind::Club, 0.5, &scrambled, &diag);
        assert_eq!(v.to_bits(), v3.to_bits());
    }
}

// ----- metric oracles -----

fn ba_oracle(preds: &[usize], labels: &[usize]) -> f64 {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort();
    classes.dedup();
    let mut s = 0.0;
    for &c in &classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        s += members.iter().filter(|&&i| preds[i] == c).count() as f64 / members.len() as f64;
    }
    s / classes.len() as f64
}

fn ece_oracle(conf: &[f64], correct: &[bool], bins: usize) -> f64 {
    let n = conf.len() as f64;
    let mut e = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let members: Vec<usize> = (0..conf.len())
            .filter(|&i| conf[i] >= lo && (conf[i] < hi || (b == bins - 1 && conf[i] <= 1.0)))
            .collect();
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let acc = members.iter().filter(|&&i| correct[i]).count() as f64 / m;
        let c = members.iter().map(|&i| conf[i]).sum::<f64>() / m;
        e += m / n * (acc - c).abs();
    }
    e
}

fn mauc_oracle(probs: &[Vec<f64>], labels: &[usize]) -> Option<f64> {
    let k = probs[0].len();
    let present: Vec<usize> = (0..k).filter(|c| labels.contains(c)).collect();
    if present.len() < 2 {
        return None;
    }
    let a = |i: usize, j: usize| {
        let (mut s, mut n) = (0.0, 0.0);
        for (x, &lx) in labels.iter().enumerate() {
            for (y, &ly) in labels.iter().enumerate() {
                if lx == i && ly == j {
                    n += 1.0;
                    s += if probs[x][i] > probs[y][i] { 1.0 } else if probs[x][i] == probs[y][i] { 0.5 } else { 0.0 };
                }
            }
        }
        s / n
    };
    let mut tot = 0.0;
    let mut pairs = 0.0;
    for (ai, &i) in present.iter().enumerate() {
        for &j in &present[ai + 1..] {
            tot += (a(i, j) + a(j, i)) / 2.0;
            pairs += 1.0;
        }
    }
    Some(tot / pairs)
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize, k: usize, coarse: bool) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k)
                .map(|_| if coarse { rng.gen_range(1..4) as f64 } else { rng.gen_range(0.01..1.0) })
                .collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect()
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for inst in 0..50 {
        let n = rng.gen_range(1..=100);
        let k = rng.gen_range(2..=5);
        let probs = random_probs(&mut rng, n, k, inst % 3 == 0);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let preds: Vec<usize> = probs.iter().map(|r| climat::model::argmax(r)).collect();
        assert!((balanced_accuracy(&preds, &labels).unwrap() - ba_oracle(&preds, &labels)).abs() <= 1e-12);
        let conf: Vec<f64> = probs.iter().map(|r| r.iter().cloned().fold(0.0, f64::max)).collect();
        let correct: Vec<bool> = preds.iter().zip(&labels).map(|(p, l)| p == l).collect();
        assert!((ece(&preds, &labels, &probs, 15).unwrap() - ece_oracle(&conf, &correct, 15)).abs() <= 1e-12);
        match (hand_till_mauc(&probs, &labels).unwrap(), mauc_oracle(&probs, &labels)) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12, "{a} vs {b}"),
            (None, None) => {}
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn ece_worked_and_errors() {
    let e = ece_from_confidences(&[0.9, 0.8, 0.6, 0.55], &[true, true, false, true], 2).unwrap();
    assert!((e - 0.0375).abs() <= 1e-12);
    assert!(ece(&[0], &[0], &[vec![0.7, 0.2]], 15).is_err());
}

// ----- Wilcoxon -----

fn wilcoxon_brute(d: &[f64]) -> f64 {
    let n = d.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[idx[j + 1]].abs() == d[idx[i]].abs() {
            j += 1;
        }
        for &x in &idx[i..=j] {
            ranks[x] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    let w: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
    let (mut le, mut ge) = (0.0, 0.0);
    for mask in 0u32..(1 << n) {
        let s: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s <= w + 1e-9 {
            le += 1.0;
        }
        if s >= w - 1e-9 {
            ge += 1.0;
        }
    }
    let total = (1u64 << n) as f64;
    (2.0 * (le / total).min(ge / total)).min(1.0)
}

#[test]
fn wilcoxon_exact_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..40 {
        let n = rng.gen_range(5..=14);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 * 0.5).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 * 0.5).collect();
        let res = wilcoxon_signed_rank(&a, &b).unwrap();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
        match res {
            Wilcoxon::Tested { p_value, exact, .. } => {
                assert!(exact);
                assert!((p_value - wilcoxon_brute(&d)).abs() < 1e-12);
            }
            Wilcoxon::Inconclusive { nonzero } => assert!(nonzero < 5),
        }
        assert_eq!(res, wilcoxon_signed_rank(&b, &a).unwrap().mirror_w(d.len()));
    }
}

trait Mirror {
    fn mirror_w(self, n: usize) -> Self;
}

impl Mirror for Wilcoxon {
    /// Swapping the samples maps `W+` to `n(n+1)/2 - W+` and keeps `p`.
    fn mirror_w(self, n: usize) -> Self {
        match self {
            Wilcoxon::Tested { p_value, w_plus, nonzero, exact } => Wilcoxon::Tested {
                p_value,
                w_plus: (n * (n + 1)) as f64 / 2.0 - w_plus,
                nonzero,
                exact,
            },
            other => other,
        }
    }
}

#[test]
fn wilcoxon_normal_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let normal = Normal::new(0.3, 1.0).unwrap();
    let a: Vec<f64> = (0..60).map(|_| normal.sample(&mut rng)).collect();
    let b = vec![0.0; 60];
    let Wilcoxon::Tested { p_value, exact, .. } = wilcoxon_signed_rank(&a, &b).unwrap() else { panic!() };
    assert!(!exact && p_value > 0.0 && p_value < 0.2);
    assert_eq!(wilcoxon_signed_rank(&b, &a).unwrap().p_value(), Some(p_value));
    // 26 all-positive distinct differences: far in the tail
    let a: Vec<f64> = (1..=26).map(|i| i as f64).collect();
    assert!(wilcoxon_signed_rank(&a, &vec![0.0; 26]).unwrap().p_value().unwrap() < 1e-4);
}

proptest! {
    #[test]
    fn tce_never_exceeds_club(seed in 0u64..u64::MAX, nc in 2usize..=10, tau in 1e-6f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 2.0).unwrap();
        let logits: Vec<f64> = (0..nc).map(|_| normal.sample(&mut rng)).collect();
        let c = rng.gen_range(0..nc);
        prop_assert!(tce(&logits, c, tau).unwrap() <= club(&logits, c, tau).unwrap() + 1e-12);
    }

    #[test]
    fn tau_constraint_invariants(sigma in prop::collection::vec(-5.0f64..5.0, 1..10), eps in 0.01f64..2.0) {
        let tau = constrain_tau(&sigma, eps).unwrap();
        prop_assert_eq!(tau.iter().cloned().fold(f64::MIN, f64::max), 1.0);
        prop_assert!(tau.iter().all(|&t| t > 0.0 && t <= 1.0));
    }
}
