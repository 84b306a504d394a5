mod common;

use common::{random_tensor, rng};
use moece::channel::{build_dataset, LinkConfig, ProfileRegistry};
use moece::models::BackboneConfig;
use moece::moe::{
    decide, select_topk, switch_aux_loss, update_bias, Estimator, MoEModel, Mode, RoutingDecision, SingleExpert,
    Thresholds, UsageStats,
};
use moece::numerics::{ops, Tape, Tensor};
use moece::pipeline::{train, TrainConfig};
use proptest::prelude::*;

/// Sort-based oracle: stable descending order on `w + u`.
fn oracle_topk(w: &[f64], u: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| (w[b] + u[b]).partial_cmp(&(w[a] + u[a])).unwrap());
    idx.truncate(k);
    idx
}

fn simplex(raw: Vec<f64>) -> Vec<f64> {
    let t = Tensor::new(&[raw.len()], raw).unwrap();
    ops::softmax(&t).unwrap().into_data()
}

/// Direct evaluation of the auxiliary loss summation.
fn aux_oracle(ws: &[Vec<f64>], alpha: f64) -> f64 {
    let t = ws.len() as f64;
    let n = ws[0].len();
    let mut total = 0.0;
    for i in 0..n {
        let mut count = 0.0;
        let mut mass = 0.0;
        for w in ws {
            let top = (0..n).fold(0, |b, j| if w[j] > w[b] { j } else { b });
            if top == i {
                count += 1.0;
            }
            mass += w[i];
        }
        total += alpha * n as f64 / (t * t) * count * mass;
    }
    total
}

fn decision(w: Vec<f64>) -> RoutingDecision {
    let u = vec![0.0; w.len()];
    decide(&w, &u, 1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn selection_is_topk_of_biased_scores(
        logits in prop::collection::vec(-4.0f64..4.0, 1..9),
        bias_scale in 0.0f64..1.0,
        seed in any::<u64>(),
        kf in 0.0f64..1.0,
    ) {
        let r = logits.len();
        let w = simplex(logits);
        let u: Vec<f64> = random_tensor(&[r], &mut rng(seed)).data().iter().map(|v| v * bias_scale).collect();
        let k = 1 + ((kf * r as f64) as usize).min(r - 1);
        let (s, wp) = select_topk(&w, &u, k).unwrap();
        prop_assert_eq!(&s, &oracle_topk(&w, &u, k));
        prop_assert!((wp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(wp.iter().all(|&v| v >= 0.0));
        let raw: f64 = s.iter().map(|&i| w[i]).sum();
        for (p, &i) in wp.iter().zip(&s) {
            prop_assert!((p - w[i] / raw).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_resolve_to_the_lowest_index(r in 2usize..9, kf in 0.0f64..1.0, tied in prop::collection::vec(any::<bool>(), 8)) {
        // two score levels; each entry lands on one of them
        let w: Vec<f64> = (0..r).map(|i| if tied[i] { 0.5 } else { 0.25 }).collect();
        let u = vec![0.0; r];
        let k = 1 + ((kf * r as f64) as usize).min(r - 1);
        let (s, _) = select_topk(&w, &u, k).unwrap();
        let mut expected: Vec<usize> = (0..r).filter(|&i| tied[i]).collect();
        expected.extend((0..r).filter(|&i| !tied[i]));
        expected.truncate(k);
        prop_assert_eq!(s, expected);
    }

    #[test]
    fn shifting_router_logits_changes_no_decision(logits in prop::collection::vec(-5.0f64..5.0, 2..7), shift in -50i32..50, k in 1usize..3) {
        let k = k.min(logits.len());
        let u = vec![0.0; logits.len()];
        let a = decide(&simplex(logits.clone()), &u, k).unwrap();
        let b = decide(&simplex(logits.iter().map(|l| l + shift as f64).collect()), &u, k).unwrap();
        prop_assert_eq!(&a.selected, &b.selected);
        for (x, y) in a.w.iter().zip(&b.w).chain(a.w_prime.iter().zip(&b.w_prime)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn aux_loss_matches_direct_summation(n in 2usize..6, t in 1usize..12, seed in any::<u64>(), alpha in 0.001f64..2.0) {
        let mut r = rng(seed);
        let ws: Vec<Vec<f64>> = (0..t).map(|_| simplex(random_tensor(&[n], &mut r).into_data())).collect();
        let batch: Vec<RoutingDecision> = ws.iter().cloned().map(decision).collect();
        let got = switch_aux_loss(&batch, alpha).unwrap();
        prop_assert!((got.value - aux_oracle(&ws, alpha)).abs() < 1e-12);
    }
}

#[test]
fn aux_loss_gradient_matches_finite_differences_with_frozen_counts() {
    let mut r = rng(5);
    let ws: Vec<Vec<f64>> = (0..7)
        .map(|_| simplex(random_tensor(&[4], &mut r).into_data()))
        .collect();
    let batch: Vec<RoutingDecision> = ws.iter().cloned().map(decision).collect();
    let aux = switch_aux_loss(&batch, 0.3).unwrap();
    let h = 1e-7;
    for x in 0..ws.len() {
        for i in 0..4 {
            // perturbations small enough to keep every argmax in place
            let mut plus = ws.clone();
            plus[x][i] += h;
            let mut minus = ws.clone();
            minus[x][i] -= h;
            let fd = (aux_oracle(&plus, 0.3) - aux_oracle(&minus, 0.3)) / (2.0 * h);
            assert!(
                (fd - aux.weight_grads[x][i]).abs() < 1e-7,
                "{x},{i}: {fd} vs {}",
                aux.weight_grads[x][i]
            );
        }
    }
}

#[test]
fn balanced_hard_routing_with_uniform_soft_weights() {
    let ws: Vec<Vec<f64>> = (0..8)
        .map(|x| {
            let mut w = vec![0.25 - 1e-3; 4];
            w[x % 4] += 4e-3;
            w
        })
        .collect();
    let batch: Vec<RoutingDecision> = ws.iter().cloned().map(decision).collect();
    let v = switch_aux_loss(&batch, 1.0).unwrap().value;
    assert!((v - aux_oracle(&ws, 1.0)).abs() < 1e-15);
    assert!((v - 1.0).abs() < 1e-12);
}

#[test]
fn usage_frequencies_count_k_slots_per_input() {
    let mut s = UsageStats::new(3, 2);
    for w in [[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.1, 0.3, 0.6]] {
        s.record(&decide(&w, &[0.0; 3], 2).unwrap());
    }
    let f = s.frequencies();
    assert_eq!(f, vec![1.0 / 6.0, 3.0 / 6.0, 2.0 / 6.0]);
    let mut u = vec![0.0; 3];
    update_bias(&mut u, &s, 0.45, 0.2, 0.01).unwrap();
    assert_eq!(u, vec![0.01, -0.01, 0.0]);
}

fn tiny_moe(r: usize, k: usize, seed: u64) -> MoEModel {
    MoEModel::new(
        BackboneConfig::resnet(1, 3, 2),
        r,
        k,
        Thresholds::defaults(r),
        &mut rng(seed),
    )
    .unwrap()
}

#[test]
fn tape_grows_by_exactly_k_expert_graphs() {
    let x = random_tensor(&[2, 6, 2], &mut rng(9));
    let single = Estimator::Single(SingleExpert::new(BackboneConfig::resnet(1, 3, 2), &mut rng(1)).unwrap());
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    single.forward_on(&mut tape, xv, Mode::Train).unwrap();
    let per_expert = tape.len() - 1;

    let r = 5;
    let mut sizes = Vec::new();
    for k in 1..=r {
        let m = Estimator::Moe(tiny_moe(r, k, 2));
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let f = m.forward_on(&mut tape, xv, Mode::Train).unwrap();
        assert_eq!(f.expert_evaluations, k);
        assert_eq!(f.decision.unwrap().selected.len(), k);
        sizes.push(tape.len());
    }
    for k in 1..r {
        assert_eq!(sizes[k] - sizes[k - 1], per_expert);
    }
}

#[test]
fn bias_changes_only_through_the_balancer() {
    let p = ProfileRegistry::builtin().build("umi-like", None).unwrap();
    let links: Vec<LinkConfig> = [-5.0, 5.0].iter().map(|&s| LinkConfig::new(2, 2, s)).collect();
    let ds = build_dataset(&[p], &links, 12, 4).unwrap();
    let empty = moece::channel::Dataset::default();
    for (balancer, moves) in [("none", false), ("switch_aux", false), ("alflb", true)] {
        let mut m = Estimator::Moe(tiny_moe(3, 1, 7));
        let before = m.params().clone();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            balancer: balancer.into(),
            ..Default::default()
        };
        train(&mut m, &ds, &empty, &cfg).unwrap();
        let moe = m.as_moe().unwrap();
        assert_ne!(moe.params, before, "{balancer}: parameters should train");
        let gamma = moe.thresholds.gamma;
        if moves {
            // every entry is an integer multiple of gamma
            assert!(moe.bias.iter().any(|&b| b != 0.0));
            for b in &moe.bias {
                assert!(((b / gamma).round() * gamma - b).abs() < 1e-9, "{b}");
            }
        } else {
            assert!(moe.bias.iter().all(|&b| b == 0.0), "{balancer}: {:?}", moe.bias);
        }
    }
}
