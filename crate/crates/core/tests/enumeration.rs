mod common;

use std::collections::HashMap;

use arlab_core::actor::{logprob, regenerate, rollout, suffix_logprob};
use arlab_core::grpo::PolicyParams;
use arlab_core::oracle::{enumerate, EnumeratedSpace, EnumerationConfig};
use arlab_core::trajectory::{take_prefix, Action};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use common::{chi_square_p, three_sigma_gate};

fn space(f: &common::Fixture, qi: usize) -> EnumeratedSpace<f64> {
    let cfg = EnumerationConfig { budget: f.budget, ..EnumerationConfig::default() };
    enumerate(&f.params, &f.world, &f.questions[qi], &cfg).unwrap()
}

#[test]
fn minimal_world_hand_counts() {
    let (w, qs) = common::minimal_world();
    let p = PolicyParams::<f64>::for_world(&w);
    let count = |b| {
        enumerate(&p, &w, &qs[0], &EnumerationConfig { budget: b, ..EnumerationConfig::default() })
            .unwrap()
            .len()
    };
    assert_eq!(count(1), 3);
    assert_eq!(count(2), 9);
}

#[test]
fn uniform_single_step_logprob() {
    let (w, qs) = common::minimal_world();
    let p = PolicyParams::<f64>::for_world(&w);
    let s = enumerate(&p, &w, &qs[0], &EnumerationConfig { budget: 1, ..EnumerationConfig::default() }).unwrap();
    for l in s.leaves() {
        let lp = logprob(&p.actor, &qs[0], 1, &l.trajectory).unwrap();
        assert!((lp - (1.0f64 / 3.0).ln()).abs() < 1e-15);
    }
}

#[test]
fn probabilities_normalize_and_match_logprob() {
    for seed in 0..60 {
        let f = common::fixture(seed);
        for qi in 0..f.questions.len().min(2) {
            let s = space(&f, qi);
            assert!((s.total_probability() - 1.0).abs() < 1e-12, "seed {seed}");
            let by_exp: f64 = s
                .leaves()
                .iter()
                .map(|l| logprob(&f.params.actor, &f.questions[qi], f.budget, &l.trajectory).unwrap().exp())
                .sum();
            assert!((by_exp - 1.0).abs() < 1e-9);
            for l in s.leaves() {
                assert!((l.trim.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(l.trajectory.actor_step_count() <= f.budget);
            }
        }
    }
}

#[test]
fn conditioning_consistency_at_every_split() {
    for seed in 0..30 {
        let f = common::fixture(seed);
        let q = &f.questions[0];
        let s = space(&f, 0);
        for l in s.leaves() {
            for k in 0..=l.turns() {
                let head = s.nodes()[l.path[k]].prob;
                let tail = suffix_logprob(&f.params.actor, q, f.budget, &l.trajectory, k).unwrap().exp();
                assert!((head * tail - l.prob).abs() < 1e-12 * l.prob.max(1e-300) + 1e-15);
            }
        }
    }
}

fn counts(s: &EnumeratedSpace<f64>, draws: impl Iterator<Item = Vec<Action>>) -> Vec<f64> {
    let index: HashMap<Vec<Action>, usize> =
        s.leaves().iter().enumerate().map(|(i, l)| (l.trajectory.actions(), i)).collect();
    let mut c = vec![0.0; s.len()];
    for a in draws {
        c[index[&a]] += 1.0;
    }
    c
}

#[test]
fn rollout_frequencies_match_enumeration() {
    let n = 10_000;
    for seed in [1u64, 2, 3] {
        let f = common::fixture(seed);
        let q = &f.questions[0];
        let s = space(&f, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = counts(
            &s,
            (0..n).map(|_| rollout(&f.params.actor, &f.world, q, f.budget, &mut rng).unwrap().actions()),
        );
        let nf = n as f64;
        let (outside, allowed) = three_sigma_gate(&s.probabilities(), &c, n);
        assert!(outside <= allowed, "seed {seed}: {outside} of {} cells outside 3 sigma, {allowed} allowed", s.len());
        assert!(chi_square_p(&s.probabilities(), &c, nf) > 1e-3);
    }
}

#[test]
fn regeneration_frequencies_match_conditional_law() {
    let n = 10_000;
    let f = common::fixture(7);
    let q = &f.questions[0];
    let s = space(&f, 0);
    // the most likely draft with at least two actor steps, cut after one
    let (li, _) = s
        .leaves()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.turns() >= 2)
        .max_by(|a, b| a.1.prob.total_cmp(&b.1.prob))
        .unwrap();
    let leaf = &s.leaves()[li];
    let node = leaf.path[1];
    let prefix = take_prefix(&leaf.trajectory, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let c = counts(
        &s,
        (0..n).map(|_| {
            regenerate(&f.params.actor, &f.world, q, &prefix, f.budget, &mut rng)
                .unwrap()
                .actions()
        }),
    );
    let head = s.nodes()[node].prob;
    let conditional: Vec<f64> =
        s.leaves().iter().map(|l| if l.path.get(1) == Some(&node) { l.prob / head } else { 0.0 }).collect();
    for (&p, &o) in conditional.iter().zip(&c) {
        if p == 0.0 {
            assert_eq!(o, 0.0, "regeneration left the prefix subtree");
        }
    }
    let keep: Vec<usize> = (0..s.len()).filter(|&i| conditional[i] > 0.0).collect();
    let e: Vec<f64> = keep.iter().map(|&i| conditional[i]).collect();
    let o: Vec<f64> = keep.iter().map(|&i| c[i]).collect();
    assert!(chi_square_p(&e, &o, n as f64) > 1e-3);
}
