mod common;

use arlab_core::grpo::{sample_group, TrainConfig};
use arlab_core::oracle::{enumerate, EnumerationConfig};
use arlab_core::refiner::{
    accept, discriminate, refine_loop, AcceptMode, AugmentedTrace, MetaKind, RefineConfig, TrimPolicy,
};
use arlab_core::trajectory::take_prefix;
use common::{chi_square_p, three_sigma_gate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check_structure(tr: &AugmentedTrace<f64>, n_max: usize) {
    assert!(tr.revisions_used <= n_max);
    assert_eq!(tr.drafts.len(), tr.revisions_used);
    let cuts = tr.cuts();
    assert_eq!(cuts.len(), tr.revisions_used);
    let all: Vec<_> = tr.all_drafts().collect();
    for (j, &k) in cuts.iter().enumerate() {
        assert!(k < all[j].actor_step_count());
        let before = take_prefix(all[j], k).unwrap();
        let after = take_prefix(all[j + 1], k).unwrap();
        assert_eq!(before, after, "cut {k} must keep the exact prefix");
    }
    assert_eq!(tr.rejections(), tr.revisions_used);
    assert_eq!(tr.total_rollouts(), 1 + tr.revisions_used);
    if n_max == 0 {
        assert!(tr.meta.is_empty());
    }
}

#[test]
fn ten_thousand_loops_keep_the_structural_contract() {
    let mut initial = 0;
    let mut refined = 0;
    let mut total = 0;
    for i in 0..10_000u64 {
        let f = common::fixture(i % 97);
        let q = &f.questions[(i as usize) % f.questions.len()];
        let cfg = RefineConfig {
            budget: f.budget,
            n_max: (i % 4) as usize,
            tau: 0.5,
            mode: if i % 5 == 0 { AcceptMode::Threshold } else { AcceptMode::Bernoulli },
            trim_policy: if i % 7 == 0 { TrimPolicy::FullRegeneration } else { TrimPolicy::Learned },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let tr = refine_loop(&f.params.actor, &f.params.refiner, &f.world, q, &cfg, &mut rng).unwrap();
        check_structure(&tr, cfg.n_max);
        if cfg.trim_policy == TrimPolicy::FullRegeneration {
            assert!(tr.cuts().iter().all(|&k| k == 0));
        }
        initial += 1;
        refined += tr.revisions_used;
        total += tr.total_rollouts();
    }
    assert_eq!(initial + refined, total);
    assert!(refined > 0);
}

#[test]
fn bernoulli_acceptance_frequency() {
    let f = common::fixture(4);
    let q = &f.questions[0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = arlab_core::actor::rollout(&f.params.actor, &f.world, q, f.budget, &mut rng).unwrap();
    let p = discriminate(&f.params.refiner, &f.world, &t);
    let n = 10_000;
    let hits = (0..n)
        .filter(|_| accept(&f.params.refiner, &f.world, &t, 0.5, AcceptMode::Bernoulli, &mut rng).accepted)
        .count();
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((hits as f64 / n as f64 - p).abs() < 3.0 * se);
}

#[test]
fn trace_logprob_is_the_enumerated_trace_probability() {
    for seed in 0..40u64 {
        let f = common::fixture(seed);
        let q = &f.questions[0];
        let space = enumerate(
            &f.params,
            &f.world,
            q,
            &EnumerationConfig { budget: f.budget, ..EnumerationConfig::default() },
        )
        .unwrap();
        let cfg = RefineConfig { budget: f.budget, n_max: 1 + (seed % 3) as usize, ..RefineConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let tr = refine_loop(&f.params.actor, &f.params.refiner, &f.world, q, &cfg, &mut rng).unwrap();
            let exact = space.trace_probability(&tr).unwrap();
            let logged = tr.trace_logprob().exp();
            assert!((exact - logged).abs() <= 1e-12 * exact.max(1e-300) + 1e-300, "seed {seed}: {exact} vs {logged}");
        }
    }
}

#[test]
fn returned_trajectories_follow_the_mixture_density() {
    let n = 100_000u64;
    for (seed, n_max) in [(2u64, 1usize), (9, 1), (6, 2)] {
        let f = common::fixture(seed);
        let q = &f.questions[0];
        let space = enumerate(
            &f.params,
            &f.world,
            q,
            &EnumerationConfig { budget: f.budget, ..EnumerationConfig::default() },
        )
        .unwrap();
        let qd = space.mixture_density(n_max);
        let cfg = RefineConfig { budget: f.budget, n_max, ..RefineConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut counts = vec![0.0; space.len()];
        let tv = |c: &[f64], m: f64| qd.iter().zip(c).map(|(p, x)| (p - x / m).abs()).sum::<f64>() / 2.0;
        let mut tv_early = 0.0;
        for i in 0..n {
            if i == n / 10 {
                tv_early = tv(&counts, i as f64);
            }
            let tr = refine_loop(&f.params.actor, &f.params.refiner, &f.world, q, &cfg, &mut rng).unwrap();
            counts[space.leaf_of(&tr.final_trajectory).unwrap()] += 1.0;
        }
        let (outside, allowed) = three_sigma_gate(&qd, &counts, n);
        assert!(outside <= allowed, "seed {seed}: {outside} cells outside 3 sigma ({allowed} allowed)");
        assert!(chi_square_p(&qd, &counts, n as f64) > 1e-3);
        let tv_late = tv(&counts, n as f64);
        assert!(tv_late < tv_early, "total variation {tv_early} -> {tv_late}");
    }
}

#[test]
fn group_mean_reward_matches_enumerated_mixture_value() {
    let f = common::fixture(12);
    let q = &f.questions[0];
    let space = enumerate(
        &f.params,
        &f.world,
        q,
        &EnumerationConfig { budget: f.budget, ..EnumerationConfig::default() },
    )
    .unwrap();
    let qd = space.mixture_density(1);
    let r = space.rewards();
    let mean: f64 = qd.iter().zip(&r).map(|(a, b)| a * b).sum();
    let second: f64 = qd.iter().zip(&r).map(|(a, b)| a * b * b).sum();
    let cfg = TrainConfig {
        refine: RefineConfig { budget: f.budget, ..RefineConfig::default() },
        ..TrainConfig::default()
    };
    let groups = 4000;
    let mut sum = 0.0;
    for g in 0..groups {
        let batch = sample_group(&f.params, &f.world, q, &cfg, g).unwrap();
        assert_eq!(batch.traces.len(), 5);
        let adv_mean: f64 = batch.advantages.iter().sum::<f64>() / 5.0;
        assert!(adv_mean.abs() < 1e-9);
        sum += batch.scores.iter().sum::<f64>();
    }
    let n = (groups * 5) as f64;
    let se = ((second - mean * mean) / n).sqrt();
    assert!((sum / n - mean).abs() < 3.0 * se, "{} vs {mean}", sum / n);
}

#[test]
fn meta_actions_alternate_reject_and_cut() {
    let f = common::fixture(8);
    let cfg = RefineConfig { budget: f.budget, n_max: 3, ..RefineConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let tr = refine_loop(&f.params.actor, &f.params.refiner, &f.world, &f.questions[0], &cfg, &mut rng).unwrap();
        for (i, m) in tr.meta.iter().enumerate() {
            let last = i + 1 == tr.meta.len();
            match m.kind {
                MetaKind::Accept => assert!(last),
                MetaKind::Reject => assert!(matches!(tr.meta[i + 1].kind, MetaKind::Cut { .. })),
                MetaKind::Cut { .. } => assert_eq!(tr.meta[i - 1].kind, MetaKind::Reject),
            }
        }
        assert_eq!(tr.final_score.is_some(), !tr.accepted());
    }
}
