mod common;

use arlab_core::actor::ActorState;
use arlab_core::grpo::{
    group_advantages, objective, sample_group, train, GroupBatch, ObjectiveConfig, PolicyParams, SampleRecord,
    TrainConfig,
};
use arlab_core::refiner::{discriminate, trim_distribution, AugmentedTrace, MetaKind, RefineConfig};
use arlab_core::synthenv::{generate_world, KnowledgeWorld, Question, WorldConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Log-probability of every sampled decision of a trace, rebuilt from the
/// raw trajectories.
fn decision_logprobs(
    p: &PolicyParams<f64>,
    world: &KnowledgeWorld,
    q: &Question,
    budget: usize,
    tr: &AugmentedTrace<f64>,
) -> Vec<f64> {
    let mut out = Vec::new();
    let cuts = tr.cuts();
    for (j, draft) in tr.all_drafts().enumerate() {
        let skip = if j == 0 { 0 } else { cuts[j - 1] };
        let mut seen = 0;
        for (i, step) in draft.steps().iter().enumerate() {
            if let Some(a) = step.action() {
                if seen >= skip {
                    let state = ActorState::from_steps(q, budget, &draft.steps()[..i]);
                    out.push(p.actor.distribution(&state).logprob_of(a).unwrap());
                }
                seen += 1;
            }
        }
    }
    let drafts: Vec<_> = tr.all_drafts().collect();
    let mut d = 0;
    for m in &tr.meta {
        match m.kind {
            MetaKind::Accept | MetaKind::Reject => {
                if m.sampled {
                    let a = discriminate(&p.refiner, world, drafts[d]);
                    out.push(if m.kind == MetaKind::Accept { a.ln() } else { (1.0 - a).ln() });
                }
            }
            MetaKind::Cut { k } => {
                if m.sampled {
                    out.push(trim_distribution(&p.refiner, world, drafts[d])[k].ln());
                }
                d += 1;
            }
        }
    }
    out
}

fn advantages_by_hand(r: &[f64]) -> Vec<f64> {
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let sd = (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if r.iter().all(|&x| x == r[0]) {
        return vec![0.0; r.len()];
    }
    r.iter().map(|x| (x - mean) / (sd + 1e-8)).collect()
}

struct Frozen {
    world: KnowledgeWorld,
    questions: Vec<Question>,
    budget: usize,
    old: PolicyParams<f64>,
    reference: PolicyParams<f64>,
    batches: Vec<GroupBatch<f64>>,
}

impl Frozen {
    fn new(seed: u64) -> Self {
        let f = common::fixture(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = common::random_params(&f.world, &mut rng, 1.0);
        let cfg = TrainConfig {
            refine: RefineConfig { budget: f.budget, n_max: 2, ..RefineConfig::default() },
            ..TrainConfig::default()
        };
        let batches = f
            .questions
            .iter()
            .take(3)
            .enumerate()
            .map(|(g, q)| sample_group(&f.params, &f.world, q, &cfg, seed * 31 + g as u64).unwrap())
            .collect();
        Frozen {
            world: f.world,
            questions: f.questions,
            budget: f.budget,
            old: f.params,
            reference,
            batches,
        }
    }

    fn records(&self) -> Vec<Vec<SampleRecord<f64>>> {
        let r = self.reference.flat();
        self.batches
            .iter()
            .zip(&self.questions)
            .map(|(b, q)| b.records(&self.old, &r, &self.world, q, self.budget).unwrap())
            .collect()
    }

    /// The clipped, KL-penalized objective evaluated from scratch.
    fn value(&self, theta: &[f64], eps: f64, beta: f64) -> f64 {
        let p = PolicyParams::from_flat(self.old.layout(), theta).unwrap();
        let mut total = 0.0;
        for (b, q) in self.batches.iter().zip(&self.questions) {
            let adv = advantages_by_hand(&b.scores);
            let g = b.traces.len() as f64;
            for (tr, a) in b.traces.iter().zip(adv) {
                let now = decision_logprobs(&p, &self.world, q, self.budget, tr);
                let old = decision_logprobs(&self.old, &self.world, q, self.budget, tr);
                let re = decision_logprobs(&self.reference, &self.world, q, self.budget, tr);
                let l = now.len() as f64;
                for t in 0..now.len() {
                    let ratio = (now[t] - old[t]).exp();
                    let surrogate = (ratio * a).min(ratio.clamp(1.0 - eps, 1.0 + eps) * a);
                    let rho = (re[t] - now[t]).exp();
                    total += (surrogate - beta * (rho - 1.0 - rho.ln())) / (g * l);
                }
            }
        }
        total / self.batches.len() as f64
    }

    fn has_signal(&self) -> bool {
        self.batches.iter().any(|b| b.scores.iter().any(|&s| s != b.scores[0]))
    }
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

#[test]
fn advantage_examples() {
    let a = group_advantages(&[2.0f64, 0.0, 1.0]).unwrap();
    let s = (1.5f64).sqrt();
    for (x, y) in a.iter().zip([s, -s, 0.0]) {
        assert!((x - y).abs() < 1e-6);
    }
    assert_eq!(group_advantages(&[1.0f64; 5]).unwrap(), vec![0.0; 5]);
    assert!(group_advantages::<f64>(&[3.0]).is_err());
    assert!(group_advantages::<f64>(&[]).is_err());
}

proptest! {
    #[test]
    fn advantages_are_centered(r in prop::collection::vec(0.0f64..2.0, 2..12)) {
        let a = group_advantages(&r).unwrap();
        let by_hand = advantages_by_hand(&r);
        prop_assert!(a.iter().sum::<f64>().abs() < 1e-9);
        for (x, y) in a.iter().zip(&by_hand) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn objective_value_matches_independent_recomputation() {
    for seed in 0..12 {
        let fz = Frozen::new(seed);
        let records = fz.records();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta: Vec<f64> = fz.old.flat().iter().map(|x| x + rng.gen_range(-0.3..0.3)).collect();
        let cfg = ObjectiveConfig { clip_eps: 0.2, kl_beta: 0.3 };
        let lib = objective(&records, fz.old.layout(), &theta, cfg).unwrap().value;
        let ours = fz.value(&theta, 0.2, 0.3);
        assert!((lib - ours).abs() < 1e-12, "seed {seed}: {lib} vs {ours}");
    }
}

#[test]
fn gradient_matches_central_differences_at_theta_old() {
    let h = 1e-5;
    let mut batches = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..40 {
        let fz = Frozen::new(seed);
        if !fz.has_signal() {
            continue;
        }
        batches += 1;
        let theta = fz.old.flat();
        let cfg = ObjectiveConfig { clip_eps: 0.2, kl_beta: 0.5 };
        let grad = objective(&fz.records(), fz.old.layout(), &theta, cfg).unwrap().grad;
        for i in 0..theta.len() {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (fz.value(&up, 0.2, 0.5) - fz.value(&down, 0.2, 0.5)) / (2.0 * h);
            worst = worst.max(relative_error(grad[i], fd));
        }
    }
    assert!(batches >= 10, "only {batches} batches carried signal");
    assert!(worst < 1e-5, "max relative error {worst}");
}

#[test]
fn gradient_matches_central_differences_away_from_theta_old() {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..15 {
        let fz = Frozen::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let theta: Vec<f64> = fz.old.flat().iter().map(|x| x + rng.gen_range(-0.4..0.4)).collect();
        let cfg = ObjectiveConfig { clip_eps: 0.2, kl_beta: 0.5 };
        let grad = objective(&fz.records(), fz.old.layout(), &theta, cfg).unwrap().grad;
        for i in 0..theta.len() {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (fz.value(&up, 0.2, 0.5) - fz.value(&down, 0.2, 0.5)) / (2.0 * h);
            worst = worst.max(relative_error(grad[i], fd));
        }
    }
    assert!(worst < 1e-5, "max relative error {worst}");
}

#[test]
fn unit_ratio_reduces_to_policy_gradient() {
    let h = 1e-5;
    for seed in 0..10 {
        let fz = Frozen::new(seed);
        let theta = fz.old.flat();
        let cfg = ObjectiveConfig { clip_eps: 0.2, kl_beta: 0.0 };
        let out = objective(&fz.records(), fz.old.layout(), &theta, cfg).unwrap();
        // value: mean over groups of sum_i A_i / G (each trace's steps average to A_i)
        let expect: f64 = fz
            .batches
            .iter()
            .map(|b| advantages_by_hand(&b.scores).iter().sum::<f64>() / b.traces.len() as f64)
            .sum::<f64>()
            / fz.batches.len() as f64;
        assert!((out.value - expect).abs() < 1e-12);
        // gradient: sum_i A_i / (G L_i) grad log q(trace_i), by differences
        let score = |th: &[f64]| {
            let p = PolicyParams::from_flat(fz.old.layout(), th).unwrap();
            let mut s = 0.0;
            for (b, q) in fz.batches.iter().zip(&fz.questions) {
                let adv = advantages_by_hand(&b.scores);
                for (tr, a) in b.traces.iter().zip(adv) {
                    let lp = decision_logprobs(&p, &fz.world, q, fz.budget, tr);
                    s += a * lp.iter().sum::<f64>() / (b.traces.len() as f64 * lp.len() as f64);
                }
            }
            s / fz.batches.len() as f64
        };
        for i in 0..theta.len() {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (score(&up) - score(&down)) / (2.0 * h);
            assert!(relative_error(out.grad[i], fd) < 1e-5);
        }
    }
}

#[test]
fn kl_term_vanishes_at_reference() {
    let fz = Frozen::new(3);
    let theta = fz.old.flat();
    let records: Vec<Vec<SampleRecord<f64>>> = fz
        .batches
        .iter()
        .zip(&fz.questions)
        .map(|(b, q)| b.records(&fz.old, &theta, &fz.world, q, fz.budget).unwrap())
        .collect();
    let a = objective(&records, fz.old.layout(), &theta, ObjectiveConfig { clip_eps: 0.2, kl_beta: 0.0 }).unwrap();
    let b = objective(&records, fz.old.layout(), &theta, ObjectiveConfig { clip_eps: 0.2, kl_beta: 7.0 }).unwrap();
    assert_eq!(b.kl, 0.0);
    assert_eq!(a.value, b.value);
    assert_eq!(a.grad, b.grad);
}

#[test]
fn frozen_actor_still_trains_the_refiner() {
    let (w, _) = generate_world(&WorldConfig::default()).unwrap();
    let init = PolicyParams::<f64>::for_world(&w);
    let cfg = TrainConfig { steps: 20, learning_rate: 0.5, freeze_actor: true, ..TrainConfig::default() };
    let out = train(&w, init.clone(), &cfg).unwrap();
    assert_eq!(out.params.actor, init.actor);
    assert_ne!(out.params.refiner, init.refiner);
    assert!(out.metrics.iter().any(|m| m.grad_norm > 0.0));
}

#[test]
fn refiner_gradient_is_nonzero_when_meta_actions_carry_signal() {
    let mut checked = 0;
    for seed in 0..30 {
        let fz = Frozen::new(seed);
        let layout = fz.old.layout();
        for (b, q) in fz.batches.iter().zip(&fz.questions) {
            let differ = b.scores.iter().any(|&s| s != b.scores[0]);
            let sampled_meta = b.traces.iter().any(|t| t.meta.iter().any(|m| m.sampled));
            if !(differ && sampled_meta) {
                continue;
            }
            let rec = b.records(&fz.old, &fz.old.flat(), &fz.world, q, fz.budget).unwrap();
            let g = objective(&[rec], layout, &fz.old.flat(), ObjectiveConfig { clip_eps: 0.2, kl_beta: 0.0 })
                .unwrap()
                .grad;
            let refiner_norm: f64 = g[layout.disc_range().start..].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(refiner_norm > 0.0);
            checked += 1;
        }
    }
    assert!(checked > 5);
}

#[test]
fn strong_kl_keeps_parameters_near_reference() {
    let (w, _) = generate_world(&WorldConfig::default()).unwrap();
    let init = PolicyParams::<f64>::for_world(&w);
    let dist = |beta: f64| {
        let cfg = TrainConfig { steps: 60, learning_rate: 0.3, kl_beta: beta, ..TrainConfig::default() };
        let out = train(&w, init.clone(), &cfg).unwrap();
        out.params.flat().iter().zip(init.flat()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let free = dist(0.0);
    let anchored = dist(3.0);
    assert!(anchored < 0.5 * free, "anchored {anchored}, free {free}");
}

#[test]
fn same_seed_same_learning_curve() {
    let (w, _) = generate_world(&WorldConfig::default()).unwrap();
    let cfg = TrainConfig { steps: 15, learning_rate: 0.3, seed: 9, ..TrainConfig::default() };
    let run = || train(&w, PolicyParams::<f64>::for_world(&w), &cfg).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(
        arlab_core::grpo::StepMetrics::to_csv(&a.metrics),
        arlab_core::grpo::StepMetrics::to_csv(&b.metrics)
    );
    assert_eq!(a.params.flat(), b.params.flat());
}
