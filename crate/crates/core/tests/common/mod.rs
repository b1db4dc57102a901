#![allow(dead_code)]

use arlab_core::grpo::PolicyParams;
use arlab_core::synthenv::{generate_world, KnowledgeWorld, Question, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, Poisson};

pub struct Fixture {
    pub world: KnowledgeWorld,
    pub questions: Vec<Question>,
    pub params: PolicyParams<f64>,
    pub budget: usize,
}

/// A small random world with a random policy and a budget that leaves room
/// to finish the chain, so rewards are not identically zero.
pub fn fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let hop_count = rng.gen_range(1..=2);
    let cfg = WorldConfig {
        num_entities: rng.gen_range(hop_count + 1..=6),
        num_relations: rng.gen_range(1..=3),
        hop_count,
        top_k: rng.gen_range(1..=2),
        distractor_rate: 0.5,
        seed,
    };
    let (world, questions) = generate_world(&cfg).unwrap();
    let params = random_params(&world, &mut rng, 1.5);
    let budget = rng.gen_range(hop_count + 1..=hop_count + 2);
    Fixture {
        world,
        questions,
        params,
        budget,
    }
}

pub fn random_params<R: Rng>(world: &KnowledgeWorld, rng: &mut R, scale: f64) -> PolicyParams<f64> {
    let p = PolicyParams::<f64>::for_world(world);
    let theta: Vec<f64> = (0..p.dim()).map(|_| rng.gen_range(-scale..scale)).collect();
    PolicyParams::from_flat(p.layout(), &theta).unwrap()
}

/// Two-entity, one-relation, one-hop world: the smallest the generator
/// accepts.
pub fn minimal_world() -> (KnowledgeWorld, Vec<Question>) {
    generate_world(&WorldConfig {
        num_entities: 2,
        num_relations: 1,
        hop_count: 1,
        top_k: 1,
        distractor_rate: 0.0,
        seed: 0,
    })
    .unwrap()
}

/// Pearson statistic with bins of small expectation pooled together.
pub fn chi_square_p(expected: &[f64], observed: &[f64], n: f64) -> f64 {
    let mut stat = 0.0;
    let mut bins = 0;
    let (mut pool_e, mut pool_o) = (0.0, 0.0);
    for (&p, &o) in expected.iter().zip(observed) {
        if p * n < 5.0 {
            pool_e += p * n;
            pool_o += o;
        } else {
            stat += (o - p * n).powi(2) / (p * n);
            bins += 1;
        }
    }
    if pool_e > 0.0 {
        stat += (pool_o - pool_e).powi(2) / pool_e;
        bins += 1;
    }
    1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat)
}

/// Counts cells whose frequency falls outside its 3-sigma band, and the
/// largest such count expected with probability 0.999 given the exact
/// binomial tail mass of every band.
pub fn three_sigma_gate(probs: &[f64], observed: &[f64], n: u64) -> (u64, u64) {
    let nf = n as f64;
    let mut outside = 0;
    let mut lambda = 0.0;
    for (&p, &o) in probs.iter().zip(observed) {
        let sd = (nf * p * (1.0 - p)).sqrt();
        let (lo, hi) = (nf * p - 3.0 * sd, nf * p + 3.0 * sd);
        if o < lo || o > hi {
            outside += 1;
        }
        if p > 0.0 && p < 1.0 {
            let b = Binomial::new(p, n).unwrap();
            let below = if lo > 0.0 { b.cdf(lo.ceil() as u64 - 1) } else { 0.0 };
            let above = b.sf(hi.floor() as u64);
            lambda += below + above;
        }
    }
    let poisson = Poisson::new(lambda.max(1e-12)).unwrap();
    let allowed = (0..).find(|&m| poisson.cdf(m) >= 0.999).unwrap();
    (outside as u64, allowed)
}

