//! Exact identity checks over many small enumerated worlds.

use arlab_core::grpo::PolicyParams;
use arlab_core::oracle::{enumerate, DecompositionReport, EnumerationConfig, Tolerances};
use arlab_core::reward::RewardKind;
use arlab_core::synthenv::{generate_world, mix, KnowledgeWorld, Question, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Clone, Debug)]
pub struct VerifyConfig {
    pub fixtures: usize,
    pub seed: u64,
    pub n_max_values: Vec<usize>,
    pub tolerances: Tolerances,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            fixtures: 100,
            seed: 0,
            n_max_values: vec![1, 2, 3],
            tolerances: Tolerances::default(),
        }
    }
}

/// A tiny world, a random policy and a budget for identity checks.
pub struct Fixture {
    pub world: KnowledgeWorld,
    pub question: Question,
    pub params: PolicyParams<f64>,
    pub budget: usize,
}

/// Fixture `index` of the stream identified by `seed`. Worlds have one or
/// two hops and at most six entities, so spaces stay in the hundreds.
pub fn fixture(seed: u64, index: u64) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, index, 0x6669]));
    let hop_count = rng.gen_range(1..=2);
    let cfg = WorldConfig {
        num_entities: rng.gen_range(hop_count + 1..=6),
        num_relations: rng.gen_range(1..=3),
        hop_count,
        top_k: rng.gen_range(1..=2),
        distractor_rate: 0.5,
        seed: mix(&[seed, index]),
    };
    let (world, questions) = generate_world(&cfg)?;
    let layout = PolicyParams::<f64>::for_world(&world).layout();
    let theta: Vec<f64> = (0..layout.dim()).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let params = PolicyParams::from_flat(layout, &theta)?;
    let budget = rng.gen_range(hop_count + 1..=hop_count + 2);
    let question = questions[rng.gen_range(0..questions.len())].clone();
    Ok(Fixture {
        world,
        question,
        params,
        budget,
    })
}

/// Uniform actor on a two-hop world with an outcome reward, refined by the
/// reward-maximal discriminator and the best-cut trimmer.
pub fn oracle_refiner_report() -> Result<DecompositionReport> {
    let (w, qs) = generate_world(&WorldConfig {
        num_entities: 5,
        num_relations: 2,
        hop_count: 2,
        top_k: 1,
        distractor_rate: 0.0,
        seed: 3,
    })?;
    let p = PolicyParams::<f64>::for_world(&w);
    let cfg = EnumerationConfig {
        budget: 4,
        reward: RewardKind::OutcomeOnly,
        ..EnumerationConfig::default()
    };
    let mut s = enumerate(&p, &w, &qs[0], &cfg)?;
    s.use_oracle_discriminator();
    s.use_oracle_trimmer();
    Ok(s.report(&[1, 2, 3]))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifySummary {
    pub fixtures: usize,
    pub largest_space: usize,
    pub max_normalization: f64,
    pub max_mixture: f64,
    pub max_trim_unconditional: f64,
    pub max_trim_rejected: f64,
    pub max_gain: f64,
    pub max_covariance_forms: f64,
    pub g_bar_max_abs: f64,
    pub g_bar_mean_abs: f64,
    pub g_bar_rejected_max_abs: f64,
    pub oracle_refiner: DecompositionReport,
    pub identities_pass: bool,
    pub oracle_refiner_positive: bool,
    #[serde(skip)]
    pub reports: Vec<DecompositionReport>,
}

impl VerifySummary {
    pub fn passed(&self) -> bool {
        self.identities_pass && self.oracle_refiner_positive
    }

    pub fn to_text(&self, tol: &Tolerances) -> String {
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let o = &self.oracle_refiner;
        format!(
            "fixtures: {} (largest space {} trajectories)\n\
             normalization      max residual {:.3e}  (tolerance {:.0e})\n\
             mixture identity   max residual {:.3e}\n\
             trim gain, all     max residual {:.3e}\n\
             trim gain, reject  max residual {:.3e}\n\
             gain decomposition max residual {:.3e}\n\
             covariance forms   max residual {:.3e}\n\
             baseline gain      max |G| {:.3e}, mean |G| {:.3e} (all drafts); max |G| {:.3e} (rejected drafts)\n\
             identities: {}\n\
             oracle refiner: A_prec {:.6}, S_trim {:.6}, delta J {:.6}, V_inter {:.6}: {}\n",
            self.fixtures,
            self.largest_space,
            self.max_normalization,
            tol.normalization,
            self.max_mixture,
            self.max_trim_unconditional,
            self.max_trim_rejected,
            self.max_gain,
            self.max_covariance_forms,
            self.g_bar_max_abs,
            self.g_bar_mean_abs,
            self.g_bar_rejected_max_abs,
            verdict(self.identities_pass),
            o.a_prec,
            o.s_trim,
            o.delta_j,
            o.v_inter,
            verdict(self.oracle_refiner_positive),
        )
    }
}

pub fn verify_suite(cfg: &VerifyConfig) -> Result<VerifySummary> {
    let reports: Vec<DecompositionReport> = (0..cfg.fixtures as u64)
        .into_par_iter()
        .map(|i| {
            let f = fixture(cfg.seed, i)?;
            let ec = EnumerationConfig {
                budget: f.budget,
                ..EnumerationConfig::default()
            };
            Ok(enumerate(&f.params, &f.world, &f.question, &ec)?.report(&cfg.n_max_values))
        })
        .collect::<Result<_>>()?;
    let max = |f: &dyn Fn(&DecompositionReport) -> f64| reports.iter().map(f).fold(0.0, f64::max);
    let oracle = oracle_refiner_report()?;
    let tol = &cfg.tolerances;
    Ok(VerifySummary {
        fixtures: reports.len(),
        largest_space: reports.iter().map(|r| r.trajectories).max().unwrap_or(0),
        max_normalization: max(&|r| r.max_normalization_residual()),
        max_mixture: max(&|r| r.residuals.mixture),
        max_trim_unconditional: max(&|r| r.unconditional.residual),
        max_trim_rejected: max(&|r| r.rejected.as_ref().map_or(0.0, |d| d.residual)),
        max_gain: max(&|r| r.residuals.gain),
        max_covariance_forms: max(&|r| r.residuals.covariance_forms),
        g_bar_max_abs: max(&|r| r.g_bar.abs()),
        g_bar_mean_abs: reports.iter().map(|r| r.g_bar.abs()).sum::<f64>() / reports.len().max(1) as f64,
        g_bar_rejected_max_abs: max(&|r| r.rejected.as_ref().map_or(0.0, |d| d.g_bar.abs())),
        identities_pass: reports.iter().all(|r| r.passes(tol)) && oracle.passes(tol),
        oracle_refiner_positive: oracle.a_prec > 0.0 && oracle.s_trim > 0.0 && oracle.delta_j > 0.0,
        oracle_refiner: oracle,
        reports,
    })
}
