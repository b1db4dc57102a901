//! Multi-seed training runs.
//!
//! Every seed trains from the zero policy on the same world, then evaluates
//! the final pipeline on a held-out sampling stream. A seed whose training
//! fails becomes a failure row; the others still run.

use std::collections::BTreeMap;
use std::path::Path;

use arlab_core::grpo::{evaluate, train, PolicyParams, StepMetrics};
use arlab_core::synthenv::{generate_world, KnowledgeWorld};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::stats::{mean, std_dev};
use crate::{write_file, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub final_em: f64,
    pub final_reward: f64,
    pub mean_revisions: f64,
    /// Rollout counts summed over all training steps.
    pub initial_rollouts: usize,
    pub refined_rollouts: usize,
    pub total_rollouts: usize,
    pub metrics: Vec<StepMetrics>,
    pub params: PolicyParams<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SeedOutcome {
    Done(Box<SeedResult>),
    Failed { seed: u64, error: String },
}

impl SeedOutcome {
    pub fn seed(&self) -> u64 {
        match self {
            SeedOutcome::Done(r) => r.seed,
            SeedOutcome::Failed { seed, .. } => *seed,
        }
    }

    pub fn result(&self) -> Option<&SeedResult> {
        match self {
            SeedOutcome::Done(r) => Some(r),
            SeedOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub seeds_ok: usize,
    pub seeds_failed: usize,
    pub final_em_mean: f64,
    pub final_em_std: f64,
    pub final_reward_mean: f64,
    pub final_reward_std: f64,
    pub mean_revisions_mean: f64,
    pub mean_revisions_std: f64,
    pub total_rollouts_mean: f64,
    pub effective_config: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub outcomes: Vec<SeedOutcome>,
    pub summary: Summary,
}

impl ExperimentResult {
    pub fn completed(&self) -> impl Iterator<Item = &SeedResult> {
        self.outcomes.iter().filter_map(SeedOutcome::result)
    }

    pub fn failures(&self) -> usize {
        self.summary.seeds_failed
    }

    /// Final EM of the seeds that completed in both runs, aligned by seed.
    pub fn paired_em(&self, other: &ExperimentResult) -> (Vec<f64>, Vec<f64>) {
        let theirs: BTreeMap<u64, f64> = other.completed().map(|r| (r.seed, r.final_em)).collect();
        self.completed()
            .filter_map(|r| theirs.get(&r.seed).map(|&b| (r.final_em, b)))
            .unzip()
    }

    pub fn summary_csv(&self) -> String {
        let mut s = self.config.header();
        s.push_str("seed,status,final_em,final_reward,mean_revisions,initial_rollouts,refined_rollouts,total_rollouts,error\n");
        for o in &self.outcomes {
            match o {
                SeedOutcome::Done(r) => s.push_str(&format!(
                    "{},ok,{},{},{},{},{},{},\n",
                    r.seed,
                    r.final_em,
                    r.final_reward,
                    r.mean_revisions,
                    r.initial_rollouts,
                    r.refined_rollouts,
                    r.total_rollouts
                )),
                SeedOutcome::Failed { seed, error } => {
                    s.push_str(&format!("{seed},failed,,,,,,,\"{}\"\n", error.replace('"', "'")))
                }
            }
        }
        s
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }

    /// Every file a run emits, as `(relative path, contents)`: the
    /// configuration, one metrics CSV and one checkpoint per completed seed,
    /// and the summaries.
    pub fn files(&self) -> Result<Vec<(String, String)>> {
        let mut files = vec![("config.toml".to_string(), self.config.to_toml())];
        for r in self.completed() {
            let mut csv = self.config.header();
            csv.push_str(&format!("# seed = {}\n", r.seed));
            csv.push_str(&StepMetrics::to_csv(&r.metrics));
            files.push((format!("seed_{}.csv", r.seed), csv));
            let mut ckpt = Vec::new();
            r.params.write_checkpoint(&mut ckpt)?;
            files.push((
                format!("seed_{}.params", r.seed),
                String::from_utf8(ckpt).expect("checkpoint is ascii"),
            ));
        }
        files.push(("summary.csv".to_string(), self.summary_csv()));
        files.push(("summary.json".to_string(), self.summary_json()));
        Ok(files)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, contents) in self.files()? {
            write_file(&dir.join(name), &contents)?;
        }
        Ok(())
    }

    /// Human-readable one-line summary.
    pub fn line(&self) -> String {
        let s = &self.summary;
        format!(
            "{:<28} EM {:.4} ± {:.4}  reward {:.4} ± {:.4}  revisions {:.3}  train rollouts {:.0}  ({} ok, {} failed)",
            self.config.variant.name(),
            s.final_em_mean,
            s.final_em_std,
            s.final_reward_mean,
            s.final_reward_std,
            s.mean_revisions_mean,
            s.total_rollouts_mean,
            s.seeds_ok,
            s.seeds_failed
        )
    }
}

fn run_seed(cfg: &ExperimentConfig, world: &KnowledgeWorld, seed: u64) -> arlab_core::Result<SeedResult> {
    let tc = cfg.train(seed);
    let out = train(world, PolicyParams::<f64>::for_world(world), &tc)?;
    let eval = evaluate(&out.params, world, &tc.refine, cfg.eval_samples, cfg.eval_seed_offset + seed)?;
    Ok(SeedResult {
        seed,
        final_em: eval.exact_match,
        final_reward: eval.mean_reward,
        mean_revisions: eval.mean_revisions,
        initial_rollouts: out.metrics.iter().map(|m| m.initial_rollouts).sum(),
        refined_rollouts: out.metrics.iter().map(|m| m.refined_rollouts).sum(),
        total_rollouts: out.metrics.iter().map(|m| m.total_rollouts).sum(),
        metrics: out.metrics,
        params: out.params,
    })
}

/// Train and evaluate every seed of `cfg`; write outputs when `out` is set.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let (world, _) = generate_world(&cfg.world())?;
    let outcomes: Vec<SeedOutcome> = cfg
        .seed_list()
        .par_iter()
        .map(|&seed| match run_seed(cfg, &world, seed) {
            Ok(r) => SeedOutcome::Done(Box::new(r)),
            Err(e) => SeedOutcome::Failed {
                seed,
                error: e.to_string(),
            },
        })
        .collect();

    let done: Vec<&SeedResult> = outcomes.iter().filter_map(SeedOutcome::result).collect();
    let col = |f: fn(&SeedResult) -> f64| done.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let em = col(|r| r.final_em);
    let reward = col(|r| r.final_reward);
    let revisions = col(|r| r.mean_revisions);
    let summary = Summary {
        name: cfg.name.clone(),
        seeds_ok: done.len(),
        seeds_failed: outcomes.len() - done.len(),
        final_em_mean: mean(&em),
        final_em_std: std_dev(&em),
        final_reward_mean: mean(&reward),
        final_reward_std: std_dev(&reward),
        mean_revisions_mean: mean(&revisions),
        mean_revisions_std: std_dev(&revisions),
        total_rollouts_mean: mean(&col(|r| r.total_rollouts as f64)),
        effective_config: cfg.effective().into_iter().collect(),
    };
    let result = ExperimentResult {
        config: cfg.clone(),
        outcomes,
        summary,
    };
    if let Some(dir) = out {
        result.write(dir)?;
    }
    Ok(result)
}
