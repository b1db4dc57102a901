//! Sweep over the maximum number of revisions per trace.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Variant};
use crate::experiment::{run_experiment, ExperimentResult};
use crate::stats::mean;
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub n_max: usize,
    pub variant: Variant,
    pub final_em_mean: f64,
    pub final_em_std: f64,
    pub eval_revisions_mean: f64,
    /// Training rollouts per seed, averaged over seeds.
    pub initial_rollouts: f64,
    pub refined_rollouts: f64,
    pub total_rollouts: f64,
    /// Share of refined rollouts among all rollouts in the first and last
    /// quarter of training.
    pub refined_share_early: f64,
    pub refined_share_late: f64,
    pub seeds_failed: usize,
}

#[derive(Clone, Debug)]
pub struct ScanReport {
    pub rows: Vec<ScanRow>,
    pub runs: Vec<ExperimentResult>,
}

fn refined_share(r: &ExperimentResult, early: bool) -> f64 {
    let shares: Vec<f64> = r
        .completed()
        .map(|s| {
            let q = (s.metrics.len() / 4).max(1);
            let window = if early { &s.metrics[..q] } else { &s.metrics[s.metrics.len() - q..] };
            let refined: usize = window.iter().map(|m| m.refined_rollouts).sum();
            let total: usize = window.iter().map(|m| m.total_rollouts).sum();
            refined as f64 / total.max(1) as f64
        })
        .collect();
    mean(&shares)
}

/// One experiment per entry of `n_max_values`. A value of zero runs the
/// `no_refiner` variant, which is the same pipeline with revisions off.
pub fn revision_scan(base: &ExperimentConfig, n_max_values: &[usize], out: Option<&Path>) -> Result<ScanReport> {
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &n in n_max_values {
        let variant = if n == 0 { Variant::NoRefiner } else { base.variant };
        let cfg = ExperimentConfig {
            name: format!("{}/n_max_{n}", base.name),
            variant,
            n_max: n,
            ..base.clone()
        };
        let dir = out.map(|d| d.join(format!("n_max_{n}")));
        let r = run_experiment(&cfg, dir.as_deref())?;
        let per_seed = |f: fn(&crate::SeedResult) -> usize| mean(&r.completed().map(|s| f(s) as f64).collect::<Vec<_>>());
        rows.push(ScanRow {
            n_max: n,
            variant,
            final_em_mean: r.summary.final_em_mean,
            final_em_std: r.summary.final_em_std,
            eval_revisions_mean: r.summary.mean_revisions_mean,
            initial_rollouts: per_seed(|s| s.initial_rollouts),
            refined_rollouts: per_seed(|s| s.refined_rollouts),
            total_rollouts: per_seed(|s| s.total_rollouts),
            refined_share_early: refined_share(&r, true),
            refined_share_late: refined_share(&r, false),
            seeds_failed: r.failures(),
        });
        runs.push(r);
    }
    let report = ScanReport { rows, runs };
    if let Some(dir) = out {
        crate::write_file(&dir.join("scan.txt"), &report.to_text())?;
        crate::write_file(
            &dir.join("scan.json"),
            &serde_json::to_string_pretty(&report.rows).expect("rows serialize"),
        )?;
    }
    Ok(report)
}

impl ScanReport {
    /// Whether mean final EM never decreases as `n_max` grows.
    pub fn em_non_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].final_em_mean >= w[0].final_em_mean)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("final EM by maximum revisions\n");
        s.push_str("n_max  variant                       EM mean    EM std     eval revisions\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<6} {:<29} {:<10.5} {:<10.5} {:.4}\n",
                r.n_max,
                r.variant.name(),
                r.final_em_mean,
                r.final_em_std,
                r.eval_revisions_mean
            ));
        }
        s.push_str("\ntraining rollouts per seed (total = initial + refined)\n");
        s.push_str("n_max  initial    refined    total      refined share early  late\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<6} {:<10.1} {:<10.1} {:<10.1} {:<20.4} {:.4}\n",
                r.n_max, r.initial_rollouts, r.refined_rollouts, r.total_rollouts, r.refined_share_early, r.refined_share_late
            ));
        }
        s.push_str(if self.em_non_decreasing() {
            "\ntrend: mean final EM never decreases as n_max grows\n"
        } else {
            "\ntrend: mean final EM drops at least once as n_max grows\n"
        });
        s
    }
}
