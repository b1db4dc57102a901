//! The four-variant comparison with paired sign tests.

use std::path::Path;

use crate::config::{mechanism_diff, parse_header, ExperimentConfig, Variant};
use crate::experiment::{run_experiment, ExperimentResult};
use crate::stats::{sign_test, SignTest};
use crate::Result;

#[derive(Clone, Debug)]
pub struct LadderStep {
    pub from: Variant,
    pub to: Variant,
    pub changed: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    /// One run per variant, in ladder order.
    pub runs: Vec<ExperimentResult>,
    pub ladder: Vec<LadderStep>,
    pub full_vs_no_refiner: SignTest,
    pub full_vs_rejection: SignTest,
    pub rejection_vs_no_refiner: SignTest,
}

impl AblationReport {
    pub fn run(&self, v: Variant) -> &ExperimentResult {
        self.runs.iter().find(|r| r.config.variant == v).expect("every variant runs")
    }

    pub fn ladder_coherent(&self) -> bool {
        self.ladder.iter().all(|s| s.changed.len() == 1)
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().map(|r| r.failures()).sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("variants\n");
        for r in &self.runs {
            s.push_str(&r.line());
            s.push('\n');
        }
        s.push_str("\nladder\n");
        for step in &self.ladder {
            s.push_str(&format!("{} -> {}: {}\n", step.from, step.to, step.changed.join(", ")));
        }
        s.push_str("\npaired sign tests on final EM (one-sided)\n");
        for (name, t) in [
            ("search_r2_full > no_refiner", &self.full_vs_no_refiner),
            ("search_r2_full > rejection_sampling_baseline", &self.full_vs_rejection),
            ("rejection_sampling_baseline > no_refiner", &self.rejection_vs_no_refiner),
        ] {
            s.push_str(&format!(
                "{name:<46} wins {:>2}  losses {:>2}  ties {:>2}  p = {:.3e}\n",
                t.wins, t.losses, t.ties, t.p_value
            ));
        }
        s
    }
}

/// Run every variant of `base` and compare them seed by seed. With `out`
/// set, each variant writes into its own subdirectory and the ladder is
/// read back from the emitted summary headers.
pub fn ablate(base: &ExperimentConfig, out: Option<&Path>) -> Result<AblationReport> {
    let mut runs = Vec::new();
    for v in Variant::LADDER {
        let cfg = ExperimentConfig {
            name: format!("{}/{}", base.name, v.name()),
            variant: v,
            ..base.clone()
        };
        runs.push(run_experiment(&cfg, out.map(|d| d.join(v.name())).as_deref())?);
    }
    let ladder = Variant::LADDER
        .windows(2)
        .map(|w| {
            let changed = match out {
                Some(dir) => header_diff(&dir.join(w[0].name()), &dir.join(w[1].name()))?,
                None => mechanism_diff(&base.with_variant(w[0]), &base.with_variant(w[1])),
            };
            Ok(LadderStep {
                from: w[0],
                to: w[1],
                changed,
            })
        })
        .collect::<Result<_>>()?;
    let find = |v: Variant| runs.iter().find(|r: &&ExperimentResult| r.config.variant == v).unwrap();
    let full = find(Variant::SearchR2Full);
    let none = find(Variant::NoRefiner);
    let rej = find(Variant::RejectionSamplingBaseline);
    let test = |a: &ExperimentResult, b: &ExperimentResult| {
        let (x, y) = a.paired_em(b);
        sign_test(&x, &y)
    };
    let report = AblationReport {
        full_vs_no_refiner: test(full, none),
        full_vs_rejection: test(full, rej),
        rejection_vs_no_refiner: test(rej, none),
        ladder,
        runs,
    };
    if let Some(dir) = out {
        crate::write_file(&dir.join("ablation.txt"), &report.to_text())?;
    }
    Ok(report)
}

fn header_diff(a: &Path, b: &Path) -> Result<Vec<String>> {
    let read = |d: &Path| {
        let p = d.join("summary.csv");
        std::fs::read_to_string(&p).map_err(|e| crate::HarnessError::io(&p, e))
    };
    let (ha, hb) = (parse_header(&read(a)?), parse_header(&read(b)?));
    Ok(ha
        .into_iter()
        .zip(hb)
        .filter(|((k, va), (_, vb))| k != "variant" && va != vb)
        .map(|((k, _), _)| k)
        .collect())
}
