//! The meta-refiner: a discriminator that gates acceptance of a draft and a
//! trimmer that picks how many actor steps of a rejected draft to keep
//! before the actor regenerates the rest.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actor::{regenerate, rollout, ActorParams};
use crate::error::{Error, Result};
use crate::numeric::{dot, log_sigmoid, log_softmax, sigmoid};
use crate::scalar::Real;
use crate::synthenv::{chunk_utility, KnowledgeWorld, Query, Question};
use crate::trajectory::{take_prefix, Step, Trajectory};

pub const DISC_DIM: usize = 6;
pub const TRIM_DIM: usize = 5;

/// How a discriminator score becomes an accept/reject decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptMode {
    /// Accept with probability `pi_d(t)`; the decision is a sampled action.
    Bernoulli,
    /// Accept iff `pi_d(t) >= tau`; deterministic, carries no gradient.
    Threshold,
}

/// How the cut point of a rejected draft is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimPolicy {
    Learned,
    /// Always cut at 0: discard the draft and sample a fresh one.
    FullRegeneration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Real")]
pub struct RefinerParams<S> {
    pub disc: Vec<S>,
    pub trim: Vec<S>,
}

impl<S: Real> RefinerParams<S> {
    pub fn zeros() -> Self {
        Self {
            disc: vec![S::zero(); DISC_DIM],
            trim: vec![S::zero(); TRIM_DIM],
        }
    }
}

impl<S: Real> Default for RefinerParams<S> {
    fn default() -> Self {
        Self::zeros()
    }
}

/// Per-actor-step labels the refiner features are built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepTag {
    Think,
    UsefulSearch,
    WastedSearch { repeated: bool },
    Answer,
}

pub fn step_tags<S: Real>(world: &KnowledgeWorld, t: &Trajectory<S>) -> Vec<StepTag> {
    let history: Vec<_> = t.query_results().cloned().collect();
    let utilities = chunk_utility(world, t.question_id, &history);
    let mut useful = utilities.into_iter();
    let mut issued: Vec<Query> = Vec::new();
    t.actor_steps()
        .map(|s| match s {
            Step::Think { .. } => StepTag::Think,
            Step::Answer { .. } => StepTag::Answer,
            Step::Search { query, .. } => {
                let repeated = issued.contains(query);
                issued.push(*query);
                if useful.next().unwrap_or(false) {
                    StepTag::UsefulSearch
                } else {
                    StepTag::WastedSearch { repeated }
                }
            }
            Step::Information { .. } => unreachable!("actor_steps skips information"),
        })
        .collect()
}

/// Discriminator features: bias, answered, useful searches, wasted searches,
/// turns used, answered × useful searches.
pub fn disc_features<S: Real>(tags: &[StepTag]) -> Vec<S> {
    let answered = tags.last() == Some(&StepTag::Answer);
    let useful = tags.iter().filter(|t| **t == StepTag::UsefulSearch).count();
    let wasted = tags
        .iter()
        .filter(|t| matches!(t, StepTag::WastedSearch { .. }))
        .count();
    let a = if answered { S::one() } else { S::zero() };
    let u = S::from_usize_lossy(useful);
    vec![
        S::one(),
        a,
        u,
        S::from_usize_lossy(wasted),
        S::from_usize_lossy(tags.len()),
        a * u,
    ]
}

/// Trimmer features of keeping the first `k` actor steps: useful searches
/// kept, wasted steps kept, last kept step was useful, empty prefix,
/// prefix holds a repeated query.
pub fn trim_features<S: Real>(tags: &[StepTag], k: usize) -> Vec<S> {
    let kept = &tags[..k];
    let useful = kept.iter().filter(|t| **t == StepTag::UsefulSearch).count();
    let wasted = kept
        .iter()
        .filter(|t| matches!(t, StepTag::Think | StepTag::WastedSearch { .. }))
        .count();
    let flag = |b: bool| if b { S::one() } else { S::zero() };
    vec![
        S::from_usize_lossy(useful),
        S::from_usize_lossy(wasted),
        flag(kept.last() == Some(&StepTag::UsefulSearch)),
        flag(k == 0),
        flag(kept
            .iter()
            .any(|t| matches!(t, StepTag::WastedSearch { repeated: true }))),
    ]
}

pub fn trim_feature_rows<S: Real>(tags: &[StepTag]) -> Vec<Vec<S>> {
    (0..tags.len()).map(|k| trim_features(tags, k)).collect()
}

/// `pi_d(t) = sigmoid(disc · phi(t))`.
pub fn discriminate<S: Real>(params: &RefinerParams<S>, world: &KnowledgeWorld, t: &Trajectory<S>) -> S {
    sigmoid(disc_logit(params, &step_tags(world, t)))
}

fn disc_logit<S: Real>(params: &RefinerParams<S>, tags: &[StepTag]) -> S {
    dot(&params.disc, &disc_features(tags))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcceptDecision<S> {
    pub accepted: bool,
    pub score: S,
    pub logprob: S,
    pub sampled: bool,
}

pub fn accept<S: Real, R: Rng + ?Sized>(
    params: &RefinerParams<S>,
    world: &KnowledgeWorld,
    t: &Trajectory<S>,
    tau: S,
    mode: AcceptMode,
    rng: &mut R,
) -> AcceptDecision<S> {
    let z = disc_logit(params, &step_tags(world, t));
    let score = sigmoid(z);
    match mode {
        AcceptMode::Threshold => AcceptDecision {
            accepted: score >= tau,
            score,
            logprob: S::zero(),
            sampled: false,
        },
        AcceptMode::Bernoulli => {
            let u: f64 = rng.gen();
            let accepted = u < score.to_f64_lossy();
            let logprob = if accepted { log_sigmoid(z) } else { log_sigmoid(-z) };
            AcceptDecision {
                accepted,
                score,
                logprob,
                sampled: true,
            }
        }
    }
}

/// Cut-point distribution over `k in 0..T` for a draft with `T` actor steps.
pub fn trim_distribution<S: Real>(params: &RefinerParams<S>, world: &KnowledgeWorld, t: &Trajectory<S>) -> Vec<S> {
    trim_logprobs(params, &step_tags(world, t))
        .into_iter()
        .map(S::exp)
        .collect()
}

fn trim_logprobs<S: Real>(params: &RefinerParams<S>, tags: &[StepTag]) -> Vec<S> {
    let scores: Vec<S> = trim_feature_rows(tags)
        .iter()
        .map(|row| dot(&params.trim, row))
        .collect();
    log_softmax(&scores)
}

pub fn trim<S: Real, R: Rng + ?Sized>(
    params: &RefinerParams<S>,
    world: &KnowledgeWorld,
    t: &Trajectory<S>,
    rng: &mut R,
) -> Result<(usize, S)> {
    let tags = step_tags(world, t);
    if tags.is_empty() {
        return Err(Error::Precondition("cannot trim a draft without actor steps".into()));
    }
    let lps = trim_logprobs(params, &tags);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, lp) in lps.iter().enumerate() {
        acc += lp.to_f64_lossy().exp();
        if u < acc {
            return Ok((k, *lp));
        }
    }
    let k = lps.len() - 1;
    Ok((k, lps[k]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaKind {
    Accept,
    Reject,
    Cut { k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Real")]
pub struct MetaAction<S> {
    pub kind: MetaKind,
    pub logprob: S,
    /// False for deterministic decisions (threshold gate, forced cut).
    pub sampled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub budget: usize,
    pub n_max: usize,
    pub tau: f64,
    pub mode: AcceptMode,
    pub trim_policy: TrimPolicy,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            budget: 4,
            n_max: 1,
            tau: 0.5,
            mode: AcceptMode::Bernoulli,
            trim_policy: TrimPolicy::Learned,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Real")]
pub struct AugmentedTrace<S> {
    pub final_trajectory: Trajectory<S>,
    /// Rejected drafts in the order they were produced.
    pub drafts: Vec<Trajectory<S>>,
    pub meta: Vec<MetaAction<S>>,
    pub revisions_used: usize,
    pub mode: AcceptMode,
    /// Discriminator score of a final draft the loop returned unexamined.
    /// Logged only; it is not a sampled decision.
    pub final_score: Option<S>,
}

impl<S: Real> AugmentedTrace<S> {
    /// Rejected drafts followed by the final trajectory.
    pub fn all_drafts(&self) -> impl Iterator<Item = &Trajectory<S>> {
        self.drafts.iter().chain(std::iter::once(&self.final_trajectory))
    }

    pub fn cuts(&self) -> Vec<usize> {
        self.meta
            .iter()
            .filter_map(|m| match m.kind {
                MetaKind::Cut { k } => Some(k),
                _ => None,
            })
            .collect()
    }

    pub fn accepted(&self) -> bool {
        self.meta.last().map(|m| m.kind) == Some(MetaKind::Accept)
    }

    pub fn rejections(&self) -> usize {
        self.meta.iter().filter(|m| m.kind == MetaKind::Reject).count()
    }

    /// Trajectories generated: the initial rollout plus one per revision.
    pub fn total_rollouts(&self) -> usize {
        1 + self.revisions_used
    }

    /// Log-probability of the whole generative history: every actor step of
    /// the first draft, the freshly sampled suffix of each later draft, and
    /// every meta-action.
    pub fn trace_logprob(&self) -> S {
        let cuts = self.cuts();
        let mut total = S::zero();
        for (j, draft) in self.all_drafts().enumerate() {
            let skip = if j == 0 { 0 } else { cuts[j - 1] };
            total = total
                + draft
                    .actor_steps()
                    .skip(skip)
                    .filter_map(Step::actor_logprob)
                    .sum::<S>();
        }
        total + self.meta.iter().map(|m| m.logprob).sum::<S>()
    }

    /// Tagged dump with meta-actions as `#` comment lines.
    pub fn to_tagged(&self) -> String {
        let mut out = String::new();
        let mode = match self.mode {
            AcceptMode::Bernoulli => "bernoulli",
            AcceptMode::Threshold => "threshold",
        };
        writeln!(out, "# trace mode={mode} revisions={}", self.revisions_used).unwrap();
        let mut meta = self.meta.iter();
        for (j, draft) in self.drafts.iter().enumerate() {
            writeln!(out, "# draft {j}").unwrap();
            out.push_str(&draft.to_tagged());
            for m in meta.by_ref().take(2) {
                write_meta(&mut out, m);
            }
        }
        writeln!(out, "# final").unwrap();
        out.push_str(&self.final_trajectory.to_tagged());
        for m in meta {
            write_meta(&mut out, m);
        }
        if let Some(s) = self.final_score {
            writeln!(out, "# unexamined score={s}").unwrap();
        }
        out
    }
}

fn write_meta<S: Real>(out: &mut String, m: &MetaAction<S>) {
    let sampled = u8::from(m.sampled);
    match m.kind {
        MetaKind::Accept => writeln!(out, "# meta accept lp={} sampled={sampled}", m.logprob),
        MetaKind::Reject => writeln!(out, "# meta reject lp={} sampled={sampled}", m.logprob),
        MetaKind::Cut { k } => {
            writeln!(out, "# meta cut k={k} lp={} sampled={sampled}", m.logprob)
        }
    }
    .unwrap();
}

/// Initial rollout, then up to `n_max` rounds of accept-or-repair. A draft
/// still standing after the last round is returned without examination.
pub fn refine_loop<S: Real, R: Rng + ?Sized>(
    actor: &ActorParams<S>,
    refiner: &RefinerParams<S>,
    world: &KnowledgeWorld,
    question: &Question,
    cfg: &RefineConfig,
    rng: &mut R,
) -> Result<AugmentedTrace<S>> {
    let tau = S::lit(cfg.tau);
    let mut draft = rollout(actor, world, question, cfg.budget, rng)?;
    let mut drafts = Vec::new();
    let mut meta = Vec::new();
    let mut n = 0;
    while n < cfg.n_max {
        let d = accept(refiner, world, &draft, tau, cfg.mode, rng);
        if d.accepted {
            meta.push(MetaAction {
                kind: MetaKind::Accept,
                logprob: d.logprob,
                sampled: d.sampled,
            });
            return Ok(AugmentedTrace {
                final_trajectory: draft,
                drafts,
                meta,
                revisions_used: n,
                mode: cfg.mode,
                final_score: None,
            });
        }
        meta.push(MetaAction {
            kind: MetaKind::Reject,
            logprob: d.logprob,
            sampled: d.sampled,
        });
        let (k, logprob, sampled) = match cfg.trim_policy {
            TrimPolicy::Learned => {
                let (k, lp) = trim(refiner, world, &draft, rng)?;
                (k, lp, true)
            }
            TrimPolicy::FullRegeneration => (0, S::zero(), false),
        };
        meta.push(MetaAction {
            kind: MetaKind::Cut { k },
            logprob,
            sampled,
        });
        let prefix = take_prefix(&draft, k)?;
        let next = regenerate(actor, world, question, &prefix, cfg.budget, rng)?;
        drafts.push(std::mem::replace(&mut draft, next));
        n += 1;
    }
    let final_score = (cfg.n_max > 0).then(|| discriminate(refiner, world, &draft));
    Ok(AugmentedTrace {
        final_trajectory: draft,
        drafts,
        meta,
        revisions_used: n,
        mode: cfg.mode,
        final_score,
    })
}
