//! Group-relative policy optimization over augmented traces.
//!
//! Every sampled decision of a trace (actor tokens of the first draft, the
//! regenerated suffix of each later draft, and stochastic meta-actions) is
//! cached as a small table of features. The objective and its analytic
//! gradient are then pure functions of the flat parameter vector, which
//! keeps the finite-difference check honest.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actor::{ActorParams, ActorState};
use crate::error::{Error, Result};
use crate::numeric::{dot, k3, k3_dlogp, log_sigmoid, log_softmax, sigmoid};
use crate::refiner::{
    disc_features, refine_loop, step_tags, trim_feature_rows, AugmentedTrace, MetaKind, RefineConfig,
    RefinerParams, DISC_DIM, TRIM_DIM,
};
use crate::reward::{hybrid_reward, RewardBreakdown, RewardKind};
use crate::scalar::Real;
use crate::synthenv::{mix, KnowledgeWorld, Question, QuestionId};
use crate::trajectory::Trajectory;

/// Actor and refiner parameters, viewed as one flat vector
/// `[actor | discriminator | trimmer]` for optimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Real")]
pub struct PolicyParams<S> {
    pub actor: ActorParams<S>,
    pub refiner: RefinerParams<S>,
}

impl<S: Real> PolicyParams<S> {
    pub fn zeros(num_relations: usize) -> Self {
        Self {
            actor: ActorParams::zeros(num_relations),
            refiner: RefinerParams::zeros(),
        }
    }

    pub fn for_world(world: &KnowledgeWorld) -> Self {
        Self::zeros(world.config().num_relations)
    }

    pub fn layout(&self) -> Layout {
        Layout {
            actor: self.actor.dim(),
        }
    }

    pub fn dim(&self) -> usize {
        self.layout().dim()
    }

    pub fn flat(&self) -> Vec<S> {
        let mut v = self.actor.weights.clone();
        v.extend_from_slice(&self.refiner.disc);
        v.extend_from_slice(&self.refiner.trim);
        v
    }

    pub fn from_flat(layout: Layout, theta: &[S]) -> Result<Self> {
        if theta.len() != layout.dim() {
            return Err(Error::Structure(format!(
                "parameter vector has {} entries, layout needs {}",
                theta.len(),
                layout.dim()
            )));
        }
        Ok(Self {
            actor: ActorParams {
                weights: theta[layout.actor_range()].to_vec(),
            },
            refiner: RefinerParams {
                disc: theta[layout.disc_range()].to_vec(),
                trim: theta[layout.trim_range()].to_vec(),
            },
        })
    }

    /// Checkpoint text: a `#params` header, then one value per line.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "#params actor={} disc={} trim={}",
            self.actor.dim(),
            DISC_DIM,
            TRIM_DIM
        )?;
        for x in self.flat() {
            writeln!(out, "{x}")?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty checkpoint"))?;
        let header = header?;
        let mut dims = [None; 3];
        let body = header
            .strip_prefix("#params")
            .ok_or_else(|| parse_err(1, "expected #params header"))?;
        for field in body.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| parse_err(1, "expected key=value"))?;
            let n: usize = value.parse().map_err(|_| parse_err(1, "bad dimension"))?;
            let slot = match key {
                "actor" => 0,
                "disc" => 1,
                "trim" => 2,
                _ => return Err(parse_err(1, &format!("unknown block {key}"))),
            };
            dims[slot] = Some(n);
        }
        let [Some(actor), Some(disc), Some(trim)] = dims else {
            return Err(parse_err(1, "header must name actor, disc and trim"));
        };
        if disc != DISC_DIM || trim != TRIM_DIM {
            return Err(parse_err(1, "refiner block sizes do not match this build"));
        }
        let mut theta = Vec::with_capacity(actor + disc + trim);
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            theta.push(
                line.trim()
                    .parse::<S>()
                    .map_err(|_| parse_err(i + 1, "not a number"))?,
            );
        }
        Self::from_flat(Layout { actor }, &theta)
    }
}

fn parse_err(line: usize, message: &str) -> Error {
    Error::Parse {
        line,
        column: 1,
        message: message.to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub actor: usize,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.actor + DISC_DIM + TRIM_DIM
    }

    pub fn actor_range(&self) -> std::ops::Range<usize> {
        0..self.actor
    }

    pub fn disc_range(&self) -> std::ops::Range<usize> {
        self.actor..self.actor + DISC_DIM
    }

    pub fn trim_range(&self) -> std::ops::Range<usize> {
        self.actor + DISC_DIM..self.dim()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Actor,
    Trim,
}

/// One sampled decision, stored so its log-probability can be recomputed
/// under any parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub enum Decision<S> {
    Categorical {
        block: Block,
        rows: Vec<Vec<S>>,
        chosen: usize,
    },
    Bernoulli {
        features: Vec<S>,
        accepted: bool,
    },
}

impl<S: Real> Decision<S> {
    fn block_range(&self, layout: Layout) -> std::ops::Range<usize> {
        match self {
            Decision::Categorical { block: Block::Actor, .. } => layout.actor_range(),
            Decision::Categorical { block: Block::Trim, .. } => layout.trim_range(),
            Decision::Bernoulli { .. } => layout.disc_range(),
        }
    }

    pub fn logprob(&self, layout: Layout, theta: &[S]) -> S {
        let w = &theta[self.block_range(layout)];
        match self {
            Decision::Categorical { rows, chosen, .. } => {
                let scores: Vec<S> = rows.iter().map(|r| dot(w, r)).collect();
                log_softmax(&scores)[*chosen]
            }
            Decision::Bernoulli { features, accepted } => {
                let z = dot(w, features);
                if *accepted {
                    log_sigmoid(z)
                } else {
                    log_sigmoid(-z)
                }
            }
        }
    }

    /// Adds `scale * d logprob / d theta` into `grad`.
    pub fn add_grad(&self, layout: Layout, theta: &[S], scale: S, grad: &mut [S]) {
        let range = self.block_range(layout);
        let w = &theta[range.clone()];
        let g = &mut grad[range];
        match self {
            Decision::Categorical { rows, chosen, .. } => {
                let scores: Vec<S> = rows.iter().map(|r| dot(w, r)).collect();
                let probs: Vec<S> = log_softmax(&scores).into_iter().map(S::exp).collect();
                for (j, row) in rows.iter().enumerate() {
                    let coef = if j == *chosen { S::one() - probs[j] } else { -probs[j] };
                    for (gi, &x) in g.iter_mut().zip(row) {
                        *gi = *gi + scale * coef * x;
                    }
                }
            }
            Decision::Bernoulli { features, accepted } => {
                let p = sigmoid(dot(w, features));
                let coef = if *accepted { S::one() - p } else { -p };
                for (gi, &x) in g.iter_mut().zip(features) {
                    *gi = *gi + scale * coef * x;
                }
            }
        }
    }
}

fn actor_decisions<S: Real>(
    out: &mut Vec<Decision<S>>,
    params: &ActorParams<S>,
    question: &Question,
    budget: usize,
    draft: &Trajectory<S>,
    skip: usize,
) -> Result<()> {
    let mut state = ActorState::initial(question, budget);
    let mut index = 0;
    for (i, step) in draft.steps().iter().enumerate() {
        if let Some(action) = step.action() {
            if index >= skip {
                let (support, rows) = params.feature_rows(&state);
                let chosen = support
                    .iter()
                    .position(|&a| a == action)
                    .ok_or(Error::IllegalAction { step: i })?;
                out.push(Decision::Categorical {
                    block: Block::Actor,
                    rows,
                    chosen,
                });
            }
            index += 1;
        }
        state.advance(step);
    }
    Ok(())
}

/// All sampled decisions of an augmented trace.
pub fn trace_decisions<S: Real>(
    trace: &AugmentedTrace<S>,
    actor: &ActorParams<S>,
    world: &KnowledgeWorld,
    question: &Question,
    budget: usize,
) -> Result<Vec<Decision<S>>> {
    let mut out = Vec::new();
    let cuts = trace.cuts();
    for (j, draft) in trace.all_drafts().enumerate() {
        let skip = if j == 0 { 0 } else { cuts[j - 1] };
        actor_decisions(&mut out, actor, question, budget, draft, skip)?;
    }
    let mut meta = trace.meta.iter();
    for draft in trace.all_drafts() {
        let Some(gate) = meta.next() else { break };
        let tags = step_tags(world, draft);
        if gate.sampled {
            out.push(Decision::Bernoulli {
                features: disc_features(&tags),
                accepted: gate.kind == MetaKind::Accept,
            });
        }
        if gate.kind == MetaKind::Accept {
            break;
        }
        let cut = meta
            .next()
            .ok_or_else(|| Error::Structure("rejection without a cut".into()))?;
        let MetaKind::Cut { k } = cut.kind else {
            return Err(Error::Structure("rejection must be followed by a cut".into()));
        };
        if cut.sampled {
            out.push(Decision::Categorical {
                block: Block::Trim,
                rows: trim_feature_rows(&tags),
                chosen: k,
            });
        }
    }
    Ok(out)
}

/// Standardized rewards within one group: `(R - mean) / (std + 1e-8)` with
/// the population standard deviation. A group with identical rewards has
/// zero advantage everywhere.
pub fn group_advantages<S: Real>(rewards: &[S]) -> Result<Vec<S>> {
    if rewards.len() < 2 {
        return Err(Error::Precondition(format!(
            "group-relative advantages need at least 2 samples, got {}",
            rewards.len()
        )));
    }
    let n = S::from_usize_lossy(rewards.len());
    let mean = rewards.iter().copied().sum::<S>() / n;
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![S::zero(); rewards.len()]);
    }
    let var = rewards.iter().map(|&r| (r - mean) * (r - mean)).sum::<S>() / n;
    let denom = var.sqrt() + S::lit(1e-8);
    Ok(rewards.iter().map(|&r| (r - mean) / denom).collect())
}

/// A trace reduced to what the objective needs.
#[derive(Clone, Debug)]
pub struct SampleRecord<S> {
    pub decisions: Vec<Decision<S>>,
    pub reward: S,
    pub old_logprobs: Vec<S>,
    pub ref_logprobs: Vec<S>,
}

impl<S: Real> SampleRecord<S> {
    pub fn new(decisions: Vec<Decision<S>>, reward: S, layout: Layout, old: &[S], reference: &[S]) -> Self {
        let old_logprobs = decisions.iter().map(|d| d.logprob(layout, old)).collect();
        let ref_logprobs = decisions.iter().map(|d| d.logprob(layout, reference)).collect();
        Self {
            decisions,
            reward,
            old_logprobs,
            ref_logprobs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig<S> {
    pub clip_eps: S,
    pub kl_beta: S,
}

#[derive(Clone, Debug)]
pub struct ObjectiveValue<S> {
    pub value: S,
    pub grad: Vec<S>,
    /// Mean `k3` estimate per decision, averaged like the objective.
    pub kl: S,
}

/// Clipped group-relative objective (to be maximized) and its gradient.
pub fn objective<S: Real>(
    groups: &[Vec<SampleRecord<S>>],
    layout: Layout,
    theta: &[S],
    cfg: ObjectiveConfig<S>,
) -> Result<ObjectiveValue<S>> {
    let mut value = S::zero();
    let mut kl = S::zero();
    let mut grad = vec![S::zero(); theta.len()];
    if groups.is_empty() {
        return Ok(ObjectiveValue { value, grad, kl });
    }
    let lo = S::one() - cfg.clip_eps;
    let hi = S::one() + cfg.clip_eps;
    let n_groups = S::from_usize_lossy(groups.len());
    for group in groups {
        let rewards: Vec<S> = group.iter().map(|s| s.reward).collect();
        let adv = group_advantages(&rewards)?;
        let g = S::from_usize_lossy(group.len());
        for (sample, &a) in group.iter().zip(&adv) {
            if sample.decisions.is_empty() {
                continue;
            }
            let weight = S::one() / (n_groups * g * S::from_usize_lossy(sample.decisions.len()));
            for (t, d) in sample.decisions.iter().enumerate() {
                let lp = d.logprob(layout, theta);
                let ratio = (lp - sample.old_logprobs[t]).exp();
                let unclipped = ratio * a;
                let clipped = ratio.max(lo).min(hi) * a;
                let log_rho = sample.ref_logprobs[t] - lp;
                let k = k3(log_rho);
                value = value + weight * (unclipped.min(clipped) - cfg.kl_beta * k);
                kl = kl + weight * k;
                let mut coef = -cfg.kl_beta * k3_dlogp(log_rho);
                if unclipped <= clipped {
                    coef = coef + a * ratio;
                }
                d.add_grad(layout, theta, weight * coef, &mut grad);
            }
        }
    }
    Ok(ObjectiveValue { value, grad, kl })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub group_size: usize,
    pub prompts_per_step: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub refine: RefineConfig,
    pub reward: RewardKind,
    pub freeze_actor: bool,
    pub seed: u64,
    /// Training stops with an error once mean |theta| exceeds this.
    pub divergence_limit: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 5,
            prompts_per_step: 8,
            clip_eps: 0.2,
            kl_beta: 0.001,
            learning_rate: 1e-2,
            steps: 300,
            refine: RefineConfig::default(),
            reward: RewardKind::Hybrid,
            freeze_actor: false,
            seed: 0,
            divergence_limit: 1e4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if self.prompts_per_step == 0 {
            return bad("prompts_per_step must be positive");
        }
        if self.refine.budget == 0 {
            return bad("budget must be at least 1");
        }
        if !(0.0..1.0).contains(&self.clip_eps) {
            return bad("clip_eps must lie in [0, 1)");
        }
        if !(self.kl_beta >= 0.0 && self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("kl_beta and learning_rate must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.refine.tau) {
            return bad("tau must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_em: f64,
    pub mean_reward: f64,
    pub reject_rate: f64,
    pub mean_revisions: f64,
    pub grad_norm: f64,
    pub kl: f64,
    pub initial_rollouts: usize,
    pub refined_rollouts: usize,
    pub total_rollouts: usize,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str = "step,mean_em,mean_reward,reject_rate,mean_revisions,grad_norm,kl,initial_rollouts,refined_rollouts,total_rollouts";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.mean_em,
            self.mean_reward,
            self.reject_rate,
            self.mean_revisions,
            self.grad_norm,
            self.kl,
            self.initial_rollouts,
            self.refined_rollouts,
            self.total_rollouts
        )
    }

    pub fn to_csv(rows: &[StepMetrics]) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in rows {
            writeln!(out, "{}", r.csv_row()).unwrap();
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub params: PolicyParams<S>,
    pub metrics: Vec<StepMetrics>,
}

/// `G` traces for one question sampled under one parameter snapshot.
#[derive(Clone, Debug)]
pub struct GroupBatch<S> {
    pub question_id: QuestionId,
    pub traces: Vec<AugmentedTrace<S>>,
    pub rewards: Vec<RewardBreakdown<S>>,
    /// Reward each trace is trained on, per the configured reward kind.
    pub scores: Vec<S>,
    pub advantages: Vec<S>,
}

impl<S: Real> GroupBatch<S> {
    /// Cache every trace's decisions with their log-probabilities under
    /// the sampling parameters and the reference parameters.
    pub fn records(
        &self,
        params: &PolicyParams<S>,
        reference: &[S],
        world: &KnowledgeWorld,
        question: &Question,
        budget: usize,
    ) -> Result<Vec<SampleRecord<S>>> {
        let layout = params.layout();
        let theta = params.flat();
        self.traces
            .iter()
            .zip(&self.scores)
            .map(|(trace, &score)| {
                let decisions = trace_decisions(trace, &params.actor, world, question, budget)?;
                Ok(SampleRecord::new(decisions, score, layout, &theta, reference))
            })
            .collect()
    }
}

pub fn sample_group<S: Real>(
    params: &PolicyParams<S>,
    world: &KnowledgeWorld,
    question: &Question,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<GroupBatch<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traces = Vec::with_capacity(cfg.group_size);
    let mut rewards = Vec::with_capacity(cfg.group_size);
    let mut scores = Vec::with_capacity(cfg.group_size);
    for i in 0..cfg.group_size {
        let trace = refine_loop(&params.actor, &params.refiner, world, question, &cfg.refine, &mut rng)?;
        let breakdown = hybrid_reward::<S>(&trace.final_trajectory, world, question.id);
        let score = breakdown.training_reward(cfg.reward);
        if !score.is_finite() {
            return Err(Error::NonFinite {
                trace: i,
                what: "reward".into(),
            });
        }
        traces.push(trace);
        rewards.push(breakdown);
        scores.push(score);
    }
    let advantages = group_advantages(&scores)?;
    Ok(GroupBatch {
        question_id: question.id,
        traces,
        rewards,
        scores,
        advantages,
    })
}

/// Run the training loop from `init`. The reference policy of the KL term is
/// `init` itself.
pub fn train<S: Real>(world: &KnowledgeWorld, init: PolicyParams<S>, cfg: &TrainConfig) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    let questions = world.questions();
    if questions.is_empty() {
        return Err(Error::Precondition("world has no questions".into()));
    }
    let layout = init.layout();
    let reference = init.flat();
    let mut params = init;
    let mut metrics = Vec::with_capacity(cfg.steps);
    let obj_cfg = ObjectiveConfig {
        clip_eps: S::lit(cfg.clip_eps),
        kl_beta: S::lit(cfg.kl_beta),
    };
    let lr = S::lit(cfg.learning_rate);
    for step in 0..cfg.steps {
        let mut pick = ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, step as u64, 0x7072]));
        let n = cfg.prompts_per_step.min(questions.len());
        let chosen: Vec<usize> = sample(&mut pick, questions.len(), n).into_vec();
        let batches: Vec<(GroupBatch<S>, Vec<SampleRecord<S>>)> = chosen
            .par_iter()
            .enumerate()
            .map(|(gi, &qi)| {
                let seed = mix(&[cfg.seed, step as u64, gi as u64]);
                let q = &questions[qi];
                let batch = sample_group(&params, world, q, cfg, seed)?;
                let records = batch.records(&params, &reference, world, q, cfg.refine.budget)?;
                Ok((batch, records))
            })
            .collect::<Result<_>>()?;

        let theta = params.flat();
        let (batches, groups): (Vec<_>, Vec<_>) = batches.into_iter().unzip();
        let obj = objective(&groups, layout, &theta, obj_cfg)?;
        let mut grad = obj.grad;
        if cfg.freeze_actor {
            for gi in &mut grad[layout.actor_range()] {
                *gi = S::zero();
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                trace: step,
                what: "gradient".into(),
            });
        }
        let grad_norm = grad.iter().map(|&g| g * g).sum::<S>().sqrt();
        let next: Vec<S> = theta.iter().zip(&grad).map(|(&t, &g)| t + lr * g).collect();
        let mean_abs = next.iter().map(|x| x.abs().to_f64_lossy()).sum::<f64>() / next.len() as f64;
        if !mean_abs.is_finite() || mean_abs > cfg.divergence_limit {
            return Err(Error::Diverged { step, mean_abs });
        }
        params = PolicyParams::from_flat(layout, &next)?;

        let traces: Vec<&AugmentedTrace<S>> = batches.iter().flat_map(|b| &b.traces).collect();
        let t = traces.len() as f64;
        let em = batches.iter().flat_map(|b| &b.rewards).map(|r| r.outcome as f64).sum::<f64>() / t;
        let reward = batches
            .iter()
            .flat_map(|b| &b.scores)
            .map(|r| r.to_f64_lossy())
            .sum::<f64>()
            / t;
        let gates: usize = traces
            .iter()
            .map(|tr| tr.meta.iter().filter(|m| !matches!(m.kind, MetaKind::Cut { .. })).count())
            .sum();
        let rejections: usize = traces.iter().map(|tr| tr.rejections()).sum();
        let revisions: usize = traces.iter().map(|tr| tr.revisions_used).sum();
        let traces = traces.len();
        metrics.push(StepMetrics {
            step,
            mean_em: em,
            mean_reward: reward,
            reject_rate: if gates == 0 { 0.0 } else { rejections as f64 / gates as f64 },
            mean_revisions: revisions as f64 / t,
            grad_norm: grad_norm.to_f64_lossy(),
            kl: obj.kl.to_f64_lossy(),
            initial_rollouts: traces,
            refined_rollouts: revisions,
            total_rollouts: traces + revisions,
        });
    }
    Ok(TrainOutcome { params, metrics })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub exact_match: f64,
    pub mean_reward: f64,
    pub mean_revisions: f64,
    pub traces: usize,
}

/// Monte Carlo evaluation of the full pipeline: `samples` traces for each
/// question, seeded independently of thread scheduling.
pub fn evaluate<S: Real>(
    params: &PolicyParams<S>,
    world: &KnowledgeWorld,
    refine: &RefineConfig,
    samples: usize,
    seed: u64,
) -> Result<EvalSummary> {
    let per_question: Vec<(usize, f64, usize)> = world
        .questions()
        .par_iter()
        .map(|q| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, q.id.0 as u64, 0x6576]));
            let mut em = 0;
            let mut reward = 0.0;
            let mut revisions = 0;
            for _ in 0..samples {
                let trace = refine_loop(&params.actor, &params.refiner, world, q, refine, &mut rng)?;
                let b = hybrid_reward::<S>(&trace.final_trajectory, world, q.id);
                em += b.outcome as usize;
                reward += b.total.to_f64_lossy();
                revisions += trace.revisions_used;
            }
            Ok((em, reward, revisions))
        })
        .collect::<Result<_>>()?;
    let traces = samples * world.questions().len();
    let t = traces.max(1) as f64;
    Ok(EvalSummary {
        exact_match: per_question.iter().map(|p| p.0).sum::<usize>() as f64 / t,
        mean_reward: per_question.iter().map(|p| p.1).sum::<f64>() / t,
        mean_revisions: per_question.iter().map(|p| p.2).sum::<usize>() as f64 / t,
        traces,
    })
}
