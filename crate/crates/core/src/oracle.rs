//! Exact enumeration of a question's trajectory space.
//!
//! The space is stored as a prefix tree: node `n` stands for a sequence of
//! actor steps, carries the probability of its last step given its parent
//! and the value `V(n)` of regenerating from it. Every complete trajectory is
//! a leaf that remembers the node at each of its cut points, so repair
//! kernels can be applied by injecting mass at a node and pushing it down
//! the tree.
//!
//! All identities are evaluated by finite sums over the leaves.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::actor::ActorState;
use crate::error::{Error, Result};
use crate::grpo::PolicyParams;
use crate::numeric::{covariance, covariance_centered, expectation};
use crate::refiner::{discriminate, trim_distribution, AugmentedTrace, MetaKind};
use crate::reward::{hybrid_reward, RewardKind};
use crate::scalar::Real;
use crate::synthenv::{search, KnowledgeWorld, Question};
use crate::trajectory::{Action, Step, Trajectory};

pub const DEFAULT_LIMIT: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnumerationConfig {
    pub budget: usize,
    pub reward: RewardKind,
    /// Largest number of complete trajectories the enumerator will build.
    pub limit: usize,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        Self {
            budget: 4,
            reward: RewardKind::Hybrid,
            limit: DEFAULT_LIMIT,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node<S> {
    pub parent: Option<usize>,
    pub depth: usize,
    /// Probability of this node's last actor step given its parent.
    pub edge_p: S,
    /// Probability of the whole prefix.
    pub prob: S,
    pub value: S,
    pub leaf: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Leaf<S> {
    pub trajectory: Trajectory<S>,
    pub prob: S,
    pub reward: S,
    /// `path[k]` is the node holding the first `k` actor steps.
    pub path: Vec<usize>,
    /// Acceptance probability of this trajectory as a draft.
    pub alpha: S,
    /// Cut-point distribution over `k < T`.
    pub trim: Vec<S>,
}

impl<S: Real> Leaf<S> {
    pub fn turns(&self) -> usize {
        self.path.len() - 1
    }
}

#[derive(Clone, Debug)]
pub struct EnumeratedSpace<S> {
    pub question: Question,
    pub budget: usize,
    nodes: Vec<Node<S>>,
    leaves: Vec<Leaf<S>>,
    index: HashMap<Vec<Action>, usize>,
}

struct Builder<'a, S> {
    params: &'a PolicyParams<S>,
    world: &'a KnowledgeWorld,
    question: &'a Question,
    cfg: &'a EnumerationConfig,
    nodes: Vec<Node<S>>,
    leaves: Vec<Leaf<S>>,
    path: Vec<usize>,
}

impl<S: Real> Builder<'_, S> {
    fn expand(&mut self, node: usize, state: &ActorState, steps: &mut Vec<Step<S>>) -> Result<()> {
        self.path.push(node);
        if state.is_done() {
            if self.leaves.len() == self.cfg.limit {
                return Err(Error::Capacity {
                    limit: self.cfg.limit,
                    count: self.cfg.limit + 1,
                });
            }
            let trajectory = Trajectory::from_steps(self.question.id, steps.clone())?;
            let reward = hybrid_reward(&trajectory, self.world, self.question.id).training_reward(self.cfg.reward);
            let alpha = discriminate(&self.params.refiner, self.world, &trajectory);
            let trim = trim_distribution(&self.params.refiner, self.world, &trajectory);
            self.nodes[node].leaf = Some(self.leaves.len());
            self.nodes[node].value = reward;
            self.leaves.push(Leaf {
                trajectory,
                prob: self.nodes[node].prob,
                reward,
                path: self.path.clone(),
                alpha,
                trim,
            });
        } else {
            let dist = self.params.actor.distribution(state);
            for (&action, &lp) in dist.support.iter().zip(&dist.logprobs) {
                let edge_p = lp.exp();
                let child = self.nodes.len();
                self.nodes.push(Node {
                    parent: Some(node),
                    depth: self.nodes[node].depth + 1,
                    edge_p,
                    prob: self.nodes[node].prob * edge_p,
                    value: S::zero(),
                    leaf: None,
                });
                let mark = steps.len();
                let mut next = state.clone();
                let step = Step::actor(action, lp);
                next.advance(&step);
                steps.push(step);
                if let Action::Search(query) = action {
                    let info = Step::Information {
                        result: search(self.world, self.question.id, query, (next.searches() - 1) as u32),
                    };
                    next.advance(&info);
                    steps.push(info);
                }
                self.expand(child, &next, steps)?;
                steps.truncate(mark);
            }
        }
        self.path.pop();
        Ok(())
    }
}

/// Depth-first enumeration of every complete trajectory for `question`
/// under the actor of `params`, with the refiner of `params` attached to
/// each leaf.
pub fn enumerate<S: Real>(
    params: &PolicyParams<S>,
    world: &KnowledgeWorld,
    question: &Question,
    cfg: &EnumerationConfig,
) -> Result<EnumeratedSpace<S>> {
    if cfg.budget == 0 {
        return Err(Error::Precondition("turn budget must be at least 1".into()));
    }
    let mut b = Builder {
        params,
        world,
        question,
        cfg,
        nodes: vec![Node {
            parent: None,
            depth: 0,
            edge_p: S::one(),
            prob: S::one(),
            value: S::zero(),
            leaf: None,
        }],
        leaves: Vec::new(),
        path: Vec::new(),
    };
    b.expand(0, &ActorState::initial(question, cfg.budget), &mut Vec::new())?;
    let Builder { mut nodes, leaves, .. } = b;
    // Preorder puts parents before children, so a reverse sweep sees every
    // child before its parent.
    for i in (1..nodes.len()).rev() {
        let contrib = nodes[i].edge_p * nodes[i].value;
        let p = nodes[i].parent.expect("non-root node has a parent");
        nodes[p].value = nodes[p].value + contrib;
    }
    let index = leaves
        .iter()
        .enumerate()
        .map(|(i, l)| (l.trajectory.actions(), i))
        .collect();
    Ok(EnumeratedSpace {
        question: question.clone(),
        budget: cfg.budget,
        nodes,
        leaves,
        index,
    })
}

impl<S: Real> EnumeratedSpace<S> {
    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaves(&self) -> &[Leaf<S>] {
        &self.leaves
    }

    pub fn nodes(&self) -> &[Node<S>] {
        &self.nodes
    }

    pub fn leaf_of(&self, t: &Trajectory<S>) -> Option<usize> {
        self.index.get(&t.actions()).copied()
    }

    pub fn probabilities(&self) -> Vec<S> {
        self.leaves.iter().map(|l| l.prob).collect()
    }

    pub fn rewards(&self) -> Vec<S> {
        self.leaves.iter().map(|l| l.reward).collect()
    }

    pub fn alphas(&self) -> Vec<S> {
        self.leaves.iter().map(|l| l.alpha).collect()
    }

    pub fn total_probability(&self) -> S {
        self.leaves.iter().map(|l| l.prob).sum()
    }

    /// Replace the acceptance probability of every draft.
    pub fn set_alpha(&mut self, f: impl Fn(&Leaf<S>) -> S) {
        for i in 0..self.leaves.len() {
            self.leaves[i].alpha = f(&self.leaves[i]);
        }
    }

    /// Replace the cut-point distribution of every draft. `f` receives the
    /// draft and its regeneration gains `G_k` for `k < T`.
    pub fn set_trim(&mut self, f: impl Fn(&Leaf<S>, &[S]) -> Vec<S>) -> Result<()> {
        for i in 0..self.leaves.len() {
            let gains = self.gains(i);
            let trim = f(&self.leaves[i], &gains);
            if trim.len() != gains.len() {
                return Err(Error::Structure(format!(
                    "cut distribution of leaf {i} has {} entries, draft has {} cut points",
                    trim.len(),
                    gains.len()
                )));
            }
            self.leaves[i].trim = trim;
        }
        Ok(())
    }

    /// Accept exactly the drafts whose reward is maximal over the space.
    pub fn use_oracle_discriminator(&mut self) {
        let best = self.leaves.iter().map(|l| l.reward).fold(S::neg_infinity(), S::max);
        self.set_alpha(|l| if l.reward == best { S::one() } else { S::zero() });
    }

    /// Put all cut mass on the cut with the largest regeneration gain,
    /// preferring the earliest cut among ties.
    pub fn use_oracle_trimmer(&mut self) {
        self.set_trim(|_, gains| {
            let mut best = 0;
            for (k, &g) in gains.iter().enumerate() {
                if g > gains[best] {
                    best = k;
                }
            }
            one_hot(gains.len(), best)
        })
        .expect("one-hot over the draft's own cut points");
    }

    /// Every rejected draft is discarded and sampled again from scratch.
    pub fn use_full_regeneration(&mut self) {
        self.set_trim(|_, gains| one_hot(gains.len(), 0))
            .expect("one-hot over the draft's own cut points");
    }

    pub fn value(&self, node: usize) -> S {
        self.nodes[node].value
    }

    /// `V(prefix_k)` for each cut point `k < T` of leaf `i`.
    pub fn cut_values(&self, i: usize) -> Vec<S> {
        let l = &self.leaves[i];
        l.path[..l.turns()].iter().map(|&n| self.nodes[n].value).collect()
    }

    /// `G_k = V(prefix_k) - R` for each cut point `k < T` of leaf `i`.
    pub fn gains(&self, i: usize) -> Vec<S> {
        let r = self.leaves[i].reward;
        self.cut_values(i).into_iter().map(|v| v - r).collect()
    }

    /// Expected reward after repairing leaf `i` once.
    pub fn j_trim(&self, i: usize) -> S {
        crate::numeric::dot(&self.leaves[i].trim, &self.cut_values(i))
    }

    pub fn j_base(&self) -> S {
        expectation(&self.probabilities(), &self.rewards())
    }

    /// The repair kernel applied to a mass vector over drafts: a draft's
    /// mass is spread over its cut points and then flows down the subtree
    /// below each cut with the actor's conditional probabilities.
    pub fn repair(&self, mass: &[S]) -> Vec<S> {
        let mut down = vec![S::zero(); self.nodes.len()];
        for (l, &m) in self.leaves.iter().zip(mass) {
            for (k, &p) in l.trim.iter().enumerate() {
                let n = l.path[k];
                down[n] = down[n] + m * p;
            }
        }
        for i in 1..self.nodes.len() {
            let p = self.nodes[i].parent.expect("non-root node has a parent");
            down[i] = down[i] + down[p] * self.nodes[i].edge_p;
        }
        self.leaves.iter().map(|l| down[*l.path.last().unwrap()]).collect()
    }

    /// Exact law of the returned trajectory after at most `n_max` rounds of
    /// accept-or-repair. Accepted mass leaves the loop; what remains after
    /// the last round is returned as is.
    pub fn mixture_density(&self, n_max: usize) -> Vec<S> {
        let alpha = self.alphas();
        let mut p = self.probabilities();
        let mut out = vec![S::zero(); p.len()];
        for _ in 0..n_max {
            let mut rejected = Vec::with_capacity(p.len());
            for ((o, &pi), &a) in out.iter_mut().zip(&p).zip(&alpha) {
                *o = *o + a * pi;
                rejected.push(pi * (S::one() - a));
            }
            p = self.repair(&rejected);
        }
        out.iter().zip(&p).map(|(&o, &pi)| o + pi).collect()
    }

    /// Probability of an augmented trace under this space's actor and
    /// refiner, counting only the sampled meta-actions.
    pub fn trace_probability(&self, trace: &AugmentedTrace<S>) -> Option<S> {
        let drafts: Vec<usize> = trace.all_drafts().map(|d| self.leaf_of(d)).collect::<Option<_>>()?;
        let mut p = self.leaves[drafts[0]].prob;
        let mut meta = trace.meta.iter();
        for (j, &d) in drafts.iter().enumerate() {
            let leaf = &self.leaves[d];
            let Some(gate) = meta.next() else { break };
            if gate.sampled {
                p = p * match gate.kind {
                    MetaKind::Accept => leaf.alpha,
                    _ => S::one() - leaf.alpha,
                };
            }
            if gate.kind == MetaKind::Accept {
                break;
            }
            let cut = meta.next()?;
            let MetaKind::Cut { k } = cut.kind else { return None };
            if cut.sampled {
                p = p * *leaf.trim.get(k)?;
            }
            let next = &self.leaves[*drafts.get(j + 1)?];
            let prefix = self.nodes[leaf.path[k]].prob;
            p = p * next.prob / prefix;
        }
        Some(p)
    }

    /// Regeneration-gain decomposition under the draft distribution `w`.
    pub fn trim_decomposition(&self, w: &[S]) -> TrimDecomposition {
        let horizon = self.leaves.iter().map(|l| l.turns()).max().unwrap_or(0);
        let j_trim: Vec<S> = (0..self.len()).map(|i| self.j_trim(i)).collect();
        let direct = expectation(w, &j_trim) - expectation(w, &self.rewards());
        let mut skill = S::zero();
        let mut baseline = S::zero();
        let mut h = vec![S::zero(); self.len()];
        let mut g = vec![S::zero(); self.len()];
        for k in 0..horizon {
            for i in 0..self.len() {
                let l = &self.leaves[i];
                if k < l.turns() {
                    h[i] = l.trim[k];
                    g[i] = self.nodes[l.path[k]].value - l.reward;
                } else {
                    h[i] = S::zero();
                    g[i] = S::zero();
                }
            }
            skill = skill + covariance(w, &h, &g);
            baseline = baseline + expectation(w, &h) * expectation(w, &g);
        }
        let decomposed = skill + baseline;
        TrimDecomposition {
            delta_trim_direct: direct.to_f64_lossy(),
            delta_trim_decomposed: decomposed.to_f64_lossy(),
            s_trim: skill.to_f64_lossy(),
            g_bar: baseline.to_f64_lossy(),
            residual: (direct - decomposed).abs().to_f64_lossy(),
        }
    }

    /// Full identity report at one round of repair, plus normalization of
    /// the mixture for each entry of `n_max_values`.
    pub fn report(&self, n_max_values: &[usize]) -> DecompositionReport {
        let pi = self.probabilities();
        let r = self.rewards();
        let alpha = self.alphas();
        let j_trim: Vec<S> = (0..self.len()).map(|i| self.j_trim(i)).collect();

        let j_base = expectation(&pi, &r);
        let q = self.mixture_density(1);
        let j_meta_direct = expectation(&q, &r);
        let z_acc = expectation(&pi, &alpha);
        let j_trim_bar = expectation(&pi, &j_trim);
        let advantage: Vec<S> = r.iter().zip(&j_trim).map(|(&a, &b)| a - b).collect();
        let a_prec = covariance(&pi, &alpha, &advantage);
        let a_prec_centered = covariance_centered(&pi, &alpha, &advantage);
        let v_inter = S::one() - z_acc;
        let j_meta_decomposed = j_base + a_prec + v_inter * (j_trim_bar - j_base);

        let unconditional = self.trim_decomposition(&pi);
        let rejected = (v_inter > S::zero()).then(|| {
            let w: Vec<S> = pi
                .iter()
                .zip(&alpha)
                .map(|(&p, &a)| p * (S::one() - a) / v_inter)
                .collect();
            self.trim_decomposition(&w)
        });

        let delta_j = j_meta_direct - j_base;
        let gain_rhs = a_prec.to_f64_lossy()
            + v_inter.to_f64_lossy() * (unconditional.s_trim + unconditional.g_bar);

        let normalization = n_max_values
            .iter()
            .map(|&n| {
                let total: S = self.mixture_density(n).into_iter().sum();
                (n, (total - S::one()).abs().to_f64_lossy())
            })
            .collect();

        DecompositionReport {
            question: self.question.id.0,
            trajectories: self.len(),
            pi_total_residual: (pi.iter().copied().sum::<S>() - S::one()).abs().to_f64_lossy(),
            j_base: j_base.to_f64_lossy(),
            j_meta_direct: j_meta_direct.to_f64_lossy(),
            j_meta_decomposed: j_meta_decomposed.to_f64_lossy(),
            delta_j: delta_j.to_f64_lossy(),
            a_prec: a_prec.to_f64_lossy(),
            v_inter: v_inter.to_f64_lossy(),
            z_acc: z_acc.to_f64_lossy(),
            j_trim_bar: j_trim_bar.to_f64_lossy(),
            s_trim: unconditional.s_trim,
            g_bar: unconditional.g_bar,
            unconditional,
            rejected,
            residuals: Residuals {
                normalization,
                mixture: (j_meta_direct - j_meta_decomposed).abs().to_f64_lossy(),
                gain: (delta_j.to_f64_lossy() - gain_rhs).abs(),
                covariance_forms: (a_prec - a_prec_centered).abs().to_f64_lossy(),
            },
        }
    }
}

fn one_hot<S: Real>(n: usize, k: usize) -> Vec<S> {
    let mut v = vec![S::zero(); n];
    v[k] = S::one();
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimDecomposition {
    pub delta_trim_direct: f64,
    pub delta_trim_decomposed: f64,
    pub s_trim: f64,
    pub g_bar: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `|sum q - 1|` for each number of repair rounds checked.
    pub normalization: Vec<(usize, f64)>,
    pub mixture: f64,
    pub gain: f64,
    pub covariance_forms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub question: u32,
    pub trajectories: usize,
    pub pi_total_residual: f64,
    pub j_base: f64,
    pub j_meta_direct: f64,
    pub j_meta_decomposed: f64,
    pub delta_j: f64,
    pub a_prec: f64,
    pub v_inter: f64,
    pub z_acc: f64,
    pub j_trim_bar: f64,
    pub s_trim: f64,
    pub g_bar: f64,
    pub unconditional: TrimDecomposition,
    /// Same decomposition with drafts drawn from the rejected ones; absent
    /// when nothing is ever rejected.
    pub rejected: Option<TrimDecomposition>,
    pub residuals: Residuals,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub identity: f64,
    pub normalization: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            identity: 1e-9,
            normalization: 1e-10,
        }
    }
}

impl DecompositionReport {
    pub fn max_identity_residual(&self) -> f64 {
        let mut m = self.residuals.mixture.max(self.residuals.gain).max(self.unconditional.residual);
        if let Some(r) = &self.rejected {
            m = m.max(r.residual);
        }
        m
    }

    pub fn max_normalization_residual(&self) -> f64 {
        self.residuals
            .normalization
            .iter()
            .map(|&(_, r)| r)
            .fold(self.pi_total_residual, f64::max)
    }

    pub fn passes(&self, tol: &Tolerances) -> bool {
        self.max_identity_residual() < tol.identity && self.max_normalization_residual() < tol.normalization
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn to_text(&self, tol: &Tolerances) -> String {
        let mut s = String::new();
        let status = if self.passes(tol) { "PASS" } else { "FAIL" };
        writeln!(s, "question {} ({} trajectories): {status}", self.question, self.trajectories).unwrap();
        writeln!(s, "  J_base            {:.12}", self.j_base).unwrap();
        writeln!(s, "  J_meta direct     {:.12}", self.j_meta_direct).unwrap();
        writeln!(s, "  J_meta decomposed {:.12}", self.j_meta_decomposed).unwrap();
        writeln!(s, "  delta J           {:.12}", self.delta_j).unwrap();
        writeln!(s, "  A_prec            {:.12}", self.a_prec).unwrap();
        writeln!(s, "  V_inter           {:.12}", self.v_inter).unwrap();
        writeln!(s, "  S_trim            {:.12}", self.s_trim).unwrap();
        writeln!(s, "  G_bar             {:.12}", self.g_bar).unwrap();
        writeln!(s, "  Z_acc             {:.12}", self.z_acc).unwrap();
        writeln!(s, "  J_trim_bar        {:.12}", self.j_trim_bar).unwrap();
        if let Some(r) = &self.rejected {
            writeln!(s, "  rejected drafts: S_trim {:.12} G_bar {:.12}", r.s_trim, r.g_bar).unwrap();
        }
        writeln!(s, "  residuals:").unwrap();
        for (n, r) in &self.residuals.normalization {
            writeln!(s, "    normalization N_max={n}  {r:.3e}").unwrap();
        }
        writeln!(s, "    mixture identity       {:.3e}", self.residuals.mixture).unwrap();
        writeln!(s, "    trim identity (all)    {:.3e}", self.unconditional.residual).unwrap();
        if let Some(r) = &self.rejected {
            writeln!(s, "    trim identity (reject) {:.3e}", r.residual).unwrap();
        }
        writeln!(s, "    gain identity          {:.3e}", self.residuals.gain).unwrap();
        writeln!(s, "    covariance forms       {:.3e}", self.residuals.covariance_forms).unwrap();
        s
    }
}
