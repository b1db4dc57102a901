//! The base policy: a featurized softmax over Think / Search / Answer
//! actions that rolls out trajectories against the search environment.
//!
//! The agent's observable state is its question (start entity and relation
//! path), the entities it has seen so far, how many hops of the relation
//! path it has resolved, the queries it has issued and the turns it has
//! used. Each actor step consumes one turn of the budget; a Search is
//! answered immediately by an Information step.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, log_softmax};
use crate::scalar::Real;
use crate::synthenv::{search, EntityId, KnowledgeWorld, Query, Question, QuestionId, RelationId};
use crate::trajectory::{concat, take_prefix, Action, Prefix, Step, Trajectory};

/// Feature slots shared by every world; per-relation search biases follow.
pub mod feature {
    pub const THINK: usize = 0;
    pub const THINK_RESOLVED: usize = 1;
    pub const SEARCH: usize = 2;
    pub const SEARCH_CURSOR: usize = 3;
    pub const SEARCH_NEXT_RELATION: usize = 4;
    pub const SEARCH_ADVANCE: usize = 5;
    pub const SEARCH_REPEAT: usize = 6;
    pub const SEARCH_RESOLVED: usize = 7;
    pub const SEARCH_QUESTION_ENTITY: usize = 8;
    pub const ANSWER: usize = 9;
    pub const ANSWER_CURSOR: usize = 10;
    pub const ANSWER_RESOLVED: usize = 11;
    pub const ANSWER_RESOLVED_CURSOR: usize = 12;
    pub const ANSWER_QUESTION_ENTITY: usize = 13;
    pub const SEARCH_LAST_TURN: usize = 14;
    pub const ANSWER_LAST_TURN: usize = 15;
    pub const BASE: usize = 16;
}

/// What the actor can observe after a sequence of steps.
#[derive(Clone, Debug)]
pub struct ActorState {
    question_entity: EntityId,
    relations: Vec<RelationId>,
    query_relations: Vec<RelationId>,
    budget: usize,
    known: Vec<EntityId>,
    cursor: EntityId,
    hop: usize,
    issued: HashSet<Query>,
    pending: Option<Query>,
    actor_steps: usize,
    searches: usize,
    answered: bool,
}

impl ActorState {
    pub fn initial(question: &Question, budget: usize) -> Self {
        let mut query_relations = Vec::new();
        for &r in &question.relations {
            if !query_relations.contains(&r) {
                query_relations.push(r);
            }
        }
        Self {
            question_entity: question.entity,
            relations: question.relations.clone(),
            query_relations,
            budget,
            known: vec![question.entity],
            cursor: question.entity,
            hop: 0,
            issued: HashSet::new(),
            pending: None,
            actor_steps: 0,
            searches: 0,
            answered: false,
        }
    }

    pub fn from_steps<S: Real>(question: &Question, budget: usize, steps: &[Step<S>]) -> Self {
        let mut s = Self::initial(question, budget);
        for step in steps {
            s.advance(step);
        }
        s
    }

    pub fn advance<S: Real>(&mut self, step: &Step<S>) {
        match step {
            Step::Think { .. } => self.actor_steps += 1,
            Step::Search { query, .. } => {
                self.actor_steps += 1;
                self.searches += 1;
                self.issued.insert(*query);
                self.pending = Some(*query);
            }
            Step::Information { result } => {
                for t in result.chunks.iter().filter_map(|c| c.content.as_ref()) {
                    if !self.known.contains(&t.object) {
                        self.known.push(t.object);
                    }
                }
                if let Some(q) = self.pending.take() {
                    if self.is_advance(q) {
                        if let Some(t) = result.matching(q) {
                            self.cursor = t.object;
                            self.hop += 1;
                        }
                    }
                }
            }
            Step::Answer { .. } => {
                self.actor_steps += 1;
                self.answered = true;
            }
        }
    }

    fn is_advance(&self, q: Query) -> bool {
        q.entity == self.cursor && self.next_relation() == Some(q.relation)
    }

    pub fn next_relation(&self) -> Option<RelationId> {
        self.relations.get(self.hop).copied()
    }

    pub fn resolved(&self) -> bool {
        self.hop >= self.relations.len()
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn cursor(&self) -> EntityId {
        self.cursor
    }

    pub fn actor_steps(&self) -> usize {
        self.actor_steps
    }

    /// Searches issued so far; the ordinal of the next search call.
    pub fn searches(&self) -> usize {
        self.searches
    }

    pub fn known_entities(&self) -> &[EntityId] {
        &self.known
    }

    pub fn is_done(&self) -> bool {
        self.answered || self.actor_steps >= self.budget
    }

    /// Legal actions in a fixed order: Think, then Search over known
    /// entities × question relations, then Answer over known entities.
    pub fn legal_actions(&self) -> Vec<Action> {
        if self.is_done() {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(1 + self.known.len() * (self.query_relations.len() + 1));
        out.push(Action::Think {
            token: self.hop as u32,
        });
        for &e in &self.known {
            for &r in &self.query_relations {
                out.push(Action::Search(Query {
                    entity: e,
                    relation: r,
                }));
            }
        }
        out.extend(self.known.iter().map(|&e| Action::Answer(e)));
        out
    }

    /// Write the feature vector of `action` into `out` (zeroed first).
    pub fn features<S: Real>(&self, action: Action, out: &mut [S]) {
        use feature::*;
        out.iter_mut().for_each(|x| *x = S::zero());
        let one = S::one();
        let resolved = self.resolved();
        let last_turn = self.actor_steps + 1 == self.budget;
        match action {
            Action::Think { .. } => {
                out[THINK] = one;
                if resolved {
                    out[THINK_RESOLVED] = one;
                }
            }
            Action::Search(q) => {
                out[SEARCH] = one;
                let on_cursor = q.entity == self.cursor;
                let next_rel = self.next_relation() == Some(q.relation);
                if on_cursor {
                    out[SEARCH_CURSOR] = one;
                }
                if next_rel {
                    out[SEARCH_NEXT_RELATION] = one;
                }
                if on_cursor && next_rel {
                    out[SEARCH_ADVANCE] = one;
                }
                if self.issued.contains(&q) {
                    out[SEARCH_REPEAT] = one;
                }
                if resolved {
                    out[SEARCH_RESOLVED] = one;
                }
                if q.entity == self.question_entity {
                    out[SEARCH_QUESTION_ENTITY] = one;
                }
                if last_turn {
                    out[SEARCH_LAST_TURN] = one;
                }
                if let Some(slot) = out.get_mut(BASE + q.relation.0 as usize) {
                    *slot = one;
                }
            }
            Action::Answer(e) => {
                out[ANSWER] = one;
                let on_cursor = e == self.cursor;
                if on_cursor {
                    out[ANSWER_CURSOR] = one;
                }
                if resolved {
                    out[ANSWER_RESOLVED] = one;
                }
                if on_cursor && resolved {
                    out[ANSWER_RESOLVED_CURSOR] = one;
                }
                if e == self.question_entity {
                    out[ANSWER_QUESTION_ENTITY] = one;
                }
                if last_turn {
                    out[ANSWER_LAST_TURN] = one;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Real")]
pub struct ActorParams<S> {
    pub weights: Vec<S>,
}

impl<S: Real> ActorParams<S> {
    pub fn dim_for(num_relations: usize) -> usize {
        feature::BASE + num_relations
    }

    /// Zero weights: the uniform policy over legal actions.
    pub fn zeros(num_relations: usize) -> Self {
        Self {
            weights: vec![S::zero(); Self::dim_for(num_relations)],
        }
    }

    pub fn for_world(world: &KnowledgeWorld) -> Self {
        Self::zeros(world.config().num_relations)
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Feature rows for every legal action at `state`, in support order.
    pub fn feature_rows(&self, state: &ActorState) -> (Vec<Action>, Vec<Vec<S>>) {
        let actions = state.legal_actions();
        let rows = actions
            .iter()
            .map(|&a| {
                let mut row = vec![S::zero(); self.dim()];
                state.features(a, &mut row);
                row
            })
            .collect();
        (actions, rows)
    }

    pub fn distribution(&self, state: &ActorState) -> ActionDistribution<S> {
        let (support, rows) = self.feature_rows(state);
        let scores: Vec<S> = rows.iter().map(|r| dot(&self.weights, r)).collect();
        ActionDistribution {
            support,
            logprobs: log_softmax(&scores),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ActionDistribution<S> {
    pub support: Vec<Action>,
    pub logprobs: Vec<S>,
}

impl<S: Real> ActionDistribution<S> {
    pub fn probabilities(&self) -> Vec<S> {
        self.logprobs.iter().map(|lp| lp.exp()).collect()
    }

    pub fn logprob_of(&self, action: Action) -> Option<S> {
        self.support
            .iter()
            .position(|&a| a == action)
            .map(|i| self.logprobs[i])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Action, S) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, lp) in self.logprobs.iter().enumerate() {
            acc += lp.to_f64_lossy().exp();
            if u < acc {
                return (self.support[i], self.logprobs[i]);
            }
        }
        // Rounding left a sliver of mass past the last bucket.
        let i = self.support.len() - 1;
        (self.support[i], self.logprobs[i])
    }
}

/// Roll out one trajectory following the multi-turn search loop.
pub fn rollout<S: Real, R: Rng + ?Sized>(
    params: &ActorParams<S>,
    world: &KnowledgeWorld,
    question: &Question,
    budget: usize,
    rng: &mut R,
) -> Result<Trajectory<S>> {
    if budget < 1 {
        return Err(Error::Precondition("turn budget must be at least 1".into()));
    }
    let empty = Prefix {
        trajectory: Trajectory::new(question.id),
        cut: 0,
    };
    regenerate(params, world, question, &empty, budget, rng)
}

/// Continue sampling from the end of `prefix` under the same policy.
pub fn regenerate<S: Real, R: Rng + ?Sized>(
    params: &ActorParams<S>,
    world: &KnowledgeWorld,
    question: &Question,
    prefix: &Prefix<S>,
    budget: usize,
    rng: &mut R,
) -> Result<Trajectory<S>> {
    if prefix.trajectory.is_terminal() {
        return Err(Error::Precondition(
            "cannot regenerate from a prefix that already answered".into(),
        ));
    }
    if prefix.trajectory.actor_step_count() > budget {
        return Err(Error::Precondition(format!(
            "prefix uses {} turns, budget is {budget}",
            prefix.trajectory.actor_step_count()
        )));
    }
    let mut state = ActorState::from_steps(question, budget, prefix.steps());
    let mut suffix = Vec::new();
    while !state.is_done() {
        let dist = params.distribution(&state);
        let (action, logprob) = dist.sample(rng);
        let step = Step::actor(action, logprob);
        state.advance(&step);
        suffix.push(step);
        if let Action::Search(query) = action {
            let ordinal = (state.searches() - 1) as u32;
            let info = Step::Information {
                result: search(world, question.id, query, ordinal),
            };
            state.advance(&info);
            suffix.push(info);
        }
    }
    concat(prefix, &suffix)
}

/// Exact log-probability of the actor decisions in `t`.
pub fn logprob<S: Real>(
    params: &ActorParams<S>,
    question: &Question,
    budget: usize,
    t: &Trajectory<S>,
) -> Result<S> {
    check_question(question, t.question_id)?;
    let mut state = ActorState::initial(question, budget);
    let mut total = S::zero();
    for (i, step) in t.steps().iter().enumerate() {
        if let Some(action) = step.action() {
            let lp = params
                .distribution(&state)
                .logprob_of(action)
                .ok_or(Error::IllegalAction { step: i })?;
            total = total + lp;
        }
        state.advance(step);
    }
    Ok(total)
}

/// Log-probability of the actor steps after the first `k` ones, i.e. of a
/// regenerated suffix given its prefix.
pub fn suffix_logprob<S: Real>(
    params: &ActorParams<S>,
    question: &Question,
    budget: usize,
    t: &Trajectory<S>,
    k: usize,
) -> Result<S> {
    let full = logprob(params, question, budget, t)?;
    let prefix = take_prefix(t, k)?;
    Ok(full - logprob(params, question, budget, &prefix.trajectory)?)
}

fn check_question(question: &Question, id: QuestionId) -> Result<()> {
    if question.id != id {
        return Err(Error::Precondition(format!(
            "trajectory belongs to question {}, got question {}",
            id.0, question.id.0
        )));
    }
    Ok(())
}
