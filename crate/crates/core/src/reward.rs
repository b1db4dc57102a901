//! Outcome-gated hybrid reward: `total = outcome * (1 + process)`.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::synthenv::{chunk_utility, KnowledgeWorld, QuestionId};
use crate::trajectory::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Real")]
pub struct RewardBreakdown<S> {
    /// Exact match of the final answer: 0 or 1.
    pub outcome: u8,
    /// Fraction of search calls whose collection was useful.
    pub process: S,
    pub total: S,
    /// Number of search calls, `M`.
    pub num_queries: usize,
    pub utilities: Vec<bool>,
}

impl<S: Real> RewardBreakdown<S> {
    pub const CSV_HEADER: &'static str = "outcome,process,total,M";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.outcome, self.process, self.total, self.num_queries
        )
    }

    /// Scalar reward used for training under `kind`.
    pub fn training_reward(&self, kind: RewardKind) -> S {
        match kind {
            RewardKind::Hybrid => self.total,
            RewardKind::OutcomeOnly => S::from_u8(self.outcome).unwrap(),
        }
    }
}

/// Which reward the trainer optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Hybrid,
    OutcomeOnly,
}

pub fn outcome_reward<S: Real>(t: &Trajectory<S>, world: &KnowledgeWorld, question: QuestionId) -> u8 {
    match (t.answer(), world.question(question)) {
        (Some(a), Ok(q)) if a == q.answer() => 1,
        _ => 0,
    }
}

/// Utility density over the trajectory's search calls; zero when it never
/// searched.
pub fn process_reward<S: Real>(t: &Trajectory<S>, world: &KnowledgeWorld, question: QuestionId) -> S {
    process_parts(t, world, question).0
}

fn process_parts<S: Real>(t: &Trajectory<S>, world: &KnowledgeWorld, question: QuestionId) -> (S, Vec<bool>) {
    let history: Vec<_> = t.query_results().cloned().collect();
    let utilities = chunk_utility(world, question, &history);
    if utilities.is_empty() {
        return (S::zero(), utilities);
    }
    let useful = utilities.iter().filter(|&&u| u).count();
    (
        S::from_usize_lossy(useful) / S::from_usize_lossy(utilities.len()),
        utilities,
    )
}

pub fn hybrid_reward<S: Real>(t: &Trajectory<S>, world: &KnowledgeWorld, question: QuestionId) -> RewardBreakdown<S> {
    let outcome = outcome_reward(t, world, question);
    let (process, utilities) = process_parts(t, world, question);
    let total = if outcome == 1 { S::one() + process } else { S::zero() };
    RewardBreakdown {
        outcome,
        process,
        total,
        num_queries: utilities.len(),
        utilities,
    }
}
