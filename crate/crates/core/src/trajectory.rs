//! Tagged reasoning trajectories, prefixes and their text/record formats.
//!
//! A trajectory is a sequence of actor-emitted steps (`Think`, `Search`,
//! `Answer`) interleaved with environment-emitted `Information` steps. Every
//! `Search` is followed by exactly one `Information`; an `Answer` ends it.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::synthenv::{Chunk, ChunkId, EntityId, Query, QueryResult, QuestionId, RelationId, Triple};

/// An actor decision, without its log-probability.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Think { token: u32 },
    Search(Query),
    Answer(EntityId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StepKind {
    Think,
    Search,
    Information,
    Answer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Real")]
pub enum Step<S> {
    Think { token: u32, logprob: S },
    Search { query: Query, logprob: S },
    Information { result: QueryResult },
    Answer { entity: EntityId, logprob: S },
}

impl<S: Real> Step<S> {
    pub fn actor(action: Action, logprob: S) -> Self {
        match action {
            Action::Think { token } => Step::Think { token, logprob },
            Action::Search(query) => Step::Search { query, logprob },
            Action::Answer(entity) => Step::Answer { entity, logprob },
        }
    }

    pub fn kind(&self) -> StepKind {
        match self {
            Step::Think { .. } => StepKind::Think,
            Step::Search { .. } => StepKind::Search,
            Step::Information { .. } => StepKind::Information,
            Step::Answer { .. } => StepKind::Answer,
        }
    }

    pub fn is_actor(&self) -> bool {
        !matches!(self, Step::Information { .. })
    }

    pub fn action(&self) -> Option<Action> {
        match *self {
            Step::Think { token, .. } => Some(Action::Think { token }),
            Step::Search { query, .. } => Some(Action::Search(query)),
            Step::Answer { entity, .. } => Some(Action::Answer(entity)),
            Step::Information { .. } => None,
        }
    }

    pub fn actor_logprob(&self) -> Option<S> {
        match *self {
            Step::Think { logprob, .. } | Step::Search { logprob, .. } | Step::Answer { logprob, .. } => {
                Some(logprob)
            }
            Step::Information { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Real")]
pub struct Trajectory<S> {
    pub question_id: QuestionId,
    steps: Vec<Step<S>>,
}

impl<S: Real> Trajectory<S> {
    pub fn new(question_id: QuestionId) -> Self {
        Self {
            question_id,
            steps: Vec::new(),
        }
    }

    /// Build from a complete step list, checking every structural invariant.
    pub fn from_steps(question_id: QuestionId, steps: Vec<Step<S>>) -> Result<Self> {
        let mut t = Self::new(question_id);
        for step in steps {
            t.push(step)?;
        }
        t.check_closed()?;
        Ok(t)
    }

    /// Append one step, rejecting anything that breaks Search/Information
    /// pairing or follows an Answer.
    pub fn push(&mut self, step: Step<S>) -> Result<()> {
        let pos = self.steps.len();
        match self.steps.last().map(Step::kind) {
            Some(StepKind::Answer) => {
                return Err(Error::Structure(format!(
                    "step {pos} follows a terminal answer"
                )))
            }
            Some(StepKind::Search) if step.kind() != StepKind::Information => {
                return Err(Error::Structure(format!(
                    "search at step {} is not followed by information",
                    pos - 1
                )))
            }
            prev => {
                if step.kind() == StepKind::Information && prev != Some(StepKind::Search) {
                    return Err(Error::Structure(format!(
                        "information at step {pos} does not follow a search"
                    )));
                }
            }
        }
        if let Some(lp) = step.actor_logprob() {
            if lp.is_nan() || lp > S::zero() {
                return Err(Error::Structure(format!(
                    "step {pos} has log-probability {lp} outside (-inf, 0]"
                )));
            }
        }
        self.steps.push(step);
        Ok(())
    }

    /// A trajectory may not end on a Search awaiting its Information.
    pub fn check_closed(&self) -> Result<()> {
        if self.steps.last().map(Step::kind) == Some(StepKind::Search) {
            return Err(Error::Structure(
                "trailing search without information".into(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> &[Step<S>] {
        &self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actor_steps(&self) -> impl Iterator<Item = &Step<S>> {
        self.steps.iter().filter(|s| s.is_actor())
    }

    pub fn actor_step_count(&self) -> usize {
        self.actor_steps().count()
    }

    /// Number of Search steps taken.
    pub fn turn_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.kind() == StepKind::Search)
            .count()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().filter_map(Step::action).collect()
    }

    pub fn answer(&self) -> Option<EntityId> {
        match self.steps.last() {
            Some(Step::Answer { entity, .. }) => Some(*entity),
            _ => None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.answer().is_some()
    }

    pub fn query_results(&self) -> impl Iterator<Item = &QueryResult> {
        self.steps.iter().filter_map(|s| match s {
            Step::Information { result } => Some(result),
            _ => None,
        })
    }

    pub fn queries(&self) -> impl Iterator<Item = Query> + '_ {
        self.steps.iter().filter_map(|s| match s {
            Step::Search { query, .. } => Some(*query),
            _ => None,
        })
    }

    /// Sum of the recorded actor log-probabilities.
    pub fn recorded_logprob(&self) -> S {
        self.steps.iter().filter_map(Step::actor_logprob).sum()
    }

    /// Index into `steps` just past the first `k` actor steps and the
    /// Information attached to the last of them.
    fn cut_position(&self, k: usize) -> usize {
        let mut seen = 0;
        for (i, s) in self.steps.iter().enumerate() {
            if s.is_actor() {
                if seen == k {
                    return i;
                }
                seen += 1;
            }
        }
        self.steps.len()
    }

    /// Tagged-text rendering using the `<think>`, `<search>`, `<information>`
    /// and `<answer>` tag pairs, one step per line.
    pub fn to_tagged(&self) -> String {
        let mut out = String::new();
        writeln!(out, "<trajectory question={}>", self.question_id.0).unwrap();
        for step in &self.steps {
            match step {
                Step::Think { token, logprob } => {
                    writeln!(out, "<think lp={logprob}>{token}</think>").unwrap()
                }
                Step::Search { query, logprob } => writeln!(
                    out,
                    "<search lp={logprob}>{} {}</search>",
                    query.entity.0, query.relation.0
                )
                .unwrap(),
                Step::Information { result } => {
                    let body: Vec<String> = result.chunks.iter().map(render_chunk).collect();
                    writeln!(out, "<information>{}</information>", body.join(" | ")).unwrap()
                }
                Step::Answer { entity, logprob } => {
                    writeln!(out, "<answer lp={logprob}>{}</answer>", entity.0).unwrap()
                }
            }
        }
        out.push_str("</trajectory>\n");
        out
    }

    /// Parse the tagged-text format. Lines starting with `#` are ignored.
    pub fn parse_tagged(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (hline, header) = lines.next().ok_or_else(|| perr(1, 1, "empty input"))?;
        let qid = header
            .strip_prefix("<trajectory question=")
            .and_then(|r| r.strip_suffix('>'))
            .ok_or_else(|| perr(hline, 1, "expected <trajectory question=N>"))?;
        let qid: u32 = qid
            .parse()
            .map_err(|e| perr(hline, 21, &format!("question id: {e}")))?;
        let mut traj = Self::new(QuestionId(qid));
        let mut closed = false;
        for (lineno, line) in lines {
            if closed {
                return Err(perr(lineno, 1, "content after </trajectory>"));
            }
            if line == "</trajectory>" {
                closed = true;
                continue;
            }
            let step = parse_step::<S>(lineno, line)?;
            traj.push(step).map_err(|e| perr(lineno, 1, &e.to_string()))?;
        }
        if !closed {
            return Err(perr(text.lines().count().max(1), 1, "missing </trajectory>"));
        }
        traj.check_closed().map_err(|e| perr(text.lines().count(), 1, &e.to_string()))?;
        Ok(traj)
    }

    /// Compact one-line JSON record for metrics pipelines.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }

    pub fn from_record(line: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(line)?;
        Self::from_steps(t.question_id, t.steps)
    }
}

fn perr(line: usize, column: usize, message: &str) -> Error {
    Error::Parse {
        line,
        column,
        message: message.to_string(),
    }
}

fn render_chunk(c: &Chunk) -> String {
    let id = if c.id == ChunkId::FILLER {
        "*".to_string()
    } else {
        c.id.0.to_string()
    };
    match c.content {
        Some(t) => format!("{id} {t} {}", if c.on_gold_chain { 'g' } else { 'n' }),
        None => format!("{id} -"),
    }
}

fn parse_chunk(line: usize, column: usize, text: &str) -> Result<Chunk> {
    let f: Vec<&str> = text.split_whitespace().collect();
    let bad = |m: &str| perr(line, column, &format!("chunk {text:?}: {m}"));
    let id = match f.first() {
        Some(&"*") => ChunkId::FILLER,
        Some(s) => ChunkId(s.parse().map_err(|_| bad("bad id"))?),
        None => return Err(bad("empty")),
    };
    match f.as_slice() {
        [_, "-"] => Ok(Chunk {
            id,
            content: None,
            on_gold_chain: false,
        }),
        [_, s, r, o, flag] => {
            let n = |x: &str| x.parse::<u32>().map_err(|_| bad("bad number"));
            let on_gold_chain = match *flag {
                "g" => true,
                "n" => false,
                _ => return Err(bad("flag must be g or n")),
            };
            Ok(Chunk {
                id,
                content: Some(Triple::new(n(s)?, n(r)?, n(o)?)),
                on_gold_chain,
            })
        }
        _ => Err(bad("expected `id s r o flag` or `id -`")),
    }
}

fn parse_step<S: Real>(lineno: usize, line: &str) -> Result<Step<S>> {
    if !line.starts_with('<') {
        return Err(perr(lineno, 1, "expected an opening tag"));
    }
    let open_end = line
        .find('>')
        .ok_or_else(|| perr(lineno, 1, "unterminated opening tag"))?;
    let open = &line[1..open_end];
    let (name, attrs) = match open.split_once(' ') {
        Some((n, a)) => (n, Some(a)),
        None => (open, None),
    };
    let close = format!("</{name}>");
    let body_start = open_end + 1;
    let close_at = line[body_start..]
        .find("</")
        .map(|i| i + body_start)
        .ok_or_else(|| perr(lineno, line.len() + 1, &format!("missing {close}")))?;
    if line[close_at..] != *close {
        return Err(perr(
            lineno,
            close_at + 1,
            &format!("expected {close}, found {:?}", &line[close_at..]),
        ));
    }
    let body = &line[body_start..close_at];

    let logprob = || -> Result<S> {
        let a = attrs.ok_or_else(|| perr(lineno, 2, &format!("<{name}> needs an lp attribute")))?;
        let v = a
            .strip_prefix("lp=")
            .ok_or_else(|| perr(lineno, name.len() + 3, "expected lp=<value>"))?;
        v.parse::<S>()
            .map_err(|_| perr(lineno, name.len() + 6, &format!("bad log-probability {v:?}")))
    };
    let number = |s: &str| -> Result<u32> {
        s.trim()
            .parse()
            .map_err(|_| perr(lineno, body_start + 1, &format!("bad number {s:?}")))
    };

    match name {
        "think" => Ok(Step::Think {
            token: number(body)?,
            logprob: logprob()?,
        }),
        "search" => {
            let (e, r) = body
                .trim()
                .split_once(' ')
                .ok_or_else(|| perr(lineno, body_start + 1, "query must be `entity relation`"))?;
            Ok(Step::Search {
                query: Query {
                    entity: EntityId(number(e)?),
                    relation: RelationId(number(r)?),
                },
                logprob: logprob()?,
            })
        }
        "answer" => Ok(Step::Answer {
            entity: EntityId(number(body)?),
            logprob: logprob()?,
        }),
        "information" => {
            if attrs.is_some() {
                return Err(perr(lineno, name.len() + 2, "<information> takes no attributes"));
            }
            let chunks = if body.trim().is_empty() {
                Vec::new()
            } else {
                body.split(" | ")
                    .map(|c| parse_chunk(lineno, body_start + 1, c))
                    .collect::<Result<_>>()?
            };
            Ok(Step::Information {
                result: QueryResult { chunks },
            })
        }
        other => Err(perr(lineno, 2, &format!("unknown tag <{other}>"))),
    }
}

/// The first `cut` actor steps of a trajectory (with their attached
/// Information), used as the fixed start of a regeneration.
#[derive(Clone, Debug, PartialEq)]
pub struct Prefix<S> {
    pub trajectory: Trajectory<S>,
    pub cut: usize,
}

impl<S: Real> Prefix<S> {
    pub fn steps(&self) -> &[Step<S>] {
        self.trajectory.steps()
    }

    pub fn is_empty(&self) -> bool {
        self.cut == 0
    }
}

pub fn take_prefix<S: Real>(t: &Trajectory<S>, k: usize) -> Result<Prefix<S>> {
    let max = t.actor_step_count();
    if k > max {
        return Err(Error::CutOutOfRange { k, max });
    }
    let end = t.cut_position(k);
    Ok(Prefix {
        trajectory: Trajectory {
            question_id: t.question_id,
            steps: t.steps[..end].to_vec(),
        },
        cut: k,
    })
}

/// Join a prefix with a suffix generated from it.
pub fn concat<S: Real>(prefix: &Prefix<S>, suffix: &[Step<S>]) -> Result<Trajectory<S>> {
    let mut t = prefix.trajectory.clone();
    for step in suffix {
        t.push(step.clone())?;
    }
    t.check_closed()?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn info(s: u32, r: u32, o: u32) -> Step<f64> {
        Step::Information {
            result: QueryResult {
                chunks: vec![
                    Chunk {
                        id: ChunkId(3),
                        content: Some(Triple::new(s, r, o)),
                        on_gold_chain: true,
                    },
                    Chunk::filler(),
                ],
            },
        }
    }

    /// think, search, search, think, answer: five actor steps.
    fn five_step() -> Trajectory<f64> {
        Trajectory::from_steps(
            QuestionId(0),
            vec![
                Step::Think { token: 0, logprob: -0.5 },
                Step::Search { query: Query::new(1, 0), logprob: -1.25 },
                info(1, 0, 2),
                Step::Search { query: Query::new(2, 1), logprob: -0.75 },
                info(2, 1, 3),
                Step::Think { token: 2, logprob: -2.0 },
                Step::Answer { entity: EntityId(3), logprob: -0.125 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn prefix_edges() {
        let t = five_step();
        assert_eq!(t.actor_step_count(), 5);
        assert_eq!(t.turn_count(), 2);
        let p0 = take_prefix(&t, 0).unwrap();
        assert!(p0.steps().is_empty());
        let p5 = take_prefix(&t, 5).unwrap();
        assert_eq!(p5.trajectory, t);
        assert!(matches!(take_prefix(&t, 6), Err(Error::CutOutOfRange { k: 6, max: 5 })));
    }

    #[test]
    fn prefix_keeps_attached_information() {
        let t = five_step();
        let p = take_prefix(&t, 2).unwrap();
        let kinds: Vec<_> = p.steps().iter().map(Step::kind).collect();
        assert_eq!(kinds, vec![StepKind::Think, StepKind::Search, StepKind::Information]);
        assert_eq!(p.steps(), &t.steps()[..3]);
    }

    #[test]
    fn concat_rejects_broken_pairing() {
        let t = five_step();
        let p = take_prefix(&t, 1).unwrap();
        let suffix = vec![
            Step::Search { query: Query::new(1, 0), logprob: -1.0 },
            Step::Answer { entity: EntityId(2), logprob: -1.0 },
        ];
        assert!(matches!(concat(&p, &suffix), Err(Error::Structure(_))));
        let dangling = vec![Step::Search { query: Query::new(1, 0), logprob: -1.0 }];
        assert!(concat(&p, &dangling).is_err());
        let whole = concat(&take_prefix(&t, 0).unwrap(), t.steps()).unwrap();
        assert_eq!(whole, t);
    }

    #[test]
    fn nothing_follows_answer() {
        let mut t = Trajectory::<f64>::new(QuestionId(0));
        t.push(Step::Answer { entity: EntityId(1), logprob: -1.0 }).unwrap();
        assert!(t.push(Step::Think { token: 0, logprob: -1.0 }).is_err());
    }

    #[test]
    fn tagged_format_orders_search_then_information() {
        let t = Trajectory::from_steps(
            QuestionId(4),
            vec![
                Step::Search { query: Query::new(1, 0), logprob: -1.0 },
                info(1, 0, 2),
                Step::Answer { entity: EntityId(2), logprob: -0.5 },
            ],
        )
        .unwrap();
        let text = t.to_tagged();
        assert_eq!(text.matches("<search").count(), 1);
        assert_eq!(text.matches("</search>").count(), 1);
        assert_eq!(text.matches("<information>").count(), 1);
        assert!(text.find("</search>").unwrap() < text.find("<information>").unwrap());
        assert_eq!(Trajectory::<f64>::parse_tagged(&text).unwrap(), t);
    }

    #[test]
    fn empty_trajectory_is_header_only() {
        let t = Trajectory::<f64>::new(QuestionId(9));
        let text = t.to_tagged();
        assert_eq!(text, "<trajectory question=9>\n</trajectory>\n");
        assert_eq!(Trajectory::<f64>::parse_tagged(&text).unwrap(), t);
    }

    #[test]
    fn parse_errors_name_position() {
        let bad = "<trajectory question=0>\n<search lp=-1>1 0</answer>\n</trajectory>\n";
        match Trajectory::<f64>::parse_tagged(bad) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, 18);
            }
            other => panic!("{other:?}"),
        }
        let misordered = "<trajectory question=0>\n<information>* -</information>\n</trajectory>\n";
        assert!(matches!(
            Trajectory::<f64>::parse_tagged(misordered),
            Err(Error::Parse { line: 2, .. })
        ));
        let unclosed = "<trajectory question=0>\n<think lp=-1>0</think>\n";
        assert!(Trajectory::<f64>::parse_tagged(unclosed).is_err());
    }

    #[test]
    fn record_round_trip() {
        let t = five_step();
        assert_eq!(Trajectory::from_record(&t.to_record()).unwrap(), t);
    }
}
