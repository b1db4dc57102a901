//! Seeded multi-hop worlds and the mock search engine over them.
//!
//! A world is a functional DAG of `(subject, relation, object)` facts. Each
//! question names a start entity and a relation path; following the path
//! from the start entity reaches exactly one answer entity (the last object
//! of the question's gold chain). Search calls return `top_k` chunks: the
//! matching fact if one exists, then deterministic pseudo-random distractors
//! or empty fillers.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuestionId(pub u32);

/// Opaque chunk token. Facts use their index in the world's fact list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChunkId(pub u32);

impl ChunkId {
    pub const FILLER: ChunkId = ChunkId(u32::MAX);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Triple {
    pub fn new(subject: u32, relation: u32, object: u32) -> Self {
        Self {
            subject: EntityId(subject),
            relation: RelationId(relation),
            object: EntityId(object),
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject.0, self.relation.0, self.object.0)
    }
}

/// A search query: look up `(entity, relation, ?)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub entity: EntityId,
    pub relation: RelationId,
}

impl Query {
    pub fn new(entity: u32, relation: u32) -> Self {
        Self {
            entity: EntityId(entity),
            relation: RelationId(relation),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub num_entities: usize,
    pub num_relations: usize,
    /// Gold-chain length.
    pub hop_count: usize,
    /// Chunks returned per search call.
    pub top_k: usize,
    /// Probability that a non-matching slot is filled by a distractor fact
    /// rather than an empty filler.
    pub distractor_rate: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_entities: 50,
            num_relations: 4,
            hop_count: 2,
            top_k: 3,
            distractor_rate: 0.5,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.hop_count < 1 {
            return bad("hop_count must be at least 1".into());
        }
        if self.top_k < 1 {
            return bad("top_k must be at least 1".into());
        }
        if self.num_relations < 1 {
            return bad("num_relations must be at least 1".into());
        }
        if self.num_entities < self.hop_count + 1 {
            return bad(format!(
                "num_entities = {} cannot hold a {}-hop chain",
                self.num_entities, self.hop_count
            ));
        }
        if self.num_entities > u32::MAX as usize / 2 || self.num_relations > u32::MAX as usize / 2
        {
            return bad("vocabulary too large".into());
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return bad(format!(
                "distractor_rate = {} is not a probability",
                self.distractor_rate
            ));
        }
        Ok(())
    }

    /// Number of questions the generator attempts to place.
    pub fn question_target(&self) -> usize {
        (self.num_entities / (self.hop_count + 1)).max(1)
    }

    fn background_target(&self) -> usize {
        self.num_entities * self.num_relations / 4
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    pub entity: EntityId,
    pub relations: Vec<RelationId>,
    pub gold_chain: Vec<Triple>,
}

impl Question {
    pub fn answer(&self) -> EntityId {
        self.gold_chain
            .last()
            .map(|t| t.object)
            .unwrap_or(self.entity)
    }

    pub fn hop_count(&self) -> usize {
        self.relations.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: ChunkId,
    pub content: Option<Triple>,
    pub on_gold_chain: bool,
}

impl Chunk {
    pub fn filler() -> Self {
        Self {
            id: ChunkId::FILLER,
            content: None,
            on_gold_chain: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub chunks: Vec<Chunk>,
}

impl QueryResult {
    pub fn gold_hits(&self) -> usize {
        self.chunks.iter().filter(|c| c.on_gold_chain).count()
    }

    /// The chunk answering `query` exactly, if the result holds one.
    pub fn matching(&self, query: Query) -> Option<&Triple> {
        self.chunks.iter().filter_map(|c| c.content.as_ref()).find(|t| {
            t.subject == query.entity && t.relation == query.relation
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeWorld {
    config: WorldConfig,
    facts: Vec<Triple>,
    lookup: HashMap<(EntityId, RelationId), u32>,
    questions: Vec<Question>,
}

impl KnowledgeWorld {
    /// Assemble a world from explicit parts, checking functionality and the
    /// gold-chain invariants. Used by the loader and by hand-built fixtures.
    pub fn from_parts(
        config: WorldConfig,
        facts: Vec<Triple>,
        questions: Vec<Question>,
    ) -> Result<Self> {
        config.validate()?;
        let mut lookup = HashMap::with_capacity(facts.len());
        for (i, t) in facts.iter().enumerate() {
            if t.subject.0 as usize >= config.num_entities
                || t.object.0 as usize >= config.num_entities
                || t.relation.0 as usize >= config.num_relations
            {
                return Err(Error::Structure(format!("fact {t} outside vocabulary")));
            }
            if lookup.insert((t.subject, t.relation), i as u32).is_some() {
                return Err(Error::Structure(format!(
                    "fact {t} duplicates an existing (subject, relation) key"
                )));
            }
        }
        let world = Self {
            config,
            facts,
            lookup,
            questions,
        };
        for (i, q) in world.questions.iter().enumerate() {
            if q.id.0 as usize != i {
                return Err(Error::Structure(format!("question {} out of order", q.id.0)));
            }
            world.check_question(q)?;
        }
        Ok(world)
    }

    fn check_question(&self, q: &Question) -> Result<()> {
        if q.gold_chain.len() != q.relations.len() || q.gold_chain.is_empty() {
            return Err(Error::Structure(format!(
                "question {} chain length mismatch",
                q.id.0
            )));
        }
        let mut at = q.entity;
        for (t, &r) in q.gold_chain.iter().zip(&q.relations) {
            if t.subject != at || t.relation != r || self.fact(at, r) != Some(*t) {
                return Err(Error::Structure(format!(
                    "question {} gold chain broken at {t}",
                    q.id.0
                )));
            }
            at = t.object;
        }
        Ok(())
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn facts(&self) -> &[Triple] {
        &self.facts
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn question(&self, id: QuestionId) -> Result<&Question> {
        self.questions
            .get(id.0 as usize)
            .ok_or(Error::UnknownQuestion(id.0))
    }

    pub fn fact(&self, entity: EntityId, relation: RelationId) -> Option<Triple> {
        self.fact_index(entity, relation)
            .map(|i| self.facts[i as usize])
    }

    fn fact_index(&self, entity: EntityId, relation: RelationId) -> Option<u32> {
        self.lookup.get(&(entity, relation)).copied()
    }

    pub fn gold_chain(&self, id: QuestionId) -> &[Triple] {
        self.questions
            .get(id.0 as usize)
            .map(|q| q.gold_chain.as_slice())
            .unwrap_or(&[])
    }

    pub fn is_gold(&self, id: QuestionId, triple: &Triple) -> bool {
        self.gold_chain(id).contains(triple)
    }

    /// Write the line-delimited dump: a config header, one `fact s r o` line
    /// per fact, and one `question id s r o` line per gold-chain triple.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let c = &self.config;
        writeln!(
            out,
            "#world entities={} relations={} hops={} top_k={} distractor_rate={} seed={}",
            c.num_entities, c.num_relations, c.hop_count, c.top_k, c.distractor_rate, c.seed
        )?;
        for t in &self.facts {
            writeln!(out, "fact {t}")?;
        }
        for q in &self.questions {
            for t in &q.gold_chain {
                writeln!(out, "question {} {t}", q.id.0)?;
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("dump is ascii")
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut config: Option<WorldConfig> = None;
        let mut facts = Vec::new();
        let mut chains: Vec<Vec<Triple>> = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let perr = |message: String| Error::Parse {
                line: lineno + 1,
                column: 1,
                message,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#world") {
                config = Some(parse_header(rest).map_err(perr)?);
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<u32>().map_err(|e| perr(format!("{s:?}: {e}")));
            match fields.as_slice() {
                ["fact", s, r, o] => facts.push(Triple::new(num(s)?, num(r)?, num(o)?)),
                ["question", id, s, r, o] => {
                    let id = num(id)? as usize;
                    if id > chains.len() {
                        return Err(perr(format!("question {id} appears out of order")));
                    }
                    if id == chains.len() {
                        chains.push(Vec::new());
                    }
                    chains[id].push(Triple::new(num(s)?, num(r)?, num(o)?));
                }
                _ => return Err(perr(format!("unrecognized line {line:?}"))),
            }
        }
        let config = config.ok_or_else(|| Error::Parse {
            line: 1,
            column: 1,
            message: "missing #world header".into(),
        })?;
        let questions = chains
            .into_iter()
            .enumerate()
            .map(|(i, chain)| Question {
                id: QuestionId(i as u32),
                entity: chain[0].subject,
                relations: chain.iter().map(|t| t.relation).collect(),
                gold_chain: chain,
            })
            .collect();
        Self::from_parts(config, facts, questions)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::read_from(text.as_bytes())
    }
}

fn parse_header(rest: &str) -> std::result::Result<WorldConfig, String> {
    let mut c = WorldConfig::default();
    for kv in rest.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| format!("malformed header field {kv:?}"))?;
        let e = |err: &dyn fmt::Display| format!("header field {k}: {err}");
        match k {
            "entities" => c.num_entities = v.parse().map_err(|x| e(&x))?,
            "relations" => c.num_relations = v.parse().map_err(|x| e(&x))?,
            "hops" => c.hop_count = v.parse().map_err(|x| e(&x))?,
            "top_k" => c.top_k = v.parse().map_err(|x| e(&x))?,
            "distractor_rate" => c.distractor_rate = v.parse().map_err(|x| e(&x))?,
            "seed" => c.seed = v.parse().map_err(|x| e(&x))?,
            _ => return Err(format!("unknown header field {k:?}")),
        }
    }
    Ok(c)
}

/// Generate a world and its question set, deterministically in `config`.
pub fn generate_world(config: &WorldConfig) -> Result<(KnowledgeWorld, Vec<Question>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.num_entities;
    let h = config.hop_count;

    // A random topological order; facts always point forward in it.
    let mut order: Vec<u32> = (0..n as u32).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut rank = vec![0usize; n];
    for (pos, &e) in order.iter().enumerate() {
        rank[e as usize] = pos;
    }

    let mut facts: Vec<Triple> = Vec::new();
    let mut lookup: HashMap<(EntityId, RelationId), u32> = HashMap::new();
    let mut questions: Vec<Question> = Vec::new();
    let mut seen_questions: HashSet<(EntityId, Vec<RelationId>)> = HashSet::new();

    const ATTEMPTS: usize = 32;
    for _ in 0..config.question_target() {
        for _ in 0..ATTEMPTS {
            let mut chain_entities: Vec<u32> = index::sample(&mut rng, n, h + 1)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            chain_entities.sort_by_key(|&e| rank[e as usize]);
            let relations: Vec<RelationId> = (0..h)
                .map(|_| RelationId(rng.gen_range(0..config.num_relations as u32)))
                .collect();
            let start = EntityId(chain_entities[0]);
            if seen_questions.contains(&(start, relations.clone())) {
                continue;
            }
            let chain: Vec<Triple> = (0..h)
                .map(|i| Triple {
                    subject: EntityId(chain_entities[i]),
                    relation: relations[i],
                    object: EntityId(chain_entities[i + 1]),
                })
                .collect();
            let conflict = chain.iter().any(|t| {
                lookup
                    .get(&(t.subject, t.relation))
                    .is_some_and(|&i| facts[i as usize] != *t)
            });
            if conflict {
                continue;
            }
            for t in &chain {
                lookup.entry((t.subject, t.relation)).or_insert_with(|| {
                    facts.push(*t);
                    (facts.len() - 1) as u32
                });
            }
            seen_questions.insert((start, relations.clone()));
            questions.push(Question {
                id: QuestionId(questions.len() as u32),
                entity: start,
                relations,
                gold_chain: chain,
            });
            break;
        }
    }

    if n >= 2 {
        let target = config.background_target();
        let mut added = 0;
        for _ in 0..target * 4 {
            if added == target {
                break;
            }
            let pair = index::sample(&mut rng, n, 2);
            let (mut a, mut b) = (pair.index(0), pair.index(1));
            if rank[a] > rank[b] {
                std::mem::swap(&mut a, &mut b);
            }
            let r = RelationId(rng.gen_range(0..config.num_relations as u32));
            let key = (EntityId(a as u32), r);
            if lookup.contains_key(&key) {
                continue;
            }
            facts.push(Triple {
                subject: key.0,
                relation: r,
                object: EntityId(b as u32),
            });
            lookup.insert(key, (facts.len() - 1) as u32);
            added += 1;
        }
    }

    let world = KnowledgeWorld::from_parts(config.clone(), facts, questions)?;
    let questions = world.questions.clone();
    Ok((world, questions))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Order-sensitive hash of seed components into one 64-bit seed.
pub fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// The mock search engine. `ordinal` is the index of this call within its
/// trajectory (0 for the first search), so results never depend on how
/// concurrent rollouts interleave.
pub fn search(world: &KnowledgeWorld, question: QuestionId, query: Query, ordinal: u32) -> QueryResult {
    let c = &world.config;
    let known = (query.entity.0 as usize) < c.num_entities
        && (query.relation.0 as usize) < c.num_relations;
    if !known {
        return QueryResult {
            chunks: vec![Chunk::filler(); c.top_k],
        };
    }

    let gold = world.gold_chain(question);
    let mut chunks = Vec::with_capacity(c.top_k);
    let matched = world.fact_index(query.entity, query.relation);
    if let Some(i) = matched {
        let t = world.facts[i as usize];
        chunks.push(Chunk {
            id: ChunkId(i),
            content: Some(t),
            on_gold_chain: gold.contains(&t),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[
        c.seed,
        question.0 as u64,
        query.entity.0 as u64,
        query.relation.0 as u64,
        ordinal as u64,
    ]));
    let mut pool: Vec<u32> = (0..world.facts.len() as u32)
        .filter(|&i| Some(i) != matched && !gold.contains(&world.facts[i as usize]))
        .collect();
    while chunks.len() < c.top_k {
        let use_distractor = rng.gen::<f64>() < c.distractor_rate;
        if use_distractor && !pool.is_empty() {
            let j = rng.gen_range(0..pool.len());
            let i = pool.swap_remove(j);
            chunks.push(Chunk {
                id: ChunkId(i),
                content: Some(world.facts[i as usize]),
                on_gold_chain: false,
            });
        } else {
            chunks.push(Chunk::filler());
        }
    }
    QueryResult { chunks }
}

/// Per-query utility bits: a collection is useful iff it holds a gold-chain
/// fact that no earlier collection in the history already contained.
/// Irrelevant and redundant collections score zero.
pub fn chunk_utility(world: &KnowledgeWorld, question: QuestionId, history: &[QueryResult]) -> Vec<bool> {
    let gold = world.gold_chain(question);
    let mut seen: HashSet<Triple> = HashSet::new();
    history
        .iter()
        .map(|result| {
            let useful = result
                .chunks
                .iter()
                .filter_map(|c| c.content.as_ref())
                .any(|t| gold.contains(t) && !seen.contains(t));
            seen.extend(result.chunks.iter().filter_map(|c| c.content));
            useful
        })
        .collect()
}
