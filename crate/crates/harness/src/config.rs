//! Flat experiment configuration, read from TOML and overridable from the
//! command line.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use arlab_core::grpo::TrainConfig;
use arlab_core::refiner::{AcceptMode, RefineConfig, TrimPolicy};
use arlab_core::reward::RewardKind;
use arlab_core::synthenv::WorldConfig;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// The four training pipelines compared by the ablation suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    SearchR2Full,
    NoProcessReward,
    NoRefiner,
    RejectionSamplingBaseline,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::SearchR2Full,
        Variant::NoProcessReward,
        Variant::NoRefiner,
        Variant::RejectionSamplingBaseline,
    ];

    /// Ordered so that each entry switches exactly one mechanism relative to
    /// the one before it.
    pub const LADDER: [Variant; 4] = [
        Variant::NoRefiner,
        Variant::NoProcessReward,
        Variant::SearchR2Full,
        Variant::RejectionSamplingBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SearchR2Full => "search_r2_full",
            Variant::NoProcessReward => "no_process_reward",
            Variant::NoRefiner => "no_refiner",
            Variant::RejectionSamplingBaseline => "rejection_sampling_baseline",
        }
    }

    /// Overwrite the mechanisms this variant controls.
    pub fn apply(self, train: &mut TrainConfig, n_max: usize) {
        let (reward, n, trim) = match self {
            Variant::SearchR2Full => (RewardKind::Hybrid, n_max, TrimPolicy::Learned),
            Variant::NoProcessReward => (RewardKind::OutcomeOnly, n_max, TrimPolicy::Learned),
            Variant::NoRefiner => (RewardKind::OutcomeOnly, 0, TrimPolicy::Learned),
            Variant::RejectionSamplingBaseline => (RewardKind::Hybrid, n_max, TrimPolicy::FullRegeneration),
        };
        train.reward = reward;
        train.refine.n_max = n;
        train.refine.trim_policy = trim;
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown variant `{s}`")))
    }
}

/// Every tunable of an experiment as one flat table. Keys match the long
/// command-line flags with `-` replaced by `_`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub variant: Variant,
    /// Number of training seeds, starting at `first_seed`.
    pub seeds: usize,
    pub first_seed: u64,
    pub steps: usize,
    pub group_size: usize,
    pub prompts_per_step: usize,
    pub learning_rate: f64,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub budget: usize,
    pub n_max: usize,
    pub tau: f64,
    pub accept_mode: AcceptMode,
    pub freeze_actor: bool,
    pub divergence_limit: f64,
    pub entities: usize,
    pub relations: usize,
    pub hops: usize,
    pub top_k: usize,
    pub distractor_rate: f64,
    pub world_seed: u64,
    /// Evaluation traces per question after training.
    pub eval_samples: usize,
    /// The evaluation stream of training seed `s` is seeded with
    /// `eval_seed_offset + s`.
    pub eval_seed_offset: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let w = WorldConfig::default();
        Self {
            name: "experiment".into(),
            variant: Variant::SearchR2Full,
            seeds: 20,
            first_seed: 0,
            steps: t.steps,
            group_size: t.group_size,
            prompts_per_step: t.prompts_per_step,
            learning_rate: t.learning_rate,
            clip_eps: t.clip_eps,
            kl_beta: t.kl_beta,
            budget: t.refine.budget,
            n_max: t.refine.n_max,
            tau: t.refine.tau,
            accept_mode: t.refine.mode,
            freeze_actor: t.freeze_actor,
            divergence_limit: t.divergence_limit,
            entities: w.num_entities,
            relations: w.num_relations,
            hops: w.hop_count,
            top_k: w.top_k,
            distractor_rate: w.distractor_rate,
            world_seed: w.seed,
            eval_samples: 2000,
            eval_seed_offset: 1000,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat table of scalars serializes")
    }

    pub fn world(&self) -> WorldConfig {
        WorldConfig {
            num_entities: self.entities,
            num_relations: self.relations,
            hop_count: self.hops,
            top_k: self.top_k,
            distractor_rate: self.distractor_rate,
            seed: self.world_seed,
        }
    }

    /// Training configuration for one seed, with the variant's mechanisms
    /// applied.
    pub fn train(&self, seed: u64) -> TrainConfig {
        let mut t = TrainConfig {
            group_size: self.group_size,
            prompts_per_step: self.prompts_per_step,
            clip_eps: self.clip_eps,
            kl_beta: self.kl_beta,
            learning_rate: self.learning_rate,
            steps: self.steps,
            refine: RefineConfig {
                budget: self.budget,
                n_max: self.n_max,
                tau: self.tau,
                mode: self.accept_mode,
                trim_policy: TrimPolicy::Learned,
            },
            reward: RewardKind::Hybrid,
            freeze_actor: self.freeze_actor,
            seed,
            divergence_limit: self.divergence_limit,
        };
        self.variant.apply(&mut t, self.n_max);
        t
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.first_seed + i).collect()
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            name: format!("{}/{}", self.name, variant.name()),
            variant,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.world().validate()?;
        self.train(self.first_seed).validate()?;
        if self.seeds == 0 {
            return Err(HarnessError::Config("seeds must be positive".into()));
        }
        Ok(())
    }

    /// The settings a run actually used, after the variant is applied, as
    /// sorted `key = value` pairs. Seeds and names are left out so that
    /// headers of different variants can be compared key by key.
    pub fn effective(&self) -> Vec<(String, String)> {
        let t = self.train(self.first_seed);
        let w = self.world();
        let mut kv = vec![
            ("variant", self.variant.name().to_string()),
            ("reward", format!("{:?}", t.reward)),
            ("n_max", t.refine.n_max.to_string()),
            ("trim_policy", format!("{:?}", t.refine.trim_policy)),
            ("accept_mode", format!("{:?}", t.refine.mode)),
            ("tau", t.refine.tau.to_string()),
            ("budget", t.refine.budget.to_string()),
            ("steps", t.steps.to_string()),
            ("group_size", t.group_size.to_string()),
            ("prompts_per_step", t.prompts_per_step.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("clip_eps", t.clip_eps.to_string()),
            ("kl_beta", t.kl_beta.to_string()),
            ("freeze_actor", t.freeze_actor.to_string()),
            ("divergence_limit", t.divergence_limit.to_string()),
            ("entities", w.num_entities.to_string()),
            ("relations", w.num_relations.to_string()),
            ("hops", w.hop_count.to_string()),
            ("top_k", w.top_k.to_string()),
            ("distractor_rate", w.distractor_rate.to_string()),
            ("world_seed", w.seed.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("eval_seed_offset", self.eval_seed_offset.to_string()),
        ];
        kv.sort();
        kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// `# key = value` lines for the top of every emitted file.
    pub fn header(&self) -> String {
        self.effective().iter().map(|(k, v)| format!("# {k} = {v}\n")).collect()
    }
}

/// Keys whose values differ between two effective configurations, ignoring
/// the variant label itself.
pub fn mechanism_diff(a: &ExperimentConfig, b: &ExperimentConfig) -> Vec<String> {
    a.effective()
        .into_iter()
        .zip(b.effective())
        .filter(|((k, va), (_, vb))| k != "variant" && va != vb)
        .map(|((k, _), _)| k)
        .collect()
}

/// Parse the `# key = value` header of an emitted file.
pub fn parse_header(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map_while(|l| l.strip_prefix("# "))
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
