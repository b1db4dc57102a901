use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use arlab_core::refiner::AcceptMode;
use arlab_core::synthenv::{generate_world, WorldConfig};
use arlab_harness::config::ExperimentConfig;
use arlab_harness::verify::{verify_suite, VerifyConfig};
use arlab_harness::{ablate, revision_scan, run_experiment, write_file, Variant};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "arlab", version, about = "Actor-refiner search laboratory")]
struct Cli {
    /// Root directory for everything the command writes.
    #[arg(long, global = true, env = "ARLAB_OUT_DIR", default_value = "arlab-out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a world and write its text dump.
    GenWorld {
        #[command(flatten)]
        world: WorldArgs,
        /// Output file; defaults to `<out-dir>/world.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one seed and evaluate the final pipeline.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Training seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check the mixture and gain identities on enumerated worlds.
    Verify {
        #[arg(long, default_value_t = 100)]
        fixtures: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the machine-readable summary instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Train all four variants on paired seeds and compare them.
    Ablate {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Repeat an experiment for several maximum revision counts.
    ScanRevisions {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        n_max_values: Vec<usize>,
    },
    /// Re-run an experiment from its saved configuration and compare every
    /// emitted file byte for byte.
    Replay {
        /// Directory holding `config.toml` from an earlier run.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct WorldArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = WorldConfig::default().num_entities)]
    entities: usize,
    #[arg(long, default_value_t = WorldConfig::default().num_relations)]
    relations: usize,
    #[arg(long, default_value_t = WorldConfig::default().hop_count)]
    hops: usize,
    #[arg(long, default_value_t = WorldConfig::default().top_k)]
    top_k: usize,
    #[arg(long, default_value_t = WorldConfig::default().distractor_rate)]
    distractor_rate: f64,
}

/// Command-line overrides for every key of the experiment file.
#[derive(Args)]
struct ExperimentArgs {
    /// TOML file with any subset of the experiment keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    first_seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    prompts_per_step: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    clip_eps: Option<f64>,
    #[arg(long)]
    kl_beta: Option<f64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_parser = parse_accept_mode)]
    accept_mode: Option<AcceptMode>,
    #[arg(long)]
    freeze_actor: Option<bool>,
    #[arg(long)]
    divergence_limit: Option<f64>,
    #[arg(long)]
    entities: Option<usize>,
    #[arg(long)]
    relations: Option<usize>,
    #[arg(long)]
    hops: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    distractor_rate: Option<f64>,
    #[arg(long)]
    world_seed: Option<u64>,
    #[arg(long)]
    eval_samples: Option<usize>,
    #[arg(long)]
    eval_seed_offset: Option<u64>,
}

fn parse_accept_mode(s: &str) -> Result<AcceptMode, String> {
    match s {
        "bernoulli" => Ok(AcceptMode::Bernoulli),
        "threshold" => Ok(AcceptMode::Threshold),
        _ => Err(format!("expected `bernoulli` or `threshold`, got `{s}`")),
    }
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { c.$field = v; })*
            };
        }
        set!(
            name, variant, seeds, first_seed, steps, group_size, prompts_per_step, learning_rate, clip_eps,
            kl_beta, budget, n_max, tau, accept_mode, freeze_actor, divergence_limit, entities, relations, hops,
            top_k, distractor_rate, world_seed, eval_samples, eval_seed_offset
        );
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether every asserted invariant held.
fn run(cli: Cli) -> Result<bool> {
    let out = cli.out_dir;
    let started = Instant::now();
    let ok = match cli.command {
        Command::GenWorld { world, out: file } => {
            let cfg = WorldConfig {
                num_entities: world.entities,
                num_relations: world.relations,
                hop_count: world.hops,
                top_k: world.top_k,
                distractor_rate: world.distractor_rate,
                seed: world.seed,
            };
            let (w, qs) = generate_world(&cfg)?;
            let path = file.unwrap_or_else(|| out.join("world.txt"));
            write_file(&path, &w.to_text())?;
            println!("{} facts, {} questions -> {}", w.facts().len(), qs.len(), path.display());
            true
        }
        Command::Train { exp, seed } => {
            let mut cfg = exp.resolve()?;
            cfg.seeds = 1;
            cfg.first_seed = seed;
            let dir = out.join(&cfg.name);
            let r = run_experiment(&cfg, Some(&dir))?;
            println!("{}", r.line());
            println!("outputs in {}", dir.display());
            r.failures() == 0
        }
        Command::Verify { fixtures, seed, json } => {
            let cfg = VerifyConfig {
                fixtures,
                seed,
                ..VerifyConfig::default()
            };
            let s = verify_suite(&cfg)?;
            let text = s.to_text(&cfg.tolerances);
            let record = serde_json::to_string_pretty(&s)?;
            write_file(&out.join("verify.txt"), &text)?;
            write_file(&out.join("verify.json"), &record)?;
            println!("{}", if json { record } else { text });
            s.passed()
        }
        Command::Ablate { exp } => {
            let cfg = exp.resolve()?;
            let dir = out.join(&cfg.name);
            let r = ablate(&cfg, Some(&dir))?;
            println!("{}", r.to_text());
            if !r.ladder_coherent() {
                eprintln!("ablation ladder is not one mechanism per step");
            }
            r.ladder_coherent() && r.failures() == 0
        }
        Command::ScanRevisions { exp, n_max_values } => {
            let cfg = exp.resolve()?;
            let dir = out.join(&cfg.name).join("scan");
            let r = revision_scan(&cfg, &n_max_values, Some(&dir))?;
            println!("{}", r.to_text());
            r.rows.iter().all(|row| row.seeds_failed == 0)
        }
        Command::Replay { dir } => replay(&dir)?,
    };
    eprintln!("wall time {:.1}s", started.elapsed().as_secs_f64());
    Ok(ok)
}

fn replay(dir: &Path) -> Result<bool> {
    let cfg = ExperimentConfig::load(&dir.join("config.toml"))?;
    let r = run_experiment(&cfg, None)?;
    let mut mismatched = Vec::new();
    for (name, contents) in r.files()? {
        let path = dir.join(&name);
        let on_disk = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        if on_disk != contents {
            mismatched.push(name);
        }
    }
    if mismatched.is_empty() {
        println!("replay of {} reproduced every file", dir.display());
    } else {
        println!("replay differs in: {}", mismatched.join(", "));
    }
    Ok(mismatched.is_empty())
}
