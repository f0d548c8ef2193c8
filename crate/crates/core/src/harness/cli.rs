//! Command-line entry points.

use super::config::{ConfigError, RunConfig};
use super::dataset::{generate, read_jsonl, write_jsonl};
use super::run::{
    eval_set, evaluate_model, load_model, report_json, run_ablation, save_model, trace_episode, train, HarnessError, RunDir,
    Variant,
};
use super::svg::render_frames;
use crate::agent::{check_gradients, refinement_gain, train_refiner, OracleGreedy, UniformRandom};
use crate::eval::evaluate;
use crate::query::parse_text;
use crate::task::{Prepared, Split, Task};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_ACCEPTANCE: i32 = 3;

/// Gradient checks fail above this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "shrinkground", version, about = "Referring-expression grounding by iterative image shrinking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Run config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set agent.gamma=0.7`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, fallback: Option<&Path>) -> Result<RunConfig, ConfigError> {
        let base = match (&self.config, fallback) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, Some(p)) if p.exists() => RunConfig::load(p)?,
            _ => RunConfig::default(),
        };
        base.with_overrides(&self.overrides)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Greedy,
    Random,
    Oracle,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write generated scenes and queries as JSON lines.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Scene seed (overrides `seeds.scene`).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1000)]
        count: u64,
        #[arg(long, value_enum, default_value_t = SplitArg::Eval)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy (and refiner) into a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Evaluate a trained run and write report.json.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        run_dir: PathBuf,
        /// Evaluate on this dataset instead of the generated eval split.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PolicyArg::Greedy)]
        policy: PolicyArg,
    },
    /// Record one greedy episode as JSON plus SVG frames.
    Trace {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory (or its checkpoints/ directory).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene_id: u64,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory; defaults to the run's traces/.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the triads of a query.
    ParseQuery {
        #[command(flatten)]
        cfg: ConfigArgs,
        query: String,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Train and evaluate the ablation matrix.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated variant names; all standard variants by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train only the box refiner and report its gain on noisy boxes.
    RefineTrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        run_dir: PathBuf,
    },
}

/// Parse `args` and run the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_USAGE
            }
        }
    }
}

fn load_data(path: &Path, cfg: &RunConfig, task: &Task) -> Result<Vec<Prepared>, HarnessError> {
    let recs = read_jsonl(BufReader::new(fs::File::open(path)?), &cfg.lexicon)?;
    recs.iter().map(|r| Ok(task.prepare(r.sample())?)).collect()
}

fn run_dir_of(checkpoint: &Path) -> RunDir {
    if checkpoint.file_name().is_some_and(|n| n == "checkpoints") {
        RunDir::new(checkpoint.parent().unwrap_or(Path::new(".")))
    } else {
        RunDir::new(checkpoint)
    }
}

fn execute(cmd: Command) -> Result<i32, HarnessError> {
    match cmd {
        Command::GenData {
            cfg,
            seed,
            count,
            split,
            out,
        } => {
            let mut c = cfg.load(None)?;
            if let Some(s) = seed {
                c.seeds.scene = s;
            }
            let task = c.task()?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Eval => Split::Eval,
            };
            let recs = generate(&task, split, count)?;
            write_jsonl(std::io::BufWriter::new(fs::File::create(&out)?), &recs)?;
            println!("wrote {} records to {}", recs.len(), out.display());
        }
        Command::Train { cfg, run_dir } => {
            let dir = RunDir::new(run_dir);
            let c = cfg.load(None)?;
            dir.create()?;
            dir.write_config(&c)?;
            let model = train(&c, |l| println!("{}", serde_json::to_string(l).expect("metrics serialize")))?;
            dir.write_metrics(&model.metrics)?;
            save_model(&dir, &c, &c.task()?, &model)?;
            println!("saved run to {}", dir.root.display());
        }
        Command::Eval {
            cfg,
            run_dir,
            data,
            policy,
        } => {
            let dir = RunDir::new(run_dir);
            let c = cfg.load(Some(&dir.config()))?;
            let task = c.task()?;
            let samples = match &data {
                Some(p) => load_data(p, &c, &task)?,
                None => eval_set(&c, &task)?,
            };
            let report = match policy {
                PolicyArg::Greedy => evaluate_model(&c, &task, &load_model(&dir, &c)?, &samples)?,
                PolicyArg::Random => evaluate(&task, &UniformRandom, &samples, None, super::run::eval_seed(&c), &c.hash())?,
                PolicyArg::Oracle => evaluate(&task, &OracleGreedy, &samples, None, super::run::eval_seed(&c), &c.hash())?,
            };
            fs::create_dir_all(&dir.root)?;
            dir.write_report(&report)?;
            println!("{}", report_json(&report));
        }
        Command::Trace {
            cfg,
            checkpoint,
            scene_id,
            data,
            out,
        } => {
            let dir = run_dir_of(&checkpoint);
            let c = cfg.load(Some(&dir.config()))?;
            let task = c.task()?;
            let sample = match &data {
                Some(p) => load_data(p, &c, &task)?
                    .into_iter()
                    .nth(scene_id as usize)
                    .ok_or_else(|| ConfigError::Invalid(format!("dataset has no scene {scene_id}")))?,
                None => task.prepare(task.sample(Split::Eval, scene_id)?)?,
            };
            let model = load_model(&dir, &c)?;
            let result = trace_episode(&c, &task, &model, &sample)?;
            let out = out.unwrap_or_else(|| dir.traces());
            fs::create_dir_all(&out)?;
            let stem = format!("scene_{scene_id}");
            fs::write(out.join(format!("{stem}.json")), serde_json::to_string_pretty(&result.trace)? + "\n")?;
            for (k, frame) in render_frames(&sample.sample.scene, &result.trace).iter().enumerate() {
                fs::write(out.join(format!("{stem}_{k:02}.svg")), frame)?;
            }
            println!(
                "{} steps, IoU {:.3}; frames in {}",
                result.steps,
                result.iou,
                out.display()
            );
        }
        Command::ParseQuery { cfg, query } => {
            let c = cfg.load(None)?;
            match parse_text(&query, &c.lexicon) {
                Ok(triads) => println!("{}", serde_json::to_string_pretty(&triads)?),
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(EXIT_VALIDATION);
                }
            }
        }
        Command::Gradcheck { seeds } => {
            let c = RunConfig::default();
            let dim = c.task()?.state_dim();
            let r = check_gradients(seeds, dim, 1e-5)?;
            println!(
                "seeds {}  actor max rel err {:.3e}  critic max rel err {:.3e}",
                r.seeds, r.actor_max, r.critic_max
            );
            if !(r.max() < GRADCHECK_TOLERANCE) {
                eprintln!("gradient check failed: {:.3e} >= {GRADCHECK_TOLERANCE:e}", r.max());
                return Ok(EXIT_ACCEPTANCE);
            }
        }
        Command::Ablate { cfg, variants, out } => {
            let c = cfg.load(None)?;
            let all = Variant::standard();
            let chosen: Vec<Variant> = if variants.is_empty() {
                all
            } else {
                variants
                    .iter()
                    .map(|n| {
                        all.iter()
                            .find(|v| &v.name == n)
                            .cloned()
                            .ok_or_else(|| ConfigError::Invalid(format!("unknown variant `{n}`")))
                    })
                    .collect::<Result<_, _>>()?
            };
            fs::create_dir_all(&out)?;
            fs::write(out.join("config.json"), c.to_json() + "\n")?;
            let rows = run_ablation(&c, &chosen, |n| eprintln!("training {n}"))?;
            fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
            println!("{:<16} {:>8} {:>9} {:>8} {:>8}", "variant", "acc@0.5", "mean IoU", "attr", "rel");
            for r in &rows {
                println!(
                    "{:<16} {:>8.3} {:>9.3} {:>8.3} {:>8.3}",
                    r.name, r.report.acc_at_05, r.report.mean_iou, r.report.attribute_only.acc_at_05, r.report.relation.acc_at_05
                );
            }
        }
        Command::RefineTrain { cfg, run_dir } => {
            let dir = RunDir::new(run_dir);
            let c = cfg.load(None)?;
            dir.create()?;
            dir.write_config(&c)?;
            let task = c.task()?;
            let (refiner, losses) = train_refiner(&task, &c.refiner)?;
            let mut h = refiner.net.checkpoint_header("refiner", c.refiner.seed, &c.hash());
            h.extra = serde_json::json!({
                "vocab_hash": c.vocab_hash(),
                "scale": refiner.scale,
                "offset_unit": refiner.offset_unit,
            });
            let mut w = std::io::BufWriter::new(fs::File::create(dir.checkpoint("refiner"))?);
            crate::nets::write_checkpoint(&mut w, &h, refiner.net.params())?;
            let (before, after) = refinement_gain(&task, &refiner, c.refiner.sigma, 200, c.seeds.rng)?;
            println!(
                "final loss {:.4}  mean IoU noisy {:.3} -> refined {:.3}",
                losses.last().copied().unwrap_or(f64::NAN),
                before,
                after
            );
        }
    }
    Ok(EXIT_OK)
}
