//! Training, evaluation, checkpoints and the ablation matrix.

use super::config::{Ablations, ConfigError, RunConfig};
use crate::agent::{
    train_refiner, train_rl, train_supervised, ActorCritic, AgentError, GreedyActor, MetricsRecord, Refiner,
};
use crate::eval::{evaluate, run_episode, EpisodeResult, EvalReport};
use crate::nets::{read_checkpoint, write_checkpoint, CheckpointHeader, Mlp, NetError};
use crate::query::EmbeddingTable;
use crate::task::{derive_seed, Prepared, Split, Task, TaskError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Dataset(#[from] super::dataset::DatasetError),
    #[error("checkpoint `{path}` was written for a different vocabulary or encoder (hash {found}, config {expected})")]
    HashMismatch { path: String, found: String, expected: String },
    #[error("checkpoint `{0}` is missing")]
    MissingCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// True for errors caused by inputs that fail validation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::Dataset(_)
                | HarnessError::HashMismatch { .. }
                | HarnessError::MissingCheckpoint(_)
        )
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricsLine {
    Rl(MetricsRecord),
    Supervised { episode: usize, loss: f64 },
}

/// Everything a run produces that evaluation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub actor: Mlp,
    pub critic: Option<Mlp>,
    pub refiner: Option<Refiner>,
    pub metrics: Vec<MetricsLine>,
}

/// Train the policy the config asks for, then the refiner unless disabled.
pub fn train(cfg: &RunConfig, mut on_line: impl FnMut(&MetricsLine)) -> Result<Model, HarnessError> {
    let eval_task = cfg.task()?;
    let mut ac = ActorCritic::new(eval_task.state_dim(), eval_task.num_scales(), &cfg.agent, cfg.seeds.net)?;
    let mut metrics = Vec::new();
    let mut offset = 0;
    for (i, stage) in cfg.curriculum.iter().enumerate() {
        let task = cfg.stage_task(stage)?;
        let schedule = cfg.schedule(i);
        if cfg.ablations.supervised {
            let losses = train_supervised(&task, &mut ac.actor, &cfg.supervised, stage.episodes, schedule.seed)?;
            let every = cfg.log_every.max(1);
            for (k, chunk) in losses.chunks(every).enumerate() {
                let line = MetricsLine::Supervised {
                    episode: offset + k * every + chunk.len(),
                    loss: chunk.iter().sum::<f64>() / chunk.len() as f64,
                };
                on_line(&line);
                metrics.push(line);
            }
        } else {
            train_rl(&mut ac, &task, &schedule, |r| {
                let line = MetricsLine::Rl(MetricsRecord {
                    episode: r.episode + offset,
                    ..r.clone()
                });
                on_line(&line);
                metrics.push(line);
            })?;
        }
        offset += stage.episodes;
    }
    let refiner = if cfg.ablations.no_refinement {
        None
    } else {
        Some(train_refiner(&eval_task, &cfg.refiner)?.0)
    };
    Ok(Model {
        critic: (!cfg.ablations.supervised).then(|| ac.critic.clone()),
        actor: ac.actor,
        refiner,
        metrics,
    })
}

/// The first `eval_size` held-out samples.
pub fn eval_set(cfg: &RunConfig, task: &Task) -> Result<Vec<Prepared>, HarnessError> {
    (0..cfg.eval_size as u64)
        .map(|i| Ok(task.prepare(task.sample(Split::Eval, i)?)?))
        .collect()
}

pub fn eval_seed(cfg: &RunConfig) -> u64 {
    derive_seed(cfg.seeds.rng, 70, 0)
}

/// Greedy evaluation of a trained model, refining unless disabled.
pub fn evaluate_model(
    cfg: &RunConfig,
    task: &Task,
    model: &Model,
    samples: &[Prepared],
) -> Result<EvalReport, HarnessError> {
    let refiner = if cfg.ablations.no_refinement {
        None
    } else {
        model.refiner.as_ref()
    };
    Ok(evaluate(
        task,
        &GreedyActor(&model.actor),
        samples,
        refiner,
        eval_seed(cfg),
        &cfg.hash(),
    )?)
}

/// One greedy episode with its trace.
pub fn trace_episode(cfg: &RunConfig, task: &Task, model: &Model, sample: &Prepared) -> Result<EpisodeResult, HarnessError> {
    let refiner = if cfg.ablations.no_refinement {
        None
    } else {
        model.refiner.as_ref()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed(cfg));
    Ok(run_episode(task, sample, &GreedyActor(&model.actor), refiner, &mut rng)?)
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint(&self, kind: &str) -> PathBuf {
        self.checkpoints().join(format!("{kind}.ckpt"))
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn traces(&self) -> PathBuf {
        self.root.join("traces")
    }

    pub fn create(&self) -> std::io::Result<()> {
        fs::create_dir_all(self.checkpoints())?;
        fs::create_dir_all(self.traces())
    }

    pub fn write_config(&self, cfg: &RunConfig) -> std::io::Result<()> {
        fs::write(self.config(), cfg.to_json() + "\n")
    }

    pub fn write_metrics(&self, lines: &[MetricsLine]) -> Result<(), HarnessError> {
        let mut w = BufWriter::new(File::create(self.metrics())?);
        for l in lines {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_report(&self, report: &EvalReport) -> Result<(), HarnessError> {
        fs::write(self.report(), report_json(report) + "\n")?;
        Ok(())
    }
}

pub fn report_json(report: &EvalReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

fn header_for(net: &Mlp, kind: &str, cfg: &RunConfig) -> CheckpointHeader {
    let mut h = net.checkpoint_header(kind, cfg.seeds.net, &cfg.hash());
    h.extra = serde_json::json!({ "vocab_hash": cfg.vocab_hash() });
    h
}

fn write_file(path: &Path, header: &CheckpointHeader, params: &[f64]) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, header, params)?;
    w.flush()?;
    Ok(())
}

/// Write actor, critic, refiner and word-embedding checkpoints.
pub fn save_model(dir: &RunDir, cfg: &RunConfig, task: &Task, model: &Model) -> Result<(), HarnessError> {
    fs::create_dir_all(dir.checkpoints())?;
    write_file(&dir.checkpoint("actor"), &header_for(&model.actor, "actor", cfg), model.actor.params())?;
    if let Some(c) = &model.critic {
        write_file(&dir.checkpoint("critic"), &header_for(c, "critic", cfg), c.params())?;
    }
    if let Some(r) = &model.refiner {
        let mut h = header_for(&r.net, "refiner", cfg);
        h.extra["scale"] = r.scale.into();
        h.extra["offset_unit"] = r.offset_unit.into();
        write_file(&dir.checkpoint("refiner"), &h, r.net.params())?;
    }
    let (h, params) = embedding_checkpoint(&task.table, cfg);
    write_file(&dir.checkpoint("embeddings"), &h, &params)?;
    Ok(())
}

/// An embedding table as a checkpoint: rows in token order, tokens in the header.
pub fn embedding_checkpoint(table: &EmbeddingTable, cfg: &RunConfig) -> (CheckpointHeader, Vec<f64>) {
    let tokens: Vec<&String> = table.entries().keys().collect();
    let params = table.entries().values().flatten().copied().collect();
    let h = CheckpointHeader {
        kind: "embeddings".into(),
        layer_sizes: vec![tokens.len(), table.dim()],
        hidden: None,
        head: None,
        seed: table.seed(),
        config_hash: cfg.hash(),
        extra: serde_json::json!({ "vocab_hash": cfg.vocab_hash(), "tokens": tokens }),
    };
    (h, params)
}

pub fn embedding_from_checkpoint(h: &CheckpointHeader, params: &[f64]) -> Result<EmbeddingTable, HarnessError> {
    let bad = || NetError::Checkpoint("malformed embedding checkpoint".into());
    let tokens: Vec<String> = serde_json::from_value(h.extra["tokens"].clone()).map_err(|_| bad())?;
    let dim = *h.layer_sizes.get(1).ok_or_else(bad)?;
    if tokens.len() * dim != params.len() {
        return Err(bad().into());
    }
    let entries: BTreeMap<String, Vec<f64>> = tokens.into_iter().zip(params.chunks(dim).map(<[f64]>::to_vec)).collect();
    Ok(EmbeddingTable::from_entries(dim, h.seed, entries))
}

fn read_file(path: &Path, cfg: &RunConfig) -> Result<Option<(CheckpointHeader, Vec<f64>)>, HarnessError> {
    if !path.exists() {
        return Ok(None);
    }
    let (h, params) = read_checkpoint(BufReader::new(File::open(path)?))?;
    let found = h.extra["vocab_hash"].as_str().unwrap_or_default().to_string();
    let expected = cfg.vocab_hash();
    if found != expected {
        return Err(HarnessError::HashMismatch {
            path: path.display().to_string(),
            found,
            expected,
        });
    }
    Ok(Some((h, params)))
}

/// Load a model saved by [`save_model`], checking it matches `cfg`'s vocabulary.
pub fn load_model(dir: &RunDir, cfg: &RunConfig) -> Result<Model, HarnessError> {
    let actor_path = dir.checkpoint("actor");
    let (h, p) = read_file(&actor_path, cfg)?.ok_or_else(|| HarnessError::MissingCheckpoint(actor_path.display().to_string()))?;
    let actor = Mlp::from_checkpoint(&h, p)?;
    let critic = match read_file(&dir.checkpoint("critic"), cfg)? {
        Some((h, p)) => Some(Mlp::from_checkpoint(&h, p)?),
        None => None,
    };
    let refiner = match read_file(&dir.checkpoint("refiner"), cfg)? {
        Some((h, p)) => Some(Refiner {
            scale: h.extra["scale"].as_u64().unwrap_or(0) as usize,
            offset_unit: h.extra["offset_unit"].as_f64().unwrap_or(cfg.refiner.offset_unit),
            net: Mlp::from_checkpoint(&h, p)?,
        }),
        None => None,
    };
    Ok(Model {
        actor,
        critic,
        refiner,
        metrics: Vec::new(),
    })
}

/// A named switch setting of the ablation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub ablations: Ablations,
}

impl Variant {
    pub fn new(name: &str, f: impl FnOnce(&mut Ablations)) -> Self {
        let mut ablations = Ablations::default();
        f(&mut ablations);
        Self {
            name: name.to_string(),
            ablations,
        }
    }

    /// The default agent and each single switch.
    pub fn standard() -> Vec<Variant> {
        vec![
            Variant::new("default", |_| {}),
            Variant::new("fixed_stride", |a| a.fixed_stride = true),
            Variant::new("no_multiscale", |a| a.no_multiscale = true),
            Variant::new("no_spatial", |a| a.no_spatial = true),
            Variant::new("no_triad", |a| a.no_triad = true),
            Variant::new("no_refinement", |a| a.no_refinement = true),
            Variant::new("supervised", |a| a.supervised = true),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub ablations: Ablations,
    pub report: EvalReport,
}

/// Train and evaluate every variant on the shared eval set. Variants that
/// differ only in `no_refinement` share one trained policy, and all share
/// one refiner, since neither depends on the other switches.
pub fn run_ablation(
    base: &RunConfig,
    variants: &[Variant],
    mut progress: impl FnMut(&str),
) -> Result<Vec<AblationRow>, HarnessError> {
    let mut trained: Vec<(Ablations, Model)> = Vec::new();
    let mut refiner: Option<Refiner> = None;
    let mut rows = Vec::new();
    for v in variants {
        let mut cfg = base.clone();
        cfg.ablations = v.ablations.clone();
        cfg.validate()?;
        let task = cfg.task()?;
        let mut key = v.ablations.clone();
        key.no_refinement = false;
        let model = match trained.iter().find(|(k, _)| *k == key) {
            Some((_, m)) => m.clone(),
            None => {
                progress(&v.name);
                let mut train_cfg = cfg.clone();
                train_cfg.ablations = key.clone();
                train_cfg.ablations.no_refinement = true;
                let mut m = train(&train_cfg, |_| {})?;
                if refiner.is_none() {
                    refiner = Some(train_refiner(&cfg.task()?, &cfg.refiner)?.0);
                }
                m.refiner = refiner.clone();
                trained.push((key, m.clone()));
                m
            }
        };
        let samples = eval_set(&cfg, &task)?;
        let report = evaluate_model(&cfg, &task, &model, &samples)?;
        rows.push(AblationRow {
            name: v.name.clone(),
            ablations: v.ablations.clone(),
            report,
        });
    }
    Ok(rows)
}
