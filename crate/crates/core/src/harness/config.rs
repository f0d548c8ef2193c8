//! Run configuration: one versioned JSON document that fixes every seed,
//! size and switch of a run.

use crate::agent::{AgentConfig, RefinerConfig, Schedule, SupervisedConfig};
use crate::env::{EnvConfig, StrideMode};
use crate::lexicon::Lexicon;
use crate::scene::{EncoderConfig, GenConfig, TemplateWeights};
use crate::task::{QueryEncoding, Task, TaskError};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config schema version {found} is not supported (expected {SCHEMA_VERSION})")]
    Version { found: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("bad override `{0}`: expected key.path=value")]
    Override(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub scene: u64,
    pub embedding: u64,
    pub projection: u64,
    pub net: u64,
    pub rng: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            scene: 11,
            embedding: 5,
            projection: 3,
            net: 1,
            rng: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Stride is alpha times the full image extent instead of the current patch.
    pub fixed_stride: bool,
    /// Only the finest scale level.
    pub no_multiscale: bool,
    /// Spatial segment of the state zeroed.
    pub no_spatial: bool,
    /// Mean token embedding instead of triad embeddings.
    pub no_triad: bool,
    /// Report the episode's final box without refinement.
    pub no_refinement: bool,
    /// Train the actor with the supervised side rule instead of actor-critic.
    pub supervised: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSettings {
    pub alpha: f64,
    pub t_max: usize,
    pub min_side_fraction: f64,
    pub terminal_bonus: bool,
}

impl Default for EnvSettings {
    fn default() -> Self {
        let e = EnvConfig::default();
        Self {
            alpha: e.alpha,
            t_max: e.t_max,
            min_side_fraction: e.min_side_fraction,
            terminal_bonus: e.terminal_bonus,
        }
    }
}

/// One curriculum stage: generator overrides and an episode count.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage {
    pub episodes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_objects: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_objects: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_side: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_side: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<TemplateWeights>,
}

impl Stage {
    pub fn apply(&self, base: &GenConfig) -> GenConfig {
        let mut g = base.clone();
        if let Some(v) = self.min_objects {
            g.min_objects = v;
        }
        if let Some(v) = self.max_objects {
            g.max_objects = v;
        }
        if let Some(v) = self.min_side {
            g.min_side = v;
        }
        if let Some(v) = self.max_side {
            g.max_side = v;
        }
        if let Some(t) = &self.templates {
            g.templates = t.clone();
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seeds: Seeds,
    pub lexicon: Lexicon,
    /// Scene distribution evaluated on; curriculum stages override parts of it.
    pub generator: GenConfig,
    pub encoder: EncoderConfig,
    /// Triads kept per query (M).
    pub slots: usize,
    /// Word embedding width (D_w).
    pub word_dim: usize,
    pub env: EnvSettings,
    pub agent: AgentConfig,
    pub ablations: Ablations,
    /// Training stages in order; their episode counts make up the budget.
    pub curriculum: Vec<Stage>,
    pub log_every: usize,
    pub probe_size: usize,
    pub eval_size: usize,
    pub refiner: RefinerConfig,
    pub supervised: SupervisedConfig,
}

/// Two to four large objects of four categories in three colors, queried
/// by attribute or by one relation.
fn default_generator() -> GenConfig {
    let mut g = GenConfig {
        min_objects: 2,
        max_objects: 4,
        min_side: 30.0,
        max_side: 50.0,
        big_area: 1600.0,
        templates: TemplateWeights {
            bare: 0.0,
            attribute: 1.0,
            location: 0.0,
            relation: 1.0,
            conjunction: 0.0,
        },
        ..Default::default()
    };
    g.categories.truncate(4);
    g.colors.truncate(3);
    g
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seeds: Seeds::default(),
            lexicon: Lexicon::default(),
            generator: default_generator(),
            encoder: EncoderConfig {
                visual_dim: 256,
                shared_projection: true,
                ..Default::default()
            },
            slots: 2,
            word_dim: 32,
            env: EnvSettings {
                terminal_bonus: true,
                ..Default::default()
            },
            agent: AgentConfig::default(),
            ablations: Ablations::default(),
            curriculum: vec![
                Stage {
                    episodes: 15_000,
                    min_objects: Some(2),
                    max_objects: Some(2),
                    min_side: Some(40.0),
                    max_side: Some(55.0),
                    templates: Some(TemplateWeights {
                        bare: 0.0,
                        attribute: 1.0,
                        location: 0.0,
                        relation: 0.0,
                        conjunction: 0.0,
                    }),
                },
                Stage {
                    episodes: 20_000,
                    ..Default::default()
                },
            ],
            log_every: 1000,
            probe_size: 100,
            eval_size: 500,
            refiner: RefinerConfig::default(),
            supervised: SupervisedConfig::default(),
        }
    }
}

fn check(ok: bool, msg: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid(msg.to_string()))
    }
}

impl RunConfig {
    /// Parse a config document, checking the schema version first.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Self::from_value(serde_json::from_str(text)?)
    }

    pub fn from_value(v: Value) -> Result<Self, ConfigError> {
        if let Some(found) = v.get("schema_version").and_then(Value::as_u64) {
            if found != SCHEMA_VERSION as u64 {
                return Err(ConfigError::Version { found: found as u32 });
            }
        }
        let cfg: RunConfig = serde_json::from_value(v)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Canonical pretty JSON, as written to run directories.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(compact.as_bytes()))
    }

    /// Hash of everything that fixes the meaning of states and checkpoints:
    /// vocabulary, encoder, embedding and projection seeds, state layout.
    pub fn vocab_hash(&self) -> String {
        let v = serde_json::json!({
            "lexicon": self.lexicon,
            "encoder": self.encoder,
            "projection": self.seeds.projection,
            "embedding": self.seeds.embedding,
            "slots": self.slots,
            "word_dim": self.word_dim,
            "frame": [self.generator.frame_width, self.generator.frame_height],
        });
        hex(&Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Version {
                found: self.schema_version,
            });
        }
        self.generator.validate(&self.lexicon).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for s in &self.curriculum {
            s.apply(&self.generator)
                .validate(&self.lexicon)
                .map_err(|e| ConfigError::Invalid(format!("curriculum stage: {e}")))?;
        }
        let a = &self.agent;
        check(a.gamma > 0.0 && a.gamma <= 1.0, "gamma must be in (0, 1]")?;
        check(a.actor_lr >= 0.0 && a.critic_lr >= 0.0, "learning rates must be non-negative")?;
        check(a.entropy_coef >= 0.0, "entropy_coef must be non-negative")?;
        check(!a.hidden.is_empty() && a.hidden.iter().all(|h| *h > 0), "hidden sizes must be positive")?;
        check(a.value_bound > 0.0, "value_bound must be positive")?;
        check(self.env.alpha > 0.0 && self.env.alpha < 1.0, "alpha must be in (0, 1)")?;
        check(self.env.t_max > 0, "t_max must be positive")?;
        check(
            self.env.min_side_fraction >= 0.0 && self.env.min_side_fraction < 1.0,
            "min_side_fraction must be in [0, 1)",
        )?;
        check(self.slots > 0, "slots must be positive")?;
        check(self.word_dim > 0, "word_dim must be positive")?;
        let e = &self.encoder;
        check(
            !e.grid_sizes.is_empty() && e.grid_sizes.iter().all(|g| *g > 0),
            "grid sizes must be positive",
        )?;
        check(e.object_dim > 0 && e.visual_dim > 0, "encoder widths must be positive")?;
        check(self.eval_size > 0, "eval_size must be positive")?;
        let r = &self.refiner;
        check(r.sigma >= 0.0 && r.batch > 0 && r.offset_unit > 0.0, "refiner settings out of range")?;
        check(r.scale < e.grid_sizes.len(), "refiner scale not configured")?;
        let s = &self.supervised;
        check(s.regions_per_episode > 0 && s.threshold >= 0.0, "supervised settings out of range")?;
        Ok(())
    }

    pub fn episode_budget(&self) -> usize {
        self.curriculum.iter().map(|s| s.episodes).sum()
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            alpha: self.env.alpha,
            t_max: self.env.t_max,
            min_side_fraction: self.env.min_side_fraction,
            terminal_bonus: self.env.terminal_bonus,
            stride: if self.ablations.fixed_stride {
                StrideMode::Fixed
            } else {
                StrideMode::Adaptive
            },
            no_spatial: self.ablations.no_spatial,
            no_multiscale: self.ablations.no_multiscale,
        }
    }

    pub fn query_encoding(&self) -> QueryEncoding {
        if self.ablations.no_triad {
            QueryEncoding::BagOfTokens
        } else {
            QueryEncoding::Triads
        }
    }

    /// Task over the evaluation distribution.
    pub fn task(&self) -> Result<Task, ConfigError> {
        self.task_with(self.generator.clone())
    }

    /// Task over one curriculum stage.
    pub fn stage_task(&self, stage: &Stage) -> Result<Task, ConfigError> {
        self.task_with(stage.apply(&self.generator))
    }

    fn task_with(&self, gen: GenConfig) -> Result<Task, ConfigError> {
        Ok(Task::new(
            self.lexicon.clone(),
            gen,
            self.encoder.clone(),
            self.seeds.projection,
            self.word_dim,
            self.seeds.embedding,
            self.env_config(),
            self.slots,
            self.query_encoding(),
            self.seeds.scene,
        )?)
    }

    pub fn schedule(&self, stage_index: usize) -> Schedule {
        Schedule {
            episodes: self.curriculum[stage_index].episodes,
            log_every: self.log_every,
            probe_size: self.probe_size,
            seed: crate::task::derive_seed(self.seeds.rng, 60, stage_index as u64),
        }
    }

    /// Apply `key.path=value` overrides. Values parse as JSON when they can,
    /// otherwise they are taken as strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut v = serde_json::to_value(self)?;
        for o in overrides {
            let (path, raw) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut v, path, value)?;
        }
        Self::from_value(v)
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), ConfigError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if !map.contains_key(*p) {
                    return Err(ConfigError::UnknownKey(path.to_string()));
                }
                let slot = map.get_mut(*p).expect("checked above");
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Array(items) => {
                let idx: usize = p.parse().map_err(|_| ConfigError::UnknownKey(path.to_string()))?;
                let slot = items.get_mut(idx).ok_or_else(|| ConfigError::UnknownKey(path.to_string()))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(ConfigError::UnknownKey(path.to_string())),
        };
    }
    Err(ConfigError::Override(path.to_string()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.hash(), back.hash());
    }

    #[test]
    fn overrides_apply_and_change_hash() {
        let c = RunConfig::default();
        let d = c
            .with_overrides(&["agent.gamma=0.5".into(), "seeds.scene=99".into(), "curriculum.0.episodes=7".into()])
            .unwrap();
        assert_eq!(d.agent.gamma, 0.5);
        assert_eq!(d.seeds.scene, 99);
        assert_eq!(d.curriculum[0].episodes, 7);
        assert_ne!(c.hash(), d.hash());
        assert_eq!(c.vocab_hash(), d.vocab_hash());
    }

    #[test]
    fn rejects_bad_values() {
        let c = RunConfig::default();
        assert!(matches!(c.with_overrides(&["agent.gamma=1.5".into()]), Err(ConfigError::Invalid(_))));
        assert!(matches!(c.with_overrides(&["agent.nope=1".into()]), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.with_overrides(&["gamma".into()]), Err(ConfigError::Override(_))));
        let mut v = serde_json::to_value(&c).unwrap();
        v["schema_version"] = 2.into();
        assert!(matches!(RunConfig::from_value(v), Err(ConfigError::Version { found: 2 })));
    }

    #[test]
    fn ablations_reach_the_task() {
        let mut c = RunConfig::default();
        c.ablations.no_multiscale = true;
        c.ablations.no_triad = true;
        c.ablations.fixed_stride = true;
        let t = c.task().unwrap();
        assert_eq!(t.num_scales(), 1);
        assert_eq!(t.query_encoding, QueryEncoding::BagOfTokens);
        assert_eq!(t.env.stride, StrideMode::Fixed);
    }
}
