//! Fixed components shared by training and evaluation: generator settings,
//! the scene encoder, word embeddings and environment settings.

use crate::env::{EnvConfig, EnvError, ShrinkEnv, StateBuilder};
use crate::lexicon::Lexicon;
use crate::query::{bag_of_tokens, embed, parse, EmbeddingTable, LinguisticFeature, QueryError, Triad};
use crate::scene::{generate_scene, EncoderConfig, GenConfig, GroundedQuery, PatchEncoder, Scene, SceneError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// How the query becomes the linguistic segment of the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryEncoding {
    Triads,
    BagOfTokens,
}

/// Disjoint seed streams for training and held-out scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
    /// Small held-out set probed during training.
    Probe,
}

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of item `index` in stream `stream` derived from `base`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(base ^ mix64(stream)).wrapping_add(index))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scene: Scene,
    pub query: GroundedQuery,
}

/// A sample with its parsed triads and linguistic feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub sample: Sample,
    pub triads: Vec<Triad>,
    pub linguistic: LinguisticFeature,
}

#[derive(Debug, Clone)]
pub struct Task {
    pub lexicon: Lexicon,
    pub gen: GenConfig,
    pub encoder: PatchEncoder,
    pub table: EmbeddingTable,
    pub env: EnvConfig,
    pub slots: usize,
    pub query_encoding: QueryEncoding,
    pub scene_seed: u64,
}

impl Task {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lexicon: Lexicon,
        gen: GenConfig,
        encoder_cfg: EncoderConfig,
        projection_seed: u64,
        word_dim: usize,
        embedding_seed: u64,
        env: EnvConfig,
        slots: usize,
        query_encoding: QueryEncoding,
        scene_seed: u64,
    ) -> Result<Self, TaskError> {
        gen.validate(&lexicon)?;
        if slots == 0 {
            return Err(QueryError::ZeroSlots.into());
        }
        let encoder = PatchEncoder::new(encoder_cfg, &lexicon, projection_seed);
        let table = EmbeddingTable::seeded(lexicon.all_tokens(), word_dim, embedding_seed);
        Ok(Self {
            lexicon,
            gen,
            encoder,
            table,
            env,
            slots,
            query_encoding,
            scene_seed,
        })
    }

    pub fn scene_seed_for(&self, split: Split, index: u64) -> u64 {
        let stream = match split {
            Split::Train => 1,
            Split::Eval => 2,
            Split::Probe => 3,
        };
        derive_seed(self.scene_seed, stream, index)
    }

    pub fn sample(&self, split: Split, index: u64) -> Result<Sample, TaskError> {
        let (scene, query) = generate_scene(self.scene_seed_for(split, index), &self.gen, &self.lexicon)?;
        Ok(Sample { scene, query })
    }

    pub fn linguistic(&self, query: &GroundedQuery, triads: &[Triad]) -> Result<LinguisticFeature, TaskError> {
        Ok(match self.query_encoding {
            QueryEncoding::Triads => embed(triads, &self.table, self.slots)?,
            QueryEncoding::BagOfTokens => bag_of_tokens(&query.tokens(), &self.table, self.slots)?,
        })
    }

    pub fn prepare(&self, sample: Sample) -> Result<Prepared, TaskError> {
        let triads = parse(&sample.query.tokens(), &self.lexicon)?;
        let linguistic = self.linguistic(&sample.query, &triads)?;
        Ok(Prepared {
            sample,
            triads,
            linguistic,
        })
    }

    pub fn builder<'a>(&'a self, linguistic: &'a LinguisticFeature) -> StateBuilder<'a> {
        StateBuilder {
            encoder: &self.encoder,
            linguistic,
            cfg: &self.env,
        }
    }

    pub fn env<'a>(&'a self, prepared: &'a Prepared) -> Result<ShrinkEnv<'a>, TaskError> {
        Ok(ShrinkEnv::reset(
            self.builder(&prepared.linguistic),
            &prepared.sample.scene,
            &prepared.sample.query,
            &prepared.triads,
        )?)
    }

    /// Length of one sub-state vector.
    pub fn state_dim(&self) -> usize {
        self.slots * 3 * self.table.dim() + self.encoder.visual_dim() + 5
    }

    pub fn num_scales(&self) -> usize {
        if self.env.no_multiscale {
            1
        } else {
            self.encoder.scales()
        }
    }
}
