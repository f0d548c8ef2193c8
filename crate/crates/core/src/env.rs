//! The shrinking episode: state assembly, actions, reward, termination and
//! the reasoning trace.

use crate::geometry::{iou, shrink, shrink_by, spatial_feature, BBox, GeometryError, ImageFrame, Side};
use crate::lexicon::UKN;
use crate::query::{LinguisticFeature, Triad};
use crate::scene::{GroundedQuery, PatchEncoder, Scene, SceneError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode already finished")]
    Terminal,
    #[error("target object {0} not in scene")]
    MissingTarget(u32),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// The five actions, in network output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    ShrinkTop,
    ShrinkBottom,
    ShrinkLeft,
    ShrinkRight,
    Stop,
}

pub const NUM_ACTIONS: usize = 5;

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::ShrinkTop,
        Action::ShrinkBottom,
        Action::ShrinkLeft,
        Action::ShrinkRight,
        Action::Stop,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn side(self) -> Option<Side> {
        match self {
            Action::ShrinkTop => Some(Side::Top),
            Action::ShrinkBottom => Some(Side::Bottom),
            Action::ShrinkLeft => Some(Side::Left),
            Action::ShrinkRight => Some(Side::Right),
            Action::Stop => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrideMode {
    /// `alpha` times the current patch extent.
    Adaptive,
    /// `alpha` times the full image extent, every step.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub alpha: f64,
    pub t_max: usize,
    /// A shrink that would leave a side shorter than this fraction of the
    /// image extent is refused and ends the episode.
    pub min_side_fraction: f64,
    /// Reward 10 for stopping with IoU >= 0.5 instead of the literal 0.
    pub terminal_bonus: bool,
    pub stride: StrideMode,
    /// Zero the spatial segment of every sub-state.
    pub no_spatial: bool,
    /// Only the finest scale level contributes a sub-state.
    pub no_multiscale: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            t_max: 20,
            min_side_fraction: 0.02,
            terminal_bonus: false,
            stride: StrideMode::Adaptive,
            no_spatial: false,
            no_multiscale: false,
        }
    }
}

/// Reward for a step ending at `iou` with IoU change `delta`.
pub fn reward(iou: f64, delta: f64) -> f64 {
    if iou < 0.3 || delta <= 0.0 {
        0.0
    } else if iou < 0.5 {
        1.0
    } else {
        10.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    /// One vector per scale level: linguistic ⊕ visual ⊕ spatial.
    pub sub_states: Vec<Vec<f64>>,
    pub patch: BBox,
    pub step_index: usize,
}

impl AgentState {
    pub fn dim(&self) -> usize {
        self.sub_states[0].len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: AgentState,
    pub reward: f64,
    pub done: bool,
    pub iou_after: f64,
    pub delta_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub action: Action,
    /// Patch after the action.
    pub patch: BBox,
    pub reward: f64,
    pub iou: f64,
    pub active: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub query: String,
    pub scene_seed: u64,
    pub target_id: u32,
    pub gt_box: BBox,
    pub triads: Vec<Triad>,
    pub initial_patch: BBox,
    pub initial_active: Vec<bool>,
    pub steps: Vec<TraceStep>,
    pub final_box: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_box: Option<BBox>,
}

impl EpisodeTrace {
    pub fn active_flags(&self) -> &[bool] {
        self.steps.last().map(|s| s.active.as_slice()).unwrap_or(&self.initial_active)
    }
}

/// Whether each triad still has support inside `patch`: some non-target
/// object matching its reference unit overlaps the patch. `UKN` matches any
/// object. Flags in `prev` that are already off stay off.
pub fn triad_activity(scene: &Scene, target_id: u32, patch: &BBox, triads: &[Triad], prev: Option<&[bool]>) -> Vec<bool> {
    triads
        .iter()
        .enumerate()
        .map(|(k, t)| {
            if prev.is_some_and(|p| !p[k]) {
                return false;
            }
            let reference = &t.reference;
            scene
                .objects
                .iter()
                .any(|o| o.id != target_id && (reference == UKN || o.category == *reference) && o.bbox.overlaps(patch))
        })
        .collect()
}

/// Builds sub-states for a fixed scene and query.
#[derive(Debug, Clone)]
pub struct StateBuilder<'a> {
    pub encoder: &'a PatchEncoder,
    pub linguistic: &'a LinguisticFeature,
    pub cfg: &'a EnvConfig,
}

impl StateBuilder<'_> {
    pub fn sub_state_dim(&self) -> usize {
        self.linguistic.len() + self.encoder.visual_dim() + 5
    }

    pub fn num_scales(&self) -> usize {
        if self.cfg.no_multiscale {
            1
        } else {
            self.encoder.scales()
        }
    }

    pub fn build(&self, scene: &Scene, patch: &BBox, step_index: usize) -> Result<AgentState, EnvError> {
        let spatial = spatial_feature(patch, &scene.frame)?;
        let mut sub_states = Vec::with_capacity(self.num_scales());
        for c in 0..self.num_scales() {
            let mut s = Vec::with_capacity(self.sub_state_dim());
            s.extend_from_slice(self.linguistic.as_slice());
            s.extend(self.encoder.encode(scene, patch, c)?);
            if self.cfg.no_spatial {
                s.extend([0.0; 5]);
            } else {
                s.extend_from_slice(spatial.as_slice());
            }
            sub_states.push(s);
        }
        Ok(AgentState {
            sub_states,
            patch: *patch,
            step_index,
        })
    }
}

/// One episode on one (scene, query) pair.
#[derive(Debug, Clone)]
pub struct ShrinkEnv<'a> {
    builder: StateBuilder<'a>,
    scene: &'a Scene,
    gt: BBox,
    state: AgentState,
    prev_iou: f64,
    done: bool,
    trace: EpisodeTrace,
}

impl<'a> ShrinkEnv<'a> {
    /// Start an episode on the whole image.
    pub fn reset(
        builder: StateBuilder<'a>,
        scene: &'a Scene,
        query: &GroundedQuery,
        triads: &[Triad],
    ) -> Result<Self, EnvError> {
        let target = scene.object(query.target_id).ok_or(EnvError::MissingTarget(query.target_id))?;
        let gt = target.bbox;
        let patch = scene.frame.full_box();
        let state = builder.build(scene, &patch, 0)?;
        let initial_active = triad_activity(scene, query.target_id, &patch, triads, None);
        let trace = EpisodeTrace {
            query: query.text.clone(),
            scene_seed: scene.seed,
            target_id: query.target_id,
            gt_box: gt,
            triads: triads.to_vec(),
            initial_patch: patch,
            initial_active,
            steps: Vec::new(),
            final_box: patch,
            refined_box: None,
        };
        Ok(Self {
            builder,
            scene,
            gt,
            prev_iou: iou(&patch, &gt),
            state,
            done: false,
            trace,
        })
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    pub fn patch(&self) -> BBox {
        self.state.patch
    }

    pub fn gt_box(&self) -> BBox {
        self.gt
    }

    pub fn scene(&self) -> &Scene {
        self.scene
    }

    pub fn frame(&self) -> ImageFrame {
        self.scene.frame
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn current_iou(&self) -> f64 {
        self.prev_iou
    }

    pub fn trace(&self) -> &EpisodeTrace {
        &self.trace
    }

    pub fn into_trace(self) -> EpisodeTrace {
        self.trace
    }

    pub fn config(&self) -> &EnvConfig {
        self.builder.cfg
    }

    /// Patch a direction action would produce, or `None` if the min-side
    /// guard refuses it (and for `Stop`).
    pub fn preview(&self, action: Action) -> Option<BBox> {
        let side = action.side()?;
        let cfg = self.builder.cfg;
        let p = &self.state.patch;
        let frame = &self.scene.frame;
        let next = match cfg.stride {
            StrideMode::Adaptive => shrink(p, side, cfg.alpha).ok()?,
            StrideMode::Fixed => {
                let full = match side {
                    Side::Top | Side::Bottom => frame.height(),
                    Side::Left | Side::Right => frame.width(),
                };
                shrink_by(p, side, cfg.alpha * full).ok()?
            }
        };
        let min_w = cfg.min_side_fraction * frame.width();
        let min_h = cfg.min_side_fraction * frame.height();
        (next.width() >= min_w && next.height() >= min_h).then_some(next)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::Terminal);
        }
        let cfg = self.builder.cfg;
        let step_index = self.state.step_index + 1;
        let (patch, mut done, stopped) = match action {
            Action::Stop => (self.state.patch, true, true),
            _ => match self.preview(action) {
                Some(next) => (next, step_index >= cfg.t_max, false),
                None => (self.state.patch, true, false),
            },
        };
        let iou_after = iou(&patch, &self.gt);
        let delta_iou = iou_after - self.prev_iou;
        let mut r = reward(iou_after, delta_iou);
        if stopped && cfg.terminal_bonus {
            r = if iou_after >= 0.5 { 10.0 } else { 0.0 };
        }
        if step_index >= cfg.t_max {
            done = true;
        }
        let next_state = if patch == self.state.patch {
            AgentState {
                step_index,
                ..self.state.clone()
            }
        } else {
            self.builder.build(self.scene, &patch, step_index)?
        };

        let prev_flags = self.trace.active_flags().to_vec();
        let active = triad_activity(self.scene, self.trace.target_id, &patch, &self.trace.triads, Some(&prev_flags));
        self.trace.steps.push(TraceStep {
            action,
            patch,
            reward: r,
            iou: iou_after,
            active,
        });
        self.trace.final_box = patch;

        self.state = next_state.clone();
        self.prev_iou = iou_after;
        self.done = done;
        Ok(StepOutcome {
            next_state,
            reward: r,
            done,
            iou_after,
            delta_iou,
        })
    }
}
