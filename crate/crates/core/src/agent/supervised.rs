//! Supervised baseline: imitate the "shrink the side furthest from the
//! target" rule on regions that cover the target.

use super::{accumulate_log_prob_grad, policy, AgentError};
use crate::env::Action;
use crate::geometry::{BBox, ImageFrame};
use crate::nets::{Adam, Mlp};
use crate::task::{derive_seed, Split, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisedConfig {
    pub regions_per_episode: usize,
    /// Minimum side difference, as a fraction of the frame extent, to not stop.
    pub threshold: f64,
    pub lr: f64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            regions_per_episode: 10,
            threshold: 0.05,
            lr: 1e-3,
        }
    }
}

/// The side whose gap to `target` is largest (relative to the frame extent
/// along that axis), if the gap exceeds `threshold`; otherwise `Stop`.
/// Ties go to the side earliest in action order.
pub fn supervised_label(region: &BBox, target: &BBox, frame: &ImageFrame, threshold: f64) -> Action {
    let gaps = [
        (target.y_tl() - region.y_tl()) / frame.height(),
        (region.y_br() - target.y_br()) / frame.height(),
        (target.x_tl() - region.x_tl()) / frame.width(),
        (region.x_br() - target.x_br()) / frame.width(),
    ];
    let mut best = 0;
    for i in 1..4 {
        if gaps[i] > gaps[best] {
            best = i;
        }
    }
    if gaps[best] > threshold {
        Action::ALL[best]
    } else {
        Action::Stop
    }
}

/// A random region containing `target`: each side lands uniformly between
/// the target edge and the frame edge.
pub fn covering_region(target: &BBox, frame: &ImageFrame, rng: &mut ChaCha8Rng) -> BBox {
    let mut between = |a: f64, b: f64| if b > a { rng.random_range(a..=b) } else { a };
    let x0 = between(0.0, target.x_tl());
    let y0 = between(0.0, target.y_tl());
    let x1 = between(target.x_br(), frame.width());
    let y1 = between(target.y_br(), frame.height());
    BBox::new(x0, y0, x1, y1).expect("region contains a valid target box")
}

/// Train `actor` with cross-entropy between the scale-averaged policy and
/// the rule's label. Each episode is one training scene: the full frame plus
/// `regions_per_episode - 1` random covering regions, one update per region.
/// Returns the mean loss per episode.
pub fn train_supervised(
    task: &Task,
    actor: &mut Mlp,
    cfg: &SupervisedConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>, AgentError> {
    let mut opt = Adam::new(actor.num_params(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 40, 0));
    let mut log = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let prepared = task.prepare(task.sample(Split::Train, e as u64)?)?;
        let scene = &prepared.sample.scene;
        let target = scene
            .object(prepared.sample.query.target_id)
            .expect("generated query names an object")
            .bbox;
        let builder = task.builder(&prepared.linguistic);
        let mut total = 0.0;
        for k in 0..cfg.regions_per_episode {
            let region = if k == 0 {
                scene.frame.full_box()
            } else {
                covering_region(&target, &scene.frame, &mut rng)
            };
            let label = supervised_label(&region, &target, &scene.frame, cfg.threshold);
            let state = builder.build(scene, &region, 0)?;
            let out = policy(actor, &state)?;
            let mut grads = vec![0.0; actor.num_params()];
            total -= accumulate_log_prob_grad(actor, &out, label, -1.0, &mut grads)?;
            actor.apply_gradients(&mut opt, &grads)?;
        }
        log.push(total / cfg.regions_per_episode.max(1) as f64);
    }
    Ok(log)
}
