//! Greedy-inference evaluation and the acc@0.5 metric.

use crate::agent::{AgentError, Policy, Refiner};
use crate::env::EpisodeTrace;
use crate::geometry::iou;
use crate::task::{derive_seed, Prepared, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A prediction counts as correct only when its IoU is strictly above this.
pub const ACC_THRESHOLD: f64 = 0.5;

pub fn is_correct(iou: f64) -> bool {
    iou > ACC_THRESHOLD
}

/// Outcome of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub trace: EpisodeTrace,
    /// IoU of the reported box (the refined one when a refiner ran).
    pub iou: f64,
    pub steps: usize,
    pub refine_degenerate: bool,
}

/// Play one episode with `policy`, then refine the final box if a refiner is given.
pub fn run_episode(
    task: &Task,
    prepared: &Prepared,
    policy: &dyn Policy,
    refiner: Option<&Refiner>,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeResult, AgentError> {
    let mut env = task.env(prepared)?;
    while !env.is_done() {
        let a = policy.act(&env, rng)?;
        env.step(a)?;
    }
    let gt = env.gt_box();
    let mut trace = env.into_trace();
    let mut degenerate = false;
    let reported = match refiner {
        Some(r) => {
            let out = r.refine(&task.encoder, &prepared.sample.scene, &trace.final_box)?;
            degenerate = out.degenerate;
            trace.refined_box = Some(out.bbox);
            out.bbox
        }
        None => trace.final_box,
    };
    Ok(EpisodeResult {
        iou: iou(&reported, &gt),
        steps: trace.steps.len(),
        trace,
        refine_degenerate: degenerate,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub count: usize,
    pub acc_at_05: f64,
    pub mean_iou: f64,
}

impl Breakdown {
    fn from_ious(ious: &[f64]) -> Self {
        if ious.is_empty() {
            return Self::default();
        }
        let n = ious.len() as f64;
        Self {
            count: ious.len(),
            acc_at_05: ious.iter().filter(|v| is_correct(**v)).count() as f64 / n,
            mean_iou: ious.iter().sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub acc_at_05: f64,
    pub mean_iou: f64,
    pub mean_episode_length: f64,
    pub attribute_only: Breakdown,
    pub relation: Breakdown,
    pub refine_degenerate: usize,
    pub config_hash: String,
}

/// Evaluate `policy` on `samples`. Episode `i` draws from its own seeded
/// stream, so results do not depend on evaluation order.
pub fn evaluate(
    task: &Task,
    policy: &dyn Policy,
    samples: &[Prepared],
    refiner: Option<&Refiner>,
    seed: u64,
    config_hash: &str,
) -> Result<EvalReport, AgentError> {
    let mut all = Vec::with_capacity(samples.len());
    let mut attr = Vec::new();
    let mut rel = Vec::new();
    let mut steps = 0usize;
    let mut degenerate = 0usize;
    for (i, s) in samples.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 20, i as u64));
        let r = run_episode(task, s, policy, refiner, &mut rng)?;
        steps += r.steps;
        degenerate += r.refine_degenerate as usize;
        all.push(r.iou);
        if s.sample.query.has_reference() {
            rel.push(r.iou);
        } else {
            attr.push(r.iou);
        }
    }
    let total = Breakdown::from_ious(&all);
    Ok(EvalReport {
        count: total.count,
        acc_at_05: total.acc_at_05,
        mean_iou: total.mean_iou,
        mean_episode_length: if samples.is_empty() {
            0.0
        } else {
            steps as f64 / samples.len() as f64
        },
        attribute_only: Breakdown::from_ious(&attr),
        relation: Breakdown::from_ious(&rel),
        refine_degenerate: degenerate,
        config_hash: config_hash.to_string(),
    })
}
