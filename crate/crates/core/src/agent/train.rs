//! Online actor-critic training: one update per environment step.

use super::{choose, ActorCritic, AgentError, GreedyActor, Mode};
use crate::eval::{evaluate, is_correct};
use crate::task::{derive_seed, Split, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub episodes: usize,
    /// Episodes between metrics records.
    pub log_every: usize,
    /// Held-out scenes evaluated greedily at each record; 0 disables.
    pub probe_size: usize,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            episodes: 20_000,
            log_every: 1000,
            probe_size: 100,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub episode: usize,
    /// Mean undiscounted return of the training episodes since the last record.
    pub mean_reward: f64,
    /// Training-episode accuracy since the last record (sampled actions).
    pub train_acc_at_05: f64,
    /// Greedy accuracy and IoU on the probe set, or on the training
    /// episodes when probing is disabled.
    pub acc_at_05: f64,
    pub mean_iou: f64,
}

/// Train `ac` for `schedule.episodes` episodes on fresh training scenes.
/// `on_record` sees each metrics record as it is produced.
pub fn train_rl(
    ac: &mut ActorCritic,
    task: &Task,
    schedule: &Schedule,
    mut on_record: impl FnMut(&MetricsRecord),
) -> Result<Vec<MetricsRecord>, AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(schedule.seed, 50, 0));
    let probe = (0..schedule.probe_size as u64)
        .map(|i| task.sample(Split::Probe, i).and_then(|s| task.prepare(s)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut records = Vec::new();
    let (mut ret_sum, mut correct, mut iou_sum, mut count) = (0.0, 0usize, 0.0, 0usize);
    for e in 0..schedule.episodes {
        let prepared = task.prepare(task.sample(Split::Train, e as u64)?)?;
        let mut env = task.env(&prepared)?;
        let mut ret = 0.0;
        while !env.is_done() {
            let state = env.state().clone();
            let out = ac.policy(&state)?;
            let action = choose(&out.probs, Mode::Train, &mut rng);
            let step = env.step(action)?;
            ret += step.reward;
            let stats = ac.iterate(&state, &out, action, step.reward, &step.next_state, step.done)?;
            if stats.v_now.abs() > ac.value_bound || !stats.v_now.is_finite() {
                return Err(AgentError::Diverged {
                    episode: e,
                    value: stats.v_now,
                    bound: ac.value_bound,
                });
            }
        }
        ret_sum += ret;
        iou_sum += env.current_iou();
        correct += is_correct(env.current_iou()) as usize;
        count += 1;

        let last = e + 1 == schedule.episodes;
        if schedule.log_every > 0 && ((e + 1) % schedule.log_every == 0 || last) {
            let n = count as f64;
            let train_acc = correct as f64 / n;
            let (acc, miou) = if probe.is_empty() {
                (train_acc, iou_sum / n)
            } else {
                let r = evaluate(task, &GreedyActor(&ac.actor), &probe, None, schedule.seed, "")?;
                (r.acc_at_05, r.mean_iou)
            };
            let rec = MetricsRecord {
                episode: e + 1,
                mean_reward: ret_sum / n,
                train_acc_at_05: train_acc,
                acc_at_05: acc,
                mean_iou: miou,
            };
            on_record(&rec);
            records.push(rec);
            (ret_sum, correct, iou_sum, count) = (0.0, 0, 0.0, 0);
        }
    }
    Ok(records)
}
