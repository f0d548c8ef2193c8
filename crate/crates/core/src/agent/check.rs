//! Finite-difference check of the actor and critic gradients.

use super::{ActorCritic, AgentConfig, AgentError, CriticInput};
use crate::env::{Action, AgentState, NUM_ACTIONS};
use crate::geometry::BBox;
use crate::gradcheck::{max_relative_error, numeric_gradient};
use crate::task::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seeds: u64,
    /// Largest relative error of d log pi / d actor params.
    pub actor_max: f64,
    /// Largest relative error of d V / d critic params.
    pub critic_max: f64,
}

impl GradCheckReport {
    pub fn max(&self) -> f64 {
        self.actor_max.max(self.critic_max)
    }
}

fn random_state(dim: usize, scales: usize, rng: &mut ChaCha8Rng) -> AgentState {
    AgentState {
        sub_states: (0..scales)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect())
            .collect(),
        patch: BBox::new(0.0, 0.0, 1.0, 1.0).expect("unit box"),
        step_index: 0,
    }
}

/// Largest errors of one net pair on one state, over `coords` parameter
/// indices (all of them when `None`).
fn check_one(ac: &ActorCritic, state: &AgentState, action: Action, coords: Option<&[usize]>, h: f64) -> Result<(f64, f64), AgentError> {
    let (_, ga) = ac.log_prob_gradient(state, action)?;
    let (_, gc) = ac.value_gradient(state)?;

    let pick = |g: &[f64], n: usize| -> Vec<f64> {
        match coords {
            Some(c) => c.iter().map(|i| g[i % n]).collect(),
            None => g.to_vec(),
        }
    };
    let actor_idx: Vec<usize> = match coords {
        Some(c) => c.iter().map(|i| i % ac.actor.num_params()).collect(),
        None => (0..ac.actor.num_params()).collect(),
    };
    let critic_idx: Vec<usize> = match coords {
        Some(c) => c.iter().map(|i| i % ac.critic.num_params()).collect(),
        None => (0..ac.critic.num_params()).collect(),
    };

    let mut probe = ac.clone();
    let base_a: Vec<f64> = actor_idx.iter().map(|i| ac.actor.params()[*i]).collect();
    let na = numeric_gradient(
        |x| {
            for (k, i) in actor_idx.iter().enumerate() {
                probe.actor.params_mut()[*i] = x[k];
            }
            let out = probe.policy(state).expect("shapes checked above");
            out.probs[action.index()].ln()
        },
        &base_a,
        h,
    );
    let mut probe = ac.clone();
    let base_c: Vec<f64> = critic_idx.iter().map(|i| ac.critic.params()[*i]).collect();
    let nc = numeric_gradient(
        |x| {
            for (k, i) in critic_idx.iter().enumerate() {
                probe.critic.params_mut()[*i] = x[k];
            }
            probe.value(state).expect("shapes checked above")
        },
        &base_c,
        h,
    );
    Ok((
        max_relative_error(&pick(&ga, ac.actor.num_params()), &na),
        max_relative_error(&pick(&gc, ac.critic.num_params()), &nc),
    ))
}

/// Check `seeds` random (net, state, action) triples. Each seed checks a
/// small net on every parameter and a full-size net (`state_dim`, default
/// widths) on a random subset of parameters. Critic aggregation alternates
/// between seeds.
pub fn check_gradients(seeds: u64, state_dim: usize, h: f64) -> Result<GradCheckReport, AgentError> {
    let mut report = GradCheckReport {
        seeds,
        actor_max: 0.0,
        critic_max: 0.0,
    };
    for s in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s, 80, 0));
        let critic_input = if s % 2 == 0 {
            CriticInput::MeanOverScales
        } else {
            CriticInput::Concatenated
        };
        let action = Action::from_index(rng.random_range(0..NUM_ACTIONS)).expect("in range");

        let small = AgentConfig {
            hidden: vec![7, 6],
            critic_input,
            ..AgentConfig::default()
        };
        let ac = ActorCritic::new(9, 3, &small, derive_seed(s, 81, 0))?;
        let state = random_state(9, 3, &mut rng);
        let (a, c) = check_one(&ac, &state, action, None, h)?;
        report.actor_max = report.actor_max.max(a);
        report.critic_max = report.critic_max.max(c);

        let full = AgentConfig {
            critic_input,
            ..AgentConfig::default()
        };
        let ac = ActorCritic::new(state_dim, 3, &full, derive_seed(s, 82, 0))?;
        let state = random_state(state_dim, 3, &mut rng);
        let coords: Vec<usize> = (0..40).map(|_| rng.random_range(0..usize::MAX / 2)).collect();
        let (a, c) = check_one(&ac, &state, action, Some(&coords), h)?;
        report.actor_max = report.actor_max.max(a);
        report.critic_max = report.critic_max.max(c);
    }
    Ok(report)
}
