//! Train the actor-critic agent with a short curriculum and evaluate it
//! against the uniform random policy.
//!
//! `cargo run --release --example train_agent -- 4000` sets the episode budget.

use shrinkground::agent::UniformRandom;
use shrinkground::eval::evaluate;
use shrinkground::harness::{eval_seed, eval_set, evaluate_model, train, MetricsLine, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let budget: usize = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(3000);
    let mut cfg = RunConfig::default();
    // keep the stage layout, scale every stage to the budget
    let total = cfg.episode_budget() as f64;
    for s in &mut cfg.curriculum {
        s.episodes = ((s.episodes as f64 / total) * budget as f64).round().max(1.0) as usize;
    }
    cfg.log_every = (budget / 10).max(1);
    cfg.probe_size = 50;
    cfg.eval_size = 200;
    cfg.validate()?;

    let model = train(&cfg, |line| {
        if let MetricsLine::Rl(r) = line {
            println!(
                "episode {:>6}  return {:6.2}  train acc {:.3}  probe acc {:.3}  probe iou {:.3}",
                r.episode, r.mean_reward, r.train_acc_at_05, r.acc_at_05, r.mean_iou
            );
        }
    })?;

    let task = cfg.task()?;
    let samples = eval_set(&cfg, &task)?;
    let agent = evaluate_model(&cfg, &task, &model, &samples)?;
    let random = evaluate(&task, &UniformRandom, &samples, None, eval_seed(&cfg), "")?;
    println!("agent : acc@0.5 {:.3}  mean iou {:.3}  mean length {:.1}", agent.acc_at_05, agent.mean_iou, agent.mean_episode_length);
    println!(
        "        attribute {:.3} ({})  relation {:.3} ({})",
        agent.attribute_only.acc_at_05, agent.attribute_only.count, agent.relation.acc_at_05, agent.relation.count
    );
    println!("random: acc@0.5 {:.3}  mean iou {:.3}", random.acc_at_05, random.mean_iou);
    Ok(())
}
