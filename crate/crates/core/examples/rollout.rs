//! Step through episodes by hand with the scripted oracle and a uniform
//! random policy, printing actions, rewards and triad activity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shrinkground::agent::{OracleGreedy, Policy, UniformRandom};
use shrinkground::harness::RunConfig;
use shrinkground::task::Split;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::default();
    cfg.env.terminal_bonus = true;
    let task = cfg.task()?;
    let prepared = task.prepare(task.sample(Split::Eval, 3)?)?;
    println!("query: \"{}\"", prepared.sample.query.text);

    let policies: [(&str, &dyn Policy); 2] = [("oracle", &OracleGreedy), ("random", &UniformRandom)];
    for (name, policy) in policies {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut env = task.env(&prepared)?;
        println!("\n{name} policy, target box {:?}", env.gt_box().to_array());
        let mut ret = 0.0;
        while !env.is_done() {
            let action = policy.act(&env, &mut rng)?;
            let out = env.step(action)?;
            ret += out.reward;
            let active = env.trace().active_flags().iter().map(|a| if *a { '+' } else { '-' }).collect::<String>();
            println!(
                "  {:<13} iou {:.3} (d {:+.3}) reward {:>4} triads {active}",
                format!("{action:?}"),
                out.iou_after,
                out.delta_iou,
                out.reward
            );
        }
        println!("  return {ret}, final iou {:.3}", env.current_iou());
    }
    Ok(())
}
