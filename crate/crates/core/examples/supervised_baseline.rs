//! The supervised baseline: covering regions labelled with the side that has
//! the most slack around the target, trained with cross-entropy.

use shrinkground::agent::{supervised_label, train_supervised, GreedyActor};
use shrinkground::eval::evaluate;
use shrinkground::geometry::BBox;
use shrinkground::harness::{eval_seed, eval_set, RunConfig};
use shrinkground::nets::{Head, Mlp};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::default();
    let task = cfg.task()?;
    let frame = task.gen.frame()?;

    let target = BBox::new(40.0, 40.0, 60.0, 60.0)?;
    for region in [target, BBox::new(40.0, 10.0, 62.0, 63.0)?, BBox::new(0.0, 0.0, 100.0, 100.0)?] {
        let label = supervised_label(&region, &target, &frame, cfg.supervised.threshold);
        println!("region {:?} -> {label:?}", region.to_array());
    }

    let mut sizes = vec![task.state_dim()];
    sizes.extend(&cfg.agent.hidden);
    sizes.push(5);
    let mut actor = Mlp::new(&sizes, cfg.agent.activation, Head::Logits, cfg.seeds.net)?;
    let losses = train_supervised(&task, &mut actor, &cfg.supervised, 2000, 1)?;
    for (k, chunk) in losses.chunks(400).enumerate() {
        println!("episodes {:>4}-{:<4} mean loss {:.3}", k * 400, k * 400 + chunk.len(), chunk.iter().sum::<f64>() / chunk.len() as f64);
    }
    let mut small = cfg.clone();
    small.eval_size = 200;
    let samples = eval_set(&small, &task)?;
    let r = evaluate(&task, &GreedyActor(&actor), &samples, None, eval_seed(&small), "")?;
    println!("greedy acc@0.5 {:.3}, mean iou {:.3}, mean length {:.1}", r.acc_at_05, r.mean_iou, r.mean_episode_length);
    Ok(())
}
