//! A small ablation matrix: every variant trained on the same seeds and
//! evaluated on the same held-out scenes.
//!
//! `cargo run --release --example ablation -- 3000` sets the episode budget.

use shrinkground::harness::{run_ablation, RunConfig, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let budget: usize = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(1500);
    let mut cfg = RunConfig::default();
    let total = cfg.episode_budget() as f64;
    for s in &mut cfg.curriculum {
        s.episodes = ((s.episodes as f64 / total) * budget as f64).round().max(1.0) as usize;
    }
    cfg.eval_size = 200;
    cfg.probe_size = 0;
    cfg.refiner.steps = 1000;
    let variants = Variant::standard();
    let rows = run_ablation(&cfg, &variants, |name| eprintln!("training {name}"))?;
    println!("{:<15} {:>8} {:>9} {:>9} {:>8}", "variant", "acc@0.5", "attr", "relation", "length");
    for r in rows {
        println!(
            "{:<15} {:>8.3} {:>9.3} {:>9.3} {:>8.1}",
            r.name, r.report.acc_at_05, r.report.attribute_only.acc_at_05, r.report.relation.acc_at_05, r.report.mean_episode_length
        );
    }
    Ok(())
}
