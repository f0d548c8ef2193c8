//! Render an episode as SVG frames: the scene, the current patch and which
//! triads still have support inside it.
//!
//! `cargo run --example trace_svg -- out_dir`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shrinkground::agent::OracleGreedy;
use shrinkground::eval::run_episode;
use shrinkground::harness::svg::render_frames;
use shrinkground::harness::RunConfig;
use shrinkground::task::Split;
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("shrinkground-trace"));
    std::fs::create_dir_all(&out)?;
    let cfg = RunConfig::default();
    let task = cfg.task()?;
    // pick the first held-out scene with a relation query
    let prepared = (0..)
        .map(|i| task.sample(Split::Eval, i).and_then(|s| task.prepare(s)))
        .find(|p| p.as_ref().map(|p| p.sample.query.has_reference()).unwrap_or(true))
        .expect("the eval split is unbounded")?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let result = run_episode(&task, &prepared, &OracleGreedy, None, &mut rng)?;
    println!("query \"{}\", {} steps, final iou {:.3}", result.trace.query, result.steps, result.iou);
    for (k, svg) in render_frames(&prepared.sample.scene, &result.trace).iter().enumerate() {
        let path = out.join(format!("frame_{k:02}.svg"));
        std::fs::write(&path, svg)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
