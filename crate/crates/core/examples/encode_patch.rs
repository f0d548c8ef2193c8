//! The multi-scale patch encoder: sizes, zoom behaviour and linearity.

use shrinkground::geometry::{shrink, Side};
use shrinkground::harness::RunConfig;
use shrinkground::scene::Scene;
use shrinkground::task::Split;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::default();
    let task = cfg.task()?;
    let enc = &task.encoder;
    let s = task.sample(Split::Eval, 0)?;
    let full = s.scene.frame.full_box();
    println!("grid sizes {:?}, visual width {}", enc.config().grid_sizes, enc.visual_dim());

    let mut patch = full;
    for k in 0..4 {
        let norms: Vec<String> = (0..enc.scales())
            .map(|c| Ok(format!("{:.3}", norm(&enc.encode(&s.scene, &patch, c)?))))
            .collect::<Result<_, shrinkground::scene::SceneError>>()?;
        println!("patch {:?}: |f_v| per scale = {}", patch.to_array(), norms.join(" "));
        patch = shrink(&patch, if k % 2 == 0 { Side::Left } else { Side::Top }, 0.2)?;
    }

    // the encoding of a scene is the sum of the encodings of its objects
    let whole = enc.encode(&s.scene, &full, 0)?;
    let mut sum = vec![0.0; whole.len()];
    for o in &s.scene.objects {
        let alone = Scene {
            objects: vec![o.clone()],
            ..s.scene.clone()
        };
        for (a, b) in sum.iter_mut().zip(enc.encode(&alone, &full, 0)?) {
            *a += b;
        }
    }
    let gap = whole.iter().zip(&sum).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |encode(scene) - sum of per-object encodings| = {gap:.2e}");
    Ok(())
}
