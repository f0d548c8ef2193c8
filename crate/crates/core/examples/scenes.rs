//! Sample synthetic scenes with uniquely grounded queries.

use shrinkground::harness::RunConfig;
use shrinkground::task::Split;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::default();
    let task = cfg.task()?;
    for i in 0..5 {
        let s = task.sample(Split::Eval, i)?;
        println!("scene {i} (seed {:#x}): \"{}\" -> object {}", s.scene.seed, s.query.text, s.query.target_id);
        for o in &s.scene.objects {
            let attrs: Vec<&str> = o.attributes.iter().map(String::as_str).collect();
            let mark = if o.id == s.query.target_id { "*" } else { " " };
            println!("  {mark} {} {:<8} {:<14} {:?}", o.id, o.category, attrs.join(","), o.bbox.to_array());
        }
        let triads: Vec<String> = s
            .query
            .gold_triads
            .iter()
            .map(|t| format!("({}, {}, {})", t.target, t.reference, t.discriminative))
            .collect();
        println!("  gold triads: {}", triads.join(" "));
    }
    Ok(())
}
