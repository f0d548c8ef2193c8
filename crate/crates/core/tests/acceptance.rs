//! Acceptance gate. Runs every criterion in sequence (timings are measured
//! on one core) and prints one PASS/FAIL line per criterion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shrinkground::agent::{check_gradients, refinement_gain, train_refiner, OracleGreedy, Policy, UniformRandom};
use shrinkground::env::reward;
use shrinkground::eval::{evaluate, EvalReport};
use shrinkground::geometry::{shrink, BBox, Side};
use shrinkground::harness::{eval_seed, eval_set, evaluate_model, report_json, run_ablation, train, RunConfig, Variant};
use shrinkground::query::{parse, parse_text, Triad};
use shrinkground::task::Split;
use std::time::{Duration, Instant};

struct Gate {
    failures: usize,
}

impl Gate {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

/// Independent restatement of the reward rule.
fn reward_oracle(iou: f64, delta: f64) -> f64 {
    match (iou, delta) {
        (_, d) if d <= 0.0 => 0.0,
        (i, _) if i < 0.3 => 0.0,
        (i, _) if i < 0.5 => 1.0,
        _ => 10.0,
    }
}

fn reward_table(gate: &mut Gate) {
    let t = Instant::now();
    let mut mismatches = Vec::new();
    for iou in [0.0, 0.29, 0.3, 0.49, 0.5, 1.0] {
        for delta in [-0.1, 0.0, 0.1] {
            if reward(iou, delta) != reward_oracle(iou, delta) {
                mismatches.push((iou, delta));
            }
        }
    }
    // and the environment hands out exactly that reward on real steps
    let cfg = RunConfig {
        env: shrinkground::harness::EnvSettings {
            terminal_bonus: false,
            ..Default::default()
        },
        ..RunConfig::default()
    };
    let task = cfg.task().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut steps = 0;
    for i in 0..50 {
        let p = task.prepare(task.sample(Split::Eval, i).unwrap()).unwrap();
        let mut env = task.env(&p).unwrap();
        while !env.is_done() {
            let a = if rng.random::<f64>() < 0.5 {
                OracleGreedy.act(&env, &mut rng).unwrap()
            } else {
                UniformRandom.act(&env, &mut rng).unwrap()
            };
            let out = env.step(a).unwrap();
            steps += 1;
            if out.reward != reward_oracle(out.iou_after, out.delta_iou) {
                mismatches.push((out.iou_after, out.delta_iou));
            }
        }
    }
    let el = t.elapsed();
    gate.record(
        "reward table",
        mismatches.is_empty() && el < Duration::from_secs(1),
        format!("18 grid points + {steps} env steps, {} mismatches, {}", mismatches.len(), secs(el)),
    );
}

fn stride_decay(gate: &mut Gate) {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let boxes = [BBox::new(0.0, 0.0, 100.0, 100.0).unwrap(), BBox::new(13.0, 7.5, 91.0, 60.25).unwrap()];
    for b in boxes {
        for side in [Side::Top, Side::Bottom, Side::Left, Side::Right] {
            let extent = |x: &BBox| match side {
                Side::Top | Side::Bottom => x.height(),
                Side::Left | Side::Right => x.width(),
            };
            let mut p = b;
            for k in 1..=20 {
                p = shrink(&p, side, 0.2).unwrap();
                let want = 0.8f64.powi(k) * extent(&b);
                worst = worst.max((extent(&p) - want).abs());
            }
        }
    }
    let el = t.elapsed();
    gate.record(
        "stride decay",
        worst <= 1e-9 && el < Duration::from_secs(1),
        format!("max |extent - 0.8^k extent0| = {worst:.2e} for k <= 20, {}", secs(el)),
    );
}

fn gradient_fidelity(gate: &mut Gate) {
    let t = Instant::now();
    let dim = RunConfig::default().task().unwrap().state_dim();
    let r = check_gradients(20, dim, 1e-5).unwrap();
    let el = t.elapsed();
    gate.record(
        "gradient fidelity",
        r.max() < 1e-4 && el < Duration::from_secs(30),
        format!(
            "20 seeds, actor max rel err {:.2e}, critic max rel err {:.2e}, {}",
            r.actor_max,
            r.critic_max,
            secs(el)
        ),
    );
}

fn parser(gate: &mut Gate) {
    let t = Instant::now();
    let cfg = RunConfig::default();
    let tr = |a: &str, b: &str, c: &str| Triad::new(a, b, c);
    let fixtures: Vec<(&str, Vec<Triad>)> = vec![
        ("lady", vec![tr("lady", "lady", "SELF")]),
        ("left", vec![tr("UKN", "UKN", "left")]),
        ("left lady", vec![tr("lady", "lady", "left")]),
        ("orange cat", vec![tr("cat", "cat", "orange")]),
        ("cat above a shelf", vec![tr("cat", "shelf", "above")]),
        ("lady holding a cat", vec![tr("lady", "cat", "holding")]),
        (
            "the left lady in white holding an orange cat and standing on a table",
            vec![
                tr("lady", "lady", "left"),
                tr("lady", "lady", "white"),
                tr("lady", "table", "on"),
                tr("lady", "cat", "holding"),
                tr("cat", "cat", "orange"),
            ],
        ),
    ];
    let mut fixture_ok = 0;
    for (q, want) in &fixtures {
        let Ok(got) = parse_text(q, &cfg.lexicon) else { continue };
        // the table's row order is not the sentence order; compare as sets
        // and pin the two triads that survive truncation to M = 2
        let mut a = got.clone();
        let mut b = want.clone();
        a.sort();
        b.sort();
        if a == b && got[..got.len().min(2)] == want[..want.len().min(2)] {
            fixture_ok += 1;
        }
    }
    let task = cfg.task().unwrap();
    let mut corpus_ok = 0;
    for i in 0..10_000 {
        let s = task.sample(Split::Train, i).unwrap();
        if parse(&s.query.tokens(), &cfg.lexicon).ok().as_ref() == Some(&s.query.gold_triads) {
            corpus_ok += 1;
        }
    }
    let el = t.elapsed();
    gate.record(
        "parser exactness",
        fixture_ok == fixtures.len() && corpus_ok == 10_000 && el < Duration::from_secs(10),
        format!("fixtures {fixture_ok}/7, generated {corpus_ok}/10000, {}", secs(el)),
    );
}

fn oracle_shrinkability(gate: &mut Gate) {
    let t = Instant::now();
    let cfg = RunConfig::default();
    let task = cfg.task().unwrap();
    let (mut scenes, mut reached, mut index) = (0, 0, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    while scenes < 1000 {
        let p = task.prepare(task.sample(Split::Eval, index).unwrap()).unwrap();
        index += 1;
        let scene = &p.sample.scene;
        let target = scene.object(p.sample.query.target_id).unwrap().bbox;
        if target.area() < 0.02 * scene.frame.area() {
            continue;
        }
        scenes += 1;
        let mut env = task.env(&p).unwrap();
        let mut best = env.current_iou();
        while !env.is_done() {
            let a = OracleGreedy.act(&env, &mut rng).unwrap();
            best = best.max(env.step(a).unwrap().iou_after);
        }
        if best >= 0.5 {
            reached += 1;
        }
    }
    let el = t.elapsed();
    let frac = reached as f64 / scenes as f64;
    gate.record(
        "oracle shrinkability",
        frac >= 0.95 && el < Duration::from_secs(60),
        format!("IoU >= 0.5 within 20 steps on {reached}/{scenes} ({frac:.3}), {}", secs(el)),
    );
}

fn refinement(gate: &mut Gate) {
    let cfg = RunConfig::default();
    let task = cfg.task().unwrap();
    let t = Instant::now();
    let (refiner, _) = train_refiner(&task, &cfg.refiner).unwrap();
    let el = t.elapsed();
    let (before, after) = refinement_gain(&task, &refiner, 5.0, 1000, 99).unwrap();
    gate.record(
        "refinement sanity",
        after - before >= 0.05 && el < Duration::from_secs(300),
        format!("sigma=5 mean IoU {before:.3} -> {after:.3} (+{:.3}), training {}", after - before, secs(el)),
    );
}

fn reproducibility(gate: &mut Gate) {
    let cfg = RunConfig::default()
        .with_overrides(&[
            "curriculum=[{\"episodes\":300}]".into(),
            "eval_size=100".into(),
            "probe_size=20".into(),
            "log_every=100".into(),
            "refiner.steps=200".into(),
        ])
        .unwrap();
    let run = || {
        let task = cfg.task().unwrap();
        let model = train(&cfg, |_| {}).unwrap();
        let samples = eval_set(&cfg, &task).unwrap();
        report_json(&evaluate_model(&cfg, &task, &model, &samples).unwrap())
    };
    let (a, b) = (run(), run());
    gate.record(
        "reproducibility",
        a == b,
        format!("two identical runs, reports {} ({} bytes)", if a == b { "identical" } else { "differ" }, a.len()),
    );
}

fn row<'a>(rows: &'a [shrinkground::harness::AblationRow], name: &str) -> &'a EvalReport {
    &rows.iter().find(|r| r.name == name).expect("variant evaluated").report
}

fn learning_and_ablations(gate: &mut Gate) {
    let cfg = RunConfig::default();
    let task = cfg.task().unwrap();
    let samples = eval_set(&cfg, &task).unwrap();
    let random = evaluate(&task, &UniformRandom, &samples, None, eval_seed(&cfg), &cfg.hash()).unwrap();

    let t = Instant::now();
    let model = train(&cfg, |_| {}).unwrap();
    let el = t.elapsed();
    let default = evaluate_model(&cfg, &task, &model, &samples).unwrap();
    let mut raw_cfg = cfg.clone();
    raw_cfg.ablations.no_refinement = true;
    let raw = evaluate_model(&raw_cfg, &task, &model, &samples).unwrap();
    let episodes = cfg.episode_budget();
    gate.record(
        "learning signal",
        episodes <= 50_000
            && default.count == 500
            && default.acc_at_05 >= 0.70
            && random.acc_at_05 <= 0.10
            && el < Duration::from_secs(20 * 60),
        format!(
            "{episodes} episodes in {}; held-out acc@0.5 {:.3} (mean IoU {:.3}) vs uniform random {:.3} on {} scenes",
            secs(el),
            default.acc_at_05,
            default.mean_iou,
            random.acc_at_05,
            default.count
        ),
    );

    let variants = [
        Variant::new("no_multiscale+no_spatial", |a| {
            a.no_multiscale = true;
            a.no_spatial = true;
        }),
        Variant::new("fixed_stride", |a| a.fixed_stride = true),
        Variant::new("supervised", |a| a.supervised = true),
    ];
    let rows = run_ablation(&cfg, &variants, |_| {}).unwrap();
    let all = [("default", &default), ("no_refinement", &raw)]
        .into_iter()
        .chain(rows.iter().map(|r| (r.name.as_str(), &r.report)));
    for (name, r) in all {
        println!(
            "     {name:<26} acc@0.5 {:.3}  mean IoU {:.3}  attribute {:.3}  relation {:.3}",
            r.acc_at_05, r.mean_iou, r.attribute_only.acc_at_05, r.relation.acc_at_05
        );
    }

    let poor = row(&rows, "no_multiscale+no_spatial");
    let gap = default.relation.acc_at_05 - poor.relation.acc_at_05;
    gate.record(
        "relation advantage",
        gap >= 0.10,
        format!(
            "relation-query acc@0.5 default {:.3} vs no_multiscale+no_spatial {:.3} (+{:.3}) on {} relation scenes",
            default.relation.acc_at_05, poor.relation.acc_at_05, gap, default.relation.count
        ),
    );

    let fixed = row(&rows, "fixed_stride");
    let sup = row(&rows, "supervised");
    gate.record(
        "ablation directions",
        default.acc_at_05 > fixed.acc_at_05 && default.acc_at_05 > sup.acc_at_05 && default.mean_iou > raw.mean_iou,
        format!(
            "acc@0.5 default {:.3} > fixed_stride {:.3}, > supervised {:.3}; mean IoU default {:.3} > no_refinement {:.3}",
            default.acc_at_05, fixed.acc_at_05, sup.acc_at_05, default.mean_iou, raw.mean_iou
        ),
    );
}

fn main() {
    // positional arguments select criteria by name, like a test filter;
    // harness flags passed by `cargo test` are ignored
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |name: &str| filter.is_empty() || filter.iter().any(|f| name.contains(f.as_str()) || "acceptance".contains(f.as_str()));
    let criteria: [(&str, fn(&mut Gate)); 8] = [
        ("reward_table", reward_table),
        ("stride_decay", stride_decay),
        ("gradient_fidelity", gradient_fidelity),
        ("parser", parser),
        ("oracle_shrinkability", oracle_shrinkability),
        ("refinement", refinement),
        ("reproducibility", reproducibility),
        ("learning_and_ablations", learning_and_ablations),
    ];
    let mut gate = Gate { failures: 0 };
    for (name, run) in criteria {
        if selected(name) {
            run(&mut gate);
        }
    }
    if gate.failures > 0 {
        println!("{} acceptance criteria failed", gate.failures);
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
