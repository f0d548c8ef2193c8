//! Box refinement: a regressor from the encoded final box to coordinate offsets.

use super::AgentError;
use crate::geometry::{iou, spatial_feature, BBox, ImageFrame};
use crate::nets::{Activation, Adam, Head, Mlp};
use crate::scene::{PatchEncoder, Scene};
use crate::task::{derive_seed, Split, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Standard deviation of the per-coordinate noise used to make training pairs.
    pub sigma: f64,
    pub steps: usize,
    pub batch: usize,
    /// Encoder scale the refiner reads (0 is the finest grid).
    pub scale: usize,
    /// Offsets are predicted in multiples of this many image units.
    pub offset_unit: f64,
    pub seed: u64,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            lr: 1e-3,
            sigma: 5.0,
            steps: 4000,
            batch: 16,
            scale: 0,
            offset_unit: 10.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOutcome {
    pub bbox: BBox,
    /// The prediction was an inverted box and the input was returned instead.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refiner {
    pub net: Mlp,
    pub scale: usize,
    pub offset_unit: f64,
}

impl Refiner {
    pub fn input(&self, encoder: &PatchEncoder, scene: &Scene, b: &BBox) -> Result<Vec<f64>, AgentError> {
        refiner_input(encoder, scene, b, self.scale)
    }

    pub fn refine(&self, encoder: &PatchEncoder, scene: &Scene, b: &BBox) -> Result<RefineOutcome, AgentError> {
        let x = self.input(encoder, scene, b)?;
        let d = self.net.forward(&x)?;
        Ok(apply_offsets(b, &d, self.offset_unit, &scene.frame))
    }
}

fn refiner_input(encoder: &PatchEncoder, scene: &Scene, b: &BBox, scale: usize) -> Result<Vec<f64>, AgentError> {
    let mut x = spatial_feature(b, &scene.frame)?.0.to_vec();
    x.extend(encoder.encode(scene, b, scale)?);
    Ok(x)
}

/// `b + unit * d`, clamped to the frame; falls back to `b` on an inverted result.
pub fn apply_offsets(b: &BBox, d: &[f64], unit: f64, frame: &ImageFrame) -> RefineOutcome {
    let a = b.to_array();
    let moved = BBox::new(
        (a[0] + unit * d[0]).clamp(0.0, frame.width()),
        (a[1] + unit * d[1]).clamp(0.0, frame.height()),
        (a[2] + unit * d[2]).clamp(0.0, frame.width()),
        (a[3] + unit * d[3]).clamp(0.0, frame.height()),
    );
    match moved {
        Ok(bbox) => RefineOutcome {
            bbox,
            degenerate: false,
        },
        Err(_) => RefineOutcome {
            bbox: *b,
            degenerate: true,
        },
    }
}

/// Perturb each coordinate of `gt` with N(0, sigma), clamped to the frame.
/// Redraws until the result is a valid box.
pub fn noisy_box(gt: &BBox, sigma: f64, frame: &ImageFrame, rng: &mut ChaCha8Rng) -> BBox {
    if sigma == 0.0 {
        return *gt;
    }
    let n = Normal::new(0.0, sigma).expect("finite positive sigma");
    let a = gt.to_array();
    loop {
        let c: Vec<f64> = a.iter().map(|v| v + n.sample(rng)).collect();
        let b = BBox::new(
            c[0].clamp(0.0, frame.width()),
            c[1].clamp(0.0, frame.height()),
            c[2].clamp(0.0, frame.width()),
            c[3].clamp(0.0, frame.height()),
        );
        if let Ok(b) = b {
            return b;
        }
    }
}

/// Train a refiner with an L2 coordinate loss on (noisy box → object box)
/// pairs drawn from training scenes. Returns the refiner and the mean loss of
/// every 100 steps.
pub fn train_refiner(task: &Task, cfg: &RefinerConfig) -> Result<(Refiner, Vec<f64>), AgentError> {
    let in_dim = 5 + task.encoder.visual_dim();
    let mut sizes = vec![in_dim];
    sizes.extend(&cfg.hidden);
    sizes.push(4);
    let mut net = Mlp::new(&sizes, Activation::Tanh, Head::Logits, derive_seed(cfg.seed, 30, 0))?;
    let mut opt = Adam::new(net.num_params(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 31, 0));
    let mut losses = Vec::new();
    let mut window = 0.0;
    let mut scene_index = 0u64;
    let mut pool: Vec<(Scene, BBox)> = Vec::new();
    for step in 0..cfg.steps {
        let mut grads = vec![0.0; net.num_params()];
        let mut loss = 0.0;
        for _ in 0..cfg.batch {
            if pool.is_empty() {
                let s = task.sample(Split::Train, scene_index)?;
                scene_index += 1;
                pool = s.scene.objects.iter().map(|o| (s.scene.clone(), o.bbox)).collect();
            }
            let (scene, gt) = pool.pop().expect("pool refilled above");
            let noisy = noisy_box(&gt, cfg.sigma, &scene.frame, &mut rng);
            let x = refiner_input(&task.encoder, &scene, &noisy, cfg.scale)?;
            let cache = net.forward_cached(&x)?;
            let target: Vec<f64> = gt
                .to_array()
                .iter()
                .zip(noisy.to_array())
                .map(|(g, n)| (g - n) / cfg.offset_unit)
                .collect();
            let scale = 1.0 / cfg.batch as f64;
            let up: Vec<f64> = cache
                .output()
                .iter()
                .zip(&target)
                .map(|(o, t)| {
                    loss += 0.5 * (o - t) * (o - t) * scale;
                    (o - t) * scale
                })
                .collect();
            net.backward_params(&cache, &up, &mut grads)?;
        }
        net.apply_gradients(&mut opt, &grads)?;
        window += loss;
        if (step + 1) % 100 == 0 {
            losses.push(window / 100.0);
            window = 0.0;
        }
    }
    Ok((
        Refiner {
            net,
            scale: cfg.scale,
            offset_unit: cfg.offset_unit,
        },
        losses,
    ))
}

/// Mean IoU against the object box of the noisy boxes and of their refinements,
/// over every object of `count` held-out scenes.
pub fn refinement_gain(
    task: &Task,
    refiner: &Refiner,
    sigma: f64,
    count: u64,
    seed: u64,
) -> Result<(f64, f64), AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut before, mut after, mut n) = (0.0, 0.0, 0usize);
    for i in 0..count {
        let s = task.sample(Split::Eval, i)?;
        for o in &s.scene.objects {
            let noisy = noisy_box(&o.bbox, sigma, &s.scene.frame, &mut rng);
            let r = refiner.refine(&task.encoder, &s.scene, &noisy)?;
            before += iou(&noisy, &o.bbox);
            after += iou(&r.bbox, &o.bbox);
            n += 1;
        }
    }
    Ok((before / n as f64, after / n as f64))
}
