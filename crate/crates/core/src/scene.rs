//! Synthetic scenes, grounded queries, and the multi-scale patch encoder.

use crate::geometry::{iou, BBox, GeometryError, ImageFrame};
use crate::lexicon::{Lexicon, SELF, UKN};
use crate::query::Triad;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("could not generate a uniquely grounded query for seed {seed} after {attempts} attempts")]
    GenerationFailed { seed: u64, attempts: usize },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("scale level {0} not configured")]
    BadScale(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub category: String,
    pub attributes: BTreeSet<String>,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub frame: ImageFrame,
    pub objects: Vec<SceneObject>,
    pub seed: u64,
}

impl Scene {
    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }
}

/// Surface template a query was generated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Bare,
    Attribute,
    Location,
    Relation,
    Conjunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedQuery {
    pub text: String,
    pub target_id: u32,
    pub gold_triads: Vec<Triad>,
    pub kind: QueryKind,
}

impl GroundedQuery {
    pub fn tokens(&self) -> Vec<String> {
        crate::query::tokenize(&self.text)
    }

    /// True if the target is identified through another object.
    pub fn has_reference(&self) -> bool {
        self.gold_triads.iter().any(Triad::has_reference)
    }
}

/// Relative weights of the query templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateWeights {
    pub bare: f64,
    pub attribute: f64,
    pub location: f64,
    pub relation: f64,
    pub conjunction: f64,
}

impl Default for TemplateWeights {
    fn default() -> Self {
        Self {
            bare: 1.0,
            attribute: 2.0,
            location: 1.0,
            relation: 2.0,
            conjunction: 1.0,
        }
    }
}

impl TemplateWeights {
    fn entries(&self) -> [(QueryKind, f64); 5] {
        [
            (QueryKind::Bare, self.bare),
            (QueryKind::Attribute, self.attribute),
            (QueryKind::Location, self.location),
            (QueryKind::Relation, self.relation),
            (QueryKind::Conjunction, self.conjunction),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub frame_width: f64,
    pub frame_height: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub categories: Vec<String>,
    pub colors: Vec<String>,
    /// Relations the generator may state in queries.
    pub relations: Vec<String>,
    pub min_side: f64,
    pub max_side: f64,
    /// Objects with at least this area get the `big` size class, others `small`.
    pub big_area: f64,
    pub overlap_cap: f64,
    pub allow_heavy_overlap: bool,
    /// Center-distance margin for spatial relations, in image units.
    pub margin: f64,
    pub templates: TemplateWeights,
    pub max_retries: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        let lex = Lexicon::default();
        Self {
            frame_width: 100.0,
            frame_height: 100.0,
            min_objects: 2,
            max_objects: 6,
            categories: lex.nouns.clone(),
            colors: lex.colors.clone(),
            relations: ["left", "right", "above", "below", "bigger", "smaller"]
                .map(String::from)
                .to_vec(),
            min_side: 15.0,
            max_side: 35.0,
            big_area: 625.0,
            overlap_cap: 0.3,
            allow_heavy_overlap: false,
            margin: 1.0,
            templates: TemplateWeights::default(),
            max_retries: 500,
        }
    }
}

impl GenConfig {
    pub fn frame(&self) -> Result<ImageFrame, SceneError> {
        Ok(ImageFrame::new(self.frame_width, self.frame_height)?)
    }

    pub fn validate(&self, lex: &Lexicon) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidConfig(m.to_string()));
        self.frame()?;
        if self.min_objects < 1 || self.min_objects > self.max_objects {
            return bad("need 1 <= min_objects <= max_objects");
        }
        if self.categories.len() < 2 || !self.categories.iter().all(|c| lex.is_noun(c)) {
            return bad("categories must be at least two lexicon nouns");
        }
        if self.colors.is_empty() || !self.colors.iter().all(|c| lex.colors.contains(c)) {
            return bad("colors must be non-empty lexicon colors");
        }
        for r in &self.relations {
            if !lex.is_relation(r) || !SPATIAL_RELATIONS.contains(&r.as_str()) {
                return bad("generator relations must be decidable lexicon relations");
            }
        }
        if !(self.min_side > 0.0 && self.min_side <= self.max_side)
            || self.max_side > self.frame_width.min(self.frame_height)
        {
            return bad("object side range must fit in the frame");
        }
        let weights = self.templates.entries();
        if weights.iter().any(|(_, w)| *w < 0.0 || !w.is_finite()) || weights.iter().all(|(_, w)| *w == 0.0) {
            return bad("template weights must be non-negative with a positive total");
        }
        for (kind, w) in weights {
            if w > 0.0 && min_objects_for(kind) > self.max_objects {
                return bad("max_objects too small for an enabled template");
            }
            if w > 0.0 && matches!(kind, QueryKind::Relation | QueryKind::Conjunction) && self.relations.is_empty() {
                return bad("relation templates enabled without relations");
            }
        }
        Ok(())
    }
}

const SPATIAL_RELATIONS: [&str; 7] = ["left", "right", "above", "below", "inside", "bigger", "smaller"];

fn min_objects_for(kind: QueryKind) -> usize {
    match kind {
        QueryKind::Bare => 1,
        QueryKind::Attribute | QueryKind::Location => 2,
        QueryKind::Relation | QueryKind::Conjunction => 3,
    }
}

/// Decide `a rel b`. Spatial relations compare box centers with `margin`;
/// attribute tokens test membership in `a.attributes` and ignore `b`.
pub fn relation_holds(a: &SceneObject, b: &SceneObject, rel: &str, margin: f64, lex: &Lexicon) -> Result<bool, SceneError> {
    let (ax, ay) = a.bbox.center();
    let (bx, by) = b.bbox.center();
    Ok(match rel {
        "left" => ax < bx - margin,
        "right" => ax > bx + margin,
        "above" => ay < by - margin,
        "below" => ay > by + margin,
        "inside" => b.bbox.contains(&a.bbox),
        "bigger" => a.bbox.area() > b.bbox.area(),
        "smaller" => a.bbox.area() < b.bbox.area(),
        _ if lex.is_attribute(rel) => a.attributes.contains(rel),
        _ => return Err(SceneError::UnknownRelation(rel.to_string())),
    })
}

fn location_relation(loc: &str) -> &str {
    match loc {
        "top" => "above",
        "bottom" => "below",
        other => other,
    }
}

/// Ids of every object satisfying the triads, by exhaustive check.
///
/// The first triad's target unit names the referent category (`UKN` means
/// any). A triad whose target is a different noun constrains the reference
/// object of the closest preceding relation triad.
pub fn referents(scene: &Scene, triads: &[Triad], margin: f64, lex: &Lexicon) -> Result<Vec<u32>, SceneError> {
    let Some(first) = triads.first() else {
        return Ok(Vec::new());
    };
    let head = first.target.as_str();

    // Each constraint: (relation triad, extra attributes required of the reference).
    enum Constraint<'t> {
        SelfOnly,
        Attribute(&'t str),
        Extreme(&'t str),
        Related(&'t Triad, Vec<&'t str>),
    }
    let mut constraints: Vec<Constraint> = Vec::new();
    for t in triads {
        if t.target != head {
            match constraints.last_mut() {
                Some(Constraint::Related(r, attrs)) if r.reference == t.target => attrs.push(&t.discriminative),
                _ => return Err(SceneError::UnknownRelation(t.discriminative.clone())),
            }
            continue;
        }
        let d = t.discriminative.as_str();
        let c = if d == SELF {
            Constraint::SelfOnly
        } else if t.reference == t.target && lex.is_attribute(d) {
            Constraint::Attribute(d)
        } else if t.reference == t.target && lex.is_location(d) {
            Constraint::Extreme(location_relation(d))
        } else {
            Constraint::Related(t, Vec::new())
        };
        constraints.push(c);
    }

    let category_ok = |o: &SceneObject| head == UKN || o.category == head;
    let mut out = Vec::new();
    for o in &scene.objects {
        if !category_ok(o) {
            continue;
        }
        let mut ok = true;
        for c in &constraints {
            ok = match c {
                Constraint::SelfOnly => true,
                Constraint::Attribute(a) => o.attributes.contains(*a),
                Constraint::Extreme(rel) => {
                    let mut all = true;
                    for other in scene.objects.iter().filter(|x| x.id != o.id && category_ok(x)) {
                        if !relation_holds(o, other, rel, margin, lex)? {
                            all = false;
                            break;
                        }
                    }
                    all
                }
                Constraint::Related(t, attrs) => {
                    let mut any = false;
                    for b in scene.objects.iter().filter(|b| {
                        b.id != o.id && b.category == t.reference && attrs.iter().all(|a| b.attributes.contains(*a))
                    }) {
                        if relation_holds(o, b, &t.discriminative, margin, lex)? {
                            any = true;
                            break;
                        }
                    }
                    any
                }
            };
            if !ok {
                break;
            }
        }
        if ok {
            out.push(o.id);
        }
    }
    Ok(out)
}

struct Draft {
    category: String,
    color: String,
    bbox: BBox,
}

fn size_class(b: &BBox, cfg: &GenConfig) -> &'static str {
    if b.area() >= cfg.big_area {
        "big"
    } else {
        "small"
    }
}

fn place_boxes(n: usize, cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Option<Vec<BBox>> {
    let (fw, fh) = (cfg.frame_width, cfg.frame_height);
    let mut boxes: Vec<BBox> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..200 {
            let w = rng.random_range(cfg.min_side..=cfg.max_side);
            let h = rng.random_range(cfg.min_side..=cfg.max_side);
            let x = rng.random_range(0.0..=fw - w);
            let y = rng.random_range(0.0..=fh - h);
            let b = BBox::new(x, y, x + w, y + h).ok()?;
            if cfg.allow_heavy_overlap || boxes.iter().all(|o| iou(o, &b) <= cfg.overlap_cap) {
                boxes.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(boxes)
}

fn pick_kind(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> QueryKind {
    let entries = cfg.templates.entries();
    let total: f64 = entries.iter().map(|(_, w)| w).sum();
    let mut u = rng.random_range(0.0..total);
    for (k, w) in entries {
        if u < w {
            return k;
        }
        u -= w;
    }
    entries.iter().rev().find(|(_, w)| *w > 0.0).map(|(k, _)| *k).unwrap_or(QueryKind::Bare)
}

fn maybe_the(rng: &mut ChaCha8Rng) -> Vec<String> {
    if rng.random_bool(0.5) {
        vec!["the".to_string()]
    } else {
        Vec::new()
    }
}

fn relation_phrase(rel: &str, reference: &str, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out = vec![rel.to_string()];
    match rel {
        "left" | "right" => out.push("of".into()),
        "bigger" | "smaller" => out.push("than".into()),
        _ => {}
    }
    out.push(if rng.random_bool(0.5) { "a" } else { "the" }.to_string());
    out.push(reference.to_string());
    out
}

/// Draw the categories for one attempt; the first entry is the intended target.
fn draft_categories(kind: QueryKind, n: usize, cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Vec<String> {
    let cats = &cfg.categories;
    let target = cats.choose(rng).unwrap().clone();
    let other = || loop {
        let c = cats.choose(&mut *rng).unwrap();
        if *c != target {
            break c.clone();
        }
    };
    let mut out = vec![target.clone()];
    match kind {
        QueryKind::Bare => {}
        QueryKind::Attribute | QueryKind::Location => out.push(target.clone()),
        QueryKind::Relation | QueryKind::Conjunction => {
            let mut other = other;
            let r = other();
            out.push(target.clone());
            out.push(r);
        }
    }
    while out.len() < n {
        out.push(cats.choose(rng).unwrap().clone());
    }
    out
}

/// Build a query for `target` with the given template, or `None` if the
/// template cannot single it out in this scene.
fn compose_query(
    kind: QueryKind,
    scene: &Scene,
    target: &SceneObject,
    cfg: &GenConfig,
    lex: &Lexicon,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(Vec<String>, Vec<Triad>)>, SceneError> {
    let t = target.category.as_str();
    let unique = |triads: &[Triad]| -> Result<bool, SceneError> {
        Ok(referents(scene, triads, cfg.margin, lex)? == vec![target.id])
    };

    let relation_candidates = |exclude_rel: Option<(&str, &str)>| -> Result<Vec<(String, String)>, SceneError> {
        let mut out = Vec::new();
        for b in scene.objects.iter().filter(|b| b.id != target.id && b.category != t) {
            for rel in &cfg.relations {
                if exclude_rel == Some((rel.as_str(), b.category.as_str())) {
                    continue;
                }
                let cand = (rel.clone(), b.category.clone());
                if !out.contains(&cand) && relation_holds(target, b, rel, cfg.margin, lex)? {
                    out.push(cand);
                }
            }
        }
        Ok(out)
    };

    match kind {
        QueryKind::Bare => {
            let triads = vec![Triad::new(t, t, SELF)];
            if !unique(&triads)? {
                return Ok(None);
            }
            let mut text = maybe_the(rng);
            text.push(t.to_string());
            Ok(Some((text, triads)))
        }
        QueryKind::Attribute => {
            let mut attrs: Vec<&String> = target.attributes.iter().collect();
            attrs.shuffle(rng);
            for a in attrs {
                let triads = vec![Triad::new(t, t, a)];
                if unique(&triads)? {
                    let mut text = maybe_the(rng);
                    if cfg.colors.contains(a) && rng.random_bool(0.25) {
                        text.extend([t.to_string(), "in".to_string(), a.clone()]);
                    } else {
                        text.extend([a.clone(), t.to_string()]);
                    }
                    return Ok(Some((text, triads)));
                }
            }
            Ok(None)
        }
        QueryKind::Location => {
            let mut locs: Vec<&String> = lex.locations.iter().collect();
            locs.shuffle(rng);
            for l in locs {
                let triads = vec![Triad::new(t, t, l)];
                if unique(&triads)? {
                    let mut text = maybe_the(rng);
                    text.extend([l.clone(), t.to_string()]);
                    return Ok(Some((text, triads)));
                }
            }
            Ok(None)
        }
        QueryKind::Relation => {
            let mut cands = relation_candidates(None)?;
            cands.shuffle(rng);
            for (rel, r) in cands {
                let triads = vec![Triad::new(t, &r, &rel)];
                if unique(&triads)? {
                    let mut text = maybe_the(rng);
                    text.push(t.to_string());
                    text.extend(relation_phrase(&rel, &r, rng));
                    return Ok(Some((text, triads)));
                }
            }
            Ok(None)
        }
        QueryKind::Conjunction => {
            let mut cands = relation_candidates(None)?;
            cands.shuffle(rng);
            // attribute + relation
            if rng.random_bool(0.5) {
                let mut attrs: Vec<&String> = target.attributes.iter().collect();
                attrs.shuffle(rng);
                for (rel, r) in &cands {
                    for a in &attrs {
                        let triads = vec![Triad::new(t, t, a), Triad::new(t, r, rel)];
                        // Both parts must be needed, otherwise it is not a conjunction query.
                        if unique(&triads)? && !unique(&triads[..1])? && !unique(&triads[1..])? {
                            let mut text = maybe_the(rng);
                            text.extend([a.to_string(), t.to_string()]);
                            text.extend(relation_phrase(rel, r, rng));
                            return Ok(Some((text, triads)));
                        }
                    }
                }
            }
            for (i, (rel1, r1)) in cands.iter().enumerate() {
                for (rel2, r2) in cands.iter().skip(i + 1) {
                    let triads = vec![Triad::new(t, r1, rel1), Triad::new(t, r2, rel2)];
                    if unique(&triads)? && !unique(&triads[..1])? && !unique(&triads[1..])? {
                        let mut text = maybe_the(rng);
                        text.push(t.to_string());
                        text.extend(relation_phrase(rel1, r1, rng));
                        text.push("and".to_string());
                        text.extend(relation_phrase(rel2, r2, rng));
                        return Ok(Some((text, triads)));
                    }
                }
            }
            Ok(None)
        }
    }
}

/// Generate one scene and a query that singles out exactly one object.
pub fn generate_scene(seed: u64, cfg: &GenConfig, lex: &Lexicon) -> Result<(Scene, GroundedQuery), SceneError> {
    cfg.validate(lex)?;
    let frame = cfg.frame()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cfg.max_retries {
        let kind = pick_kind(cfg, &mut rng);
        let lo = cfg.min_objects.max(min_objects_for(kind));
        let n = rng.random_range(lo..=cfg.max_objects);
        let cats = draft_categories(kind, n, cfg, &mut rng);
        let Some(boxes) = place_boxes(n, cfg, &mut rng) else {
            continue;
        };
        let mut drafts: Vec<Draft> = cats
            .into_iter()
            .zip(boxes)
            .map(|(category, bbox)| Draft {
                category,
                color: cfg.colors.choose(&mut rng).unwrap().clone(),
                bbox,
            })
            .collect();
        let target_slot = {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let target_slot = order.iter().position(|&i| i == 0).unwrap();
            let mut shuffled: Vec<Draft> = Vec::with_capacity(n);
            let mut taken: Vec<Option<Draft>> = drafts.drain(..).map(Some).collect();
            for i in order {
                shuffled.push(taken[i].take().unwrap());
            }
            drafts = shuffled;
            target_slot
        };
        let objects: Vec<SceneObject> = drafts
            .into_iter()
            .enumerate()
            .map(|(i, d)| SceneObject {
                id: i as u32,
                category: d.category,
                attributes: [d.color, size_class(&d.bbox, cfg).to_string()].into_iter().collect(),
                bbox: d.bbox,
            })
            .collect();
        let scene = Scene { frame, objects, seed };

        // Bare queries may target any object with a unique category.
        let candidates: Vec<usize> = if kind == QueryKind::Bare {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            all
        } else {
            vec![target_slot]
        };
        for slot in candidates {
            let target = &scene.objects[slot];
            if let Some((tokens, triads)) = compose_query(kind, &scene, target, cfg, lex, &mut rng)? {
                let query = GroundedQuery {
                    text: tokens.join(" "),
                    target_id: target.id,
                    gold_triads: triads,
                    kind,
                };
                return Ok((scene, query));
            }
        }
    }
    Err(SceneError::GenerationFailed {
        seed,
        attempts: cfg.max_retries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Grid side per scale level; index 0 is scale level 1.
    pub grid_sizes: Vec<usize>,
    /// Object embedding width.
    pub object_dim: usize,
    /// Output width of every scale level.
    pub visual_dim: usize,
    /// Mean of the token embedding entries.
    pub embedding_mean: f64,
    /// Value every object writes into the first embedding channel. Token
    /// embeddings leave that channel at zero, so it carries plain occupancy.
    pub occupancy: f64,
    /// Coarser scales reuse the finest projection: each coarse cell is
    /// copied onto the finest cells whose centers it contains before
    /// projecting, so all scales land in one feature space. When false every
    /// scale draws its own projection.
    pub shared_projection: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            grid_sizes: vec![8, 4, 2],
            object_dim: 16,
            visual_dim: 64,
            embedding_mean: 0.0,
            occupancy: 1.0,
            shared_projection: false,
        }
    }
}

/// Overlap-weighted object-embedding grids under a fixed random projection.
///
/// Every cell holds `sum_o emb(o) * area(o ∩ cell) / area(cell)`; the grid is
/// flattened row-major (rows follow `y`) and projected to `visual_dim`.
/// Everything is linear in the set of objects.
#[derive(Debug, Clone)]
pub struct PatchEncoder {
    cfg: EncoderConfig,
    tokens: BTreeMap<String, Vec<f64>>,
    /// Per scale: `(grid*grid*object_dim) x visual_dim`, input-major.
    projections: Vec<Vec<f64>>,
}

impl PatchEncoder {
    pub fn new(cfg: EncoderConfig, lex: &Lexicon, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens = lex
            .visual_tokens()
            .into_iter()
            .map(|t| {
                let v = (0..cfg.object_dim)
                    .map(|k| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        if k == 0 && cfg.occupancy != 0.0 {
                            0.0
                        } else {
                            cfg.embedding_mean + z
                        }
                    })
                    .collect();
                (t, v)
            })
            .collect();
        let d = cfg.object_dim;
        let dv = cfg.visual_dim;
        let random = |g: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            let inputs = g * g * d;
            let scale = 1.0 / (inputs as f64).sqrt();
            (0..inputs * dv)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    scale * z
                })
                .collect()
        };
        let projections = if cfg.shared_projection {
            let g0 = cfg.grid_sizes[0];
            let base = random(g0, &mut rng);
            cfg.grid_sizes
                .iter()
                .map(|&g| {
                    let mut p = vec![0.0; g * g * d * dv];
                    for fine in 0..g0 * g0 {
                        let coarse_of = |i: usize| ((2 * i + 1) * g / (2 * g0)).min(g - 1);
                        let cell = coarse_of(fine / g0) * g + coarse_of(fine % g0);
                        for k in 0..d {
                            let src = &base[(fine * d + k) * dv..(fine * d + k + 1) * dv];
                            let dst = &mut p[(cell * d + k) * dv..(cell * d + k + 1) * dv];
                            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    }
                    p
                })
                .collect()
        } else {
            cfg.grid_sizes.iter().map(|&g| random(g, &mut rng)).collect()
        };
        Self {
            cfg,
            tokens,
            projections,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn scales(&self) -> usize {
        self.cfg.grid_sizes.len()
    }

    pub fn visual_dim(&self) -> usize {
        self.cfg.visual_dim
    }

    /// Sum of the category and attribute embeddings; unknown tokens contribute nothing.
    pub fn object_embedding(&self, o: &SceneObject) -> Vec<f64> {
        let mut e = vec![0.0; self.cfg.object_dim];
        e[0] = self.cfg.occupancy;
        for t in std::iter::once(&o.category).chain(&o.attributes) {
            if let Some(v) = self.tokens.get(t) {
                e.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            }
        }
        e
    }

    /// The raw `grid x grid x object_dim` descriptor of a patch at one scale.
    pub fn grid(&self, scene: &Scene, p: &BBox, scale: usize) -> Result<Vec<f64>, SceneError> {
        let g = *self.cfg.grid_sizes.get(scale).ok_or(SceneError::BadScale(scale + 1))?;
        let d = self.cfg.object_dim;
        let mut grid = vec![0.0; g * g * d];
        self.accumulate_grid(scene, p, g, |cell, w, emb| {
            for (slot, e) in grid[cell * d..(cell + 1) * d].iter_mut().zip(emb) {
                *slot += w * e;
            }
        });
        Ok(grid)
    }

    fn accumulate_grid(&self, scene: &Scene, p: &BBox, g: usize, mut f: impl FnMut(usize, f64, &[f64])) {
        let cw = p.width() / g as f64;
        let ch = p.height() / g as f64;
        let cell_area = cw * ch;
        for o in &scene.objects {
            let Some(inter) = o.bbox.intersection(p) else {
                continue;
            };
            let emb = self.object_embedding(o);
            let col = |x: f64| (((x - p.x_tl()) / cw).floor().max(0.0) as usize).min(g - 1);
            let row = |y: f64| (((y - p.y_tl()) / ch).floor().max(0.0) as usize).min(g - 1);
            for r in row(inter.y_tl())..=row(inter.y_br()) {
                let cy0 = p.y_tl() + r as f64 * ch;
                let hy = inter.y_br().min(cy0 + ch) - inter.y_tl().max(cy0);
                if hy <= 0.0 {
                    continue;
                }
                for c in col(inter.x_tl())..=col(inter.x_br()) {
                    let cx0 = p.x_tl() + c as f64 * cw;
                    let wx = inter.x_br().min(cx0 + cw) - inter.x_tl().max(cx0);
                    if wx <= 0.0 {
                        continue;
                    }
                    f(r * g + c, wx * hy / cell_area, &emb);
                }
            }
        }
    }

    /// Visual feature of patch `p` at `scale` (0-based; 0 is the finest grid).
    pub fn encode(&self, scene: &Scene, p: &BBox, scale: usize) -> Result<Vec<f64>, SceneError> {
        if !scene.frame.contains(p) {
            return Err(GeometryError::OutsideFrame(p.to_array(), scene.frame.width(), scene.frame.height()).into());
        }
        let g = *self.cfg.grid_sizes.get(scale).ok_or(SceneError::BadScale(scale + 1))?;
        let d = self.cfg.object_dim;
        let dv = self.cfg.visual_dim;
        let proj = &self.projections[scale];
        let mut out = vec![0.0; dv];
        self.accumulate_grid(scene, p, g, |cell, w, emb| {
            for (k, e) in emb.iter().enumerate() {
                let coef = w * e;
                let row = &proj[(cell * d + k) * dv..(cell * d + k + 1) * dv];
                out.iter_mut().zip(row).for_each(|(o, pr)| *o += coef * pr);
            }
        });
        Ok(out)
    }

    /// Largest absolute projection entry at a scale; bounds the encoding.
    pub fn projection_max_abs(&self, scale: usize) -> f64 {
        self.projections[scale].iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse_text;

    fn obj(id: u32, cat: &str, attrs: &[&str], b: [f64; 4]) -> SceneObject {
        SceneObject {
            id,
            category: cat.into(),
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
            bbox: BBox::try_from(b).unwrap(),
        }
    }

    fn scene(objects: Vec<SceneObject>) -> Scene {
        Scene {
            frame: ImageFrame::new(100.0, 100.0).unwrap(),
            objects,
            seed: 0,
        }
    }

    #[test]
    fn relation_examples() {
        let lex = Lexicon::default();
        let a = obj(0, "cat", &["red"], [5., 45., 15., 55.]);
        let b = obj(1, "dog", &[], [75., 45., 85., 55.]);
        assert!(relation_holds(&a, &b, "left", 1.0, &lex).unwrap());
        assert!(!relation_holds(&a, &b, "right", 1.0, &lex).unwrap());
        assert!(relation_holds(&b, &a, "right", 1.0, &lex).unwrap());
        let inner = obj(2, "ball", &[], [2., 2., 4., 4.]);
        let outer = obj(3, "box", &[], [0., 0., 10., 10.]);
        assert!(relation_holds(&inner, &outer, "inside", 1.0, &lex).unwrap());
        assert!(!relation_holds(&outer, &inner, "inside", 1.0, &lex).unwrap());
        assert!(relation_holds(&outer, &inner, "bigger", 1.0, &lex).unwrap());
        assert!(relation_holds(&inner, &outer, "smaller", 1.0, &lex).unwrap());
        let same = obj(4, "dog", &[], [5., 45., 15., 55.]);
        assert!(!relation_holds(&a, &same, "left", 1.0, &lex).unwrap());
        assert!(!relation_holds(&a, &same, "above", 1.0, &lex).unwrap());
        assert!(relation_holds(&a, &b, "red", 1.0, &lex).unwrap());
        assert!(!relation_holds(&b, &a, "red", 1.0, &lex).unwrap());
        assert_eq!(
            relation_holds(&a, &b, "holding", 1.0, &lex),
            Err(SceneError::UnknownRelation("holding".into()))
        );
    }

    #[test]
    fn margin_excludes_near_ties() {
        let lex = Lexicon::default();
        let a = obj(0, "cat", &[], [10., 10., 20., 20.]);
        let b = obj(1, "cat", &[], [10.5, 10., 20.5, 20.]);
        assert!(!relation_holds(&a, &b, "left", 1.0, &lex).unwrap());
        assert!(relation_holds(&a, &b, "left", 0.25, &lex).unwrap());
    }

    #[test]
    fn referents_follow_triads() {
        let lex = Lexicon::default();
        let s = scene(vec![
            obj(0, "cat", &["orange"], [10., 10., 30., 30.]),
            obj(1, "cat", &["black"], [60., 60., 80., 80.]),
            obj(2, "shelf", &["white"], [10., 50., 40., 70.]),
        ]);
        let r = |q: &str| referents(&s, &parse_text(q, &lex).unwrap(), 1.0, &lex).unwrap();
        assert_eq!(r("cat"), vec![0, 1]);
        assert_eq!(r("orange cat"), vec![0]);
        assert_eq!(r("cat above a shelf"), vec![0]);
        assert_eq!(r("cat below a shelf"), vec![1]);
        assert_eq!(r("left cat"), vec![0]);
        assert_eq!(r("bottom cat"), vec![1]);
        assert_eq!(r("left"), vec![0]);
        assert_eq!(r("shelf"), vec![2]);
        assert_eq!(r("cat above a white shelf"), vec![0]);
        assert_eq!(r("cat above a black shelf"), Vec::<u32>::new());
        assert!(referents(&s, &parse_text("cat on a shelf", &lex).unwrap(), 1.0, &lex).is_err());
    }

    #[test]
    fn cat_above_a_shelf_template() {
        let lex = Lexicon::default();
        let cfg = GenConfig {
            categories: vec!["cat".into(), "shelf".into()],
            relations: vec!["above".into()],
            templates: TemplateWeights {
                bare: 0.0,
                attribute: 0.0,
                location: 0.0,
                relation: 1.0,
                conjunction: 0.0,
            },
            min_objects: 3,
            max_objects: 3,
            ..GenConfig::default()
        };
        let (scene, q) = generate_scene(3, &cfg, &lex).unwrap();
        assert_eq!(q.gold_triads, vec![Triad::new("cat", "shelf", "above")]);
        assert!(q.text.ends_with("cat above a shelf") || q.text.ends_with("cat above the shelf"));
        assert_eq!(referents(&scene, &q.gold_triads, cfg.margin, &lex).unwrap(), vec![q.target_id]);
    }

    #[test]
    fn generation_is_deterministic_and_unique() {
        let lex = Lexicon::default();
        let cfg = GenConfig::default();
        for seed in 0..300 {
            let (s, q) = generate_scene(seed, &cfg, &lex).unwrap();
            assert_eq!((s.clone(), q.clone()), generate_scene(seed, &cfg, &lex).unwrap());
            assert_eq!(referents(&s, &q.gold_triads, cfg.margin, &lex).unwrap(), vec![q.target_id]);
            assert_eq!(parse_text(&q.text, &lex).unwrap(), q.gold_triads);
            let ids: BTreeSet<u32> = s.objects.iter().map(|o| o.id).collect();
            assert_eq!(ids.len(), s.objects.len());
            for (i, a) in s.objects.iter().enumerate() {
                assert!(s.frame.contains(&a.bbox));
                for b in &s.objects[i + 1..] {
                    assert!(iou(&a.bbox, &b.bbox) <= cfg.overlap_cap);
                }
            }
        }
    }

    #[test]
    fn generation_failure_reports_seed() {
        let lex = Lexicon::default();
        // One object per scene cannot support an attribute contrast.
        let cfg = GenConfig {
            max_retries: 5,
            frame_width: 40.0,
            frame_height: 40.0,
            min_side: 35.0,
            max_side: 35.0,
            min_objects: 2,
            max_objects: 2,
            templates: TemplateWeights {
                bare: 0.0,
                attribute: 1.0,
                location: 0.0,
                relation: 0.0,
                conjunction: 0.0,
            },
            ..GenConfig::default()
        };
        assert_eq!(
            generate_scene(42, &cfg, &lex),
            Err(SceneError::GenerationFailed { seed: 42, attempts: 5 })
        );
    }

    #[test]
    fn invalid_config_rejected() {
        let lex = Lexicon::default();
        let cfg = GenConfig {
            categories: vec!["zebra".into(), "cat".into()],
            ..GenConfig::default()
        };
        assert!(matches!(generate_scene(0, &cfg, &lex), Err(SceneError::InvalidConfig(_))));
        let cfg = GenConfig {
            relations: vec!["holding".into()],
            ..GenConfig::default()
        };
        assert!(matches!(generate_scene(0, &cfg, &lex), Err(SceneError::InvalidConfig(_))));
    }

    fn encoder() -> PatchEncoder {
        PatchEncoder::new(EncoderConfig::default(), &Lexicon::default(), 5)
    }

    #[test]
    fn empty_patch_encodes_to_zero() {
        let enc = encoder();
        let s = scene(vec![obj(0, "cat", &["red"], [70., 70., 90., 90.])]);
        let p = BBox::new(0., 0., 50., 50.).unwrap();
        for c in 0..3 {
            assert!(enc.encode(&s, &p, c).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn object_inside_one_cell() {
        let enc = encoder();
        // scale 1 on a full 100x100 frame: 8x8 cells of 12.5 units
        let o = obj(0, "cat", &["red", "small"], [26., 26., 36., 36.]);
        let s = scene(vec![o.clone()]);
        let grid = enc.grid(&s, &s.frame.full_box(), 0).unwrap();
        let emb = enc.object_embedding(&o);
        let weight = 100.0 / (12.5 * 12.5);
        let cell = 2 * 8 + 2;
        for (i, v) in grid.iter().enumerate() {
            if i / 16 == cell {
                assert!((v - weight * emb[i % 16]).abs() < 1e-12);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn encoder_is_linear_over_objects() {
        let enc = encoder();
        let a = vec![obj(0, "cat", &["red"], [3., 7., 41., 33.]), obj(1, "dog", &["blue"], [50., 10., 70., 80.])];
        let b = vec![obj(2, "ball", &["white", "big"], [20., 40., 66., 91.])];
        let p = BBox::new(5., 8., 90., 77.).unwrap();
        let both = scene(a.iter().chain(&b).cloned().collect());
        for c in 0..3 {
            let ea = enc.encode(&scene(a.clone()), &p, c).unwrap();
            let eb = enc.encode(&scene(b.clone()), &p, c).unwrap();
            let eab = enc.encode(&both, &p, c).unwrap();
            for i in 0..eab.len() {
                assert!((eab[i] - ea[i] - eb[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mirrored_target_changes_fine_encoding() {
        let enc = encoder();
        let left = scene(vec![obj(0, "cat", &["red"], [10., 40., 30., 60.]), obj(1, "dog", &[], [40., 40., 60., 60.])]);
        let right = scene(vec![obj(0, "cat", &["red"], [70., 40., 90., 60.]), obj(1, "dog", &[], [40., 40., 60., 60.])]);
        let p = left.frame.full_box();
        assert_ne!(enc.encode(&left, &p, 0).unwrap(), enc.encode(&right, &p, 0).unwrap());
    }

    #[test]
    fn encoding_bounded_and_deterministic() {
        let lex = Lexicon::default();
        let enc = encoder();
        let cfg = GenConfig::default();
        for seed in 0..50 {
            let (s, _) = generate_scene(seed, &cfg, &lex).unwrap();
            let max_emb = s
                .objects
                .iter()
                .flat_map(|o| enc.object_embedding(o))
                .fold(0.0f64, |m, v| m.max(v.abs()));
            for c in 0..3 {
                let g = enc.config().grid_sizes[c];
                let v = enc.encode(&s, &s.frame.full_box(), c).unwrap();
                assert_eq!(v, enc.encode(&s, &s.frame.full_box(), c).unwrap());
                // each object spreads unit weight over at most g*g*object_dim inputs
                let bound = s.objects.len() as f64 * max_emb * enc.projection_max_abs(c) * (g * g * 16) as f64;
                assert!(v.iter().all(|x| x.is_finite() && x.abs() <= bound));
            }
        }
        assert!(matches!(
            enc.encode(&scene(vec![]), &BBox::new(0., 0., 10., 10.).unwrap(), 3),
            Err(SceneError::BadScale(4))
        ));
    }
}
