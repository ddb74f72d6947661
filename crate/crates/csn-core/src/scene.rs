//! Procedural scenes with ground-truth part masks.
//!
//! A scene places a few non-overlapping parts (distinguished by shape) on a
//! noisy gray background, each rendered with a pattern (distinguished by
//! color/texture). Part identity lives entirely in geometry and pattern
//! identity entirely in appearance, so the two concepts are visually
//! orthogonal and recombinable. Attribute (i, j) is true for a scene exactly
//! when part i appears with pattern j.
//!
//! Generation is deterministic: scene k of a dataset draws everything from
//! seed `dataset_seed ^ k`, and rendering noise comes from a separate stream
//! of the same per-scene seed.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::registry::{AttributeSpec, Concept, ConceptRegistry};
use crate::tensor::Tensor;
use crate::train::LabeledExample;
use crate::Result;

/// Shape vocabulary for parts. At most four parts are supported, one per
/// shape, so part identity is always visually distinct.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartShape {
    Square,
    Disk,
    Triangle,
    Cross,
}

const PART_SHAPES: [PartShape; 4] = [
    PartShape::Square,
    PartShape::Disk,
    PartShape::Triangle,
    PartShape::Cross,
];

const PART_NAMES: [&str; 4] = ["square", "disk", "triangle", "cross"];

/// Pattern vocabulary. Solid patterns paint one color; stripes alternate
/// shape rows blue/white; checker alternates pixel parity yellow/white.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    SolidRed,
    SolidGreen,
    Stripes,
    Checker,
}

const PATTERN_KINDS: [PatternKind; 4] = [
    PatternKind::SolidRed,
    PatternKind::SolidGreen,
    PatternKind::Stripes,
    PatternKind::Checker,
];

const PATTERN_NAMES: [&str; 4] = ["red", "green", "stripes", "checker"];

const WHITE: [f64; 3] = [1.0, 1.0, 1.0];

/// Inclusive range of parts placed per scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlacementRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct GenConfig {
    pub image_size: usize,
    pub num_parts: usize,
    pub num_patterns: usize,
    pub parts_per_scene: PlacementRange,
    pub part_size: usize,
    pub background_level: f64,
    pub noise_amplitude: f64,
    /// Per-attribute cap on retained positive labels; attributes absent from
    /// the map are uncapped.
    pub positives_per_attribute: BTreeMap<usize, usize>,
    /// (part, pattern) pairs whose labels are withheld from training output.
    pub holdout_attributes: BTreeSet<(usize, usize)>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            image_size: 32,
            num_parts: 4,
            num_patterns: 4,
            parts_per_scene: PlacementRange { min: 2, max: 3 },
            part_size: 7,
            background_level: 0.5,
            noise_amplitude: 0.05,
            positives_per_attribute: BTreeMap::new(),
            holdout_attributes: BTreeSet::new(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_parts == 0 || self.num_parts > PART_SHAPES.len() {
            return Err(Error::InvalidConfig(format!(
                "num_parts must be 1..={}, got {}",
                PART_SHAPES.len(),
                self.num_parts
            )));
        }
        if self.num_patterns == 0 || self.num_patterns > PATTERN_KINDS.len() {
            return Err(Error::InvalidConfig(format!(
                "num_patterns must be 1..={}, got {}",
                PATTERN_KINDS.len(),
                self.num_patterns
            )));
        }
        let r = self.parts_per_scene;
        if r.min == 0 || r.min > r.max || r.max > self.num_parts {
            return Err(Error::InvalidConfig(format!(
                "parts_per_scene {}..{} invalid for {} parts",
                r.min, r.max, self.num_parts
            )));
        }
        if self.part_size == 0 || self.part_size > self.image_size {
            return Err(Error::InvalidConfig(format!(
                "part_size {} does not fit image of size {}",
                self.part_size, self.image_size
            )));
        }
        // a sqrt(max) x sqrt(max) arrangement of parts must fit
        let side = ceil_sqrt(r.max);
        if self.part_size * side > self.image_size {
            return Err(Error::InvalidConfig(format!(
                "{} parts of size {} cannot be placed in a {}-pixel image",
                r.max, self.part_size, self.image_size
            )));
        }
        if !(0.0..=1.0).contains(&self.background_level)
            || self.noise_amplitude < 0.0
            || self.background_level - self.noise_amplitude < 0.0
            || self.background_level + self.noise_amplitude > 1.0
        {
            return Err(Error::InvalidConfig(
                "background level with noise must stay within [0, 1]".into(),
            ));
        }
        let n_attrs = self.num_parts * self.num_patterns;
        for (&attr, _) in &self.positives_per_attribute {
            if attr >= n_attrs {
                return Err(Error::UnknownId { what: "attribute", id: attr });
            }
        }
        for &(part, pattern) in &self.holdout_attributes {
            if part >= self.num_parts {
                return Err(Error::UnknownId { what: "part", id: part });
            }
            if pattern >= self.num_patterns {
                return Err(Error::UnknownId { what: "pattern", id: pattern });
            }
        }
        Ok(())
    }

    /// The full registry of this configuration: every (part, pattern) pair,
    /// with attribute id `part * num_patterns + pattern`.
    pub fn registry(&self) -> ConceptRegistry {
        let parts = (0..self.num_parts)
            .map(|id| Concept { id, name: PART_NAMES[id].to_string() })
            .collect();
        let patterns = (0..self.num_patterns)
            .map(|id| Concept { id, name: PATTERN_NAMES[id].to_string() })
            .collect();
        let mut attributes = Vec::new();
        for part in 0..self.num_parts {
            for pattern in 0..self.num_patterns {
                attributes.push(AttributeSpec {
                    id: part * self.num_patterns + pattern,
                    part,
                    pattern,
                    name: format!("{}_{}", PART_NAMES[part], PATTERN_NAMES[pattern]),
                });
            }
        }
        ConceptRegistry { parts, patterns, attributes }
    }
}

fn ceil_sqrt(n: usize) -> usize {
    let mut s = 0;
    while s * s < n {
        s += 1;
    }
    s
}

/// One placed part: its concepts and the top-left pixel of its bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Placement {
    pub part: usize,
    pub pattern: usize,
    pub x: usize,
    pub y: usize,
}

/// Ground truth of one scene.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SceneSpec {
    pub seed: u64,
    pub placements: Vec<Placement>,
}

const PLACEMENT_ATTEMPTS: usize = 1000;

/// Draw a scene: part count, distinct parts, independent patterns, and
/// rejection-sampled non-overlapping positions. `seed` is recorded on the
/// spec so rendering can derive its noise from it.
pub fn sample_scene(config: &GenConfig, rng: &mut impl Rng, seed: u64) -> Result<SceneSpec> {
    let count = rng.gen_range(config.parts_per_scene.min..=config.parts_per_scene.max);
    let parts = rand::seq::index::sample(rng, config.num_parts, count);
    let limit = config.image_size - config.part_size;
    let mut placements: Vec<Placement> = Vec::with_capacity(count);
    for part in parts {
        let pattern = rng.gen_range(0..config.num_patterns);
        let mut attempts = 0;
        let (x, y) = loop {
            attempts += 1;
            if attempts > PLACEMENT_ATTEMPTS {
                return Err(Error::Generation(format!(
                    "no non-overlapping position for part {part} after {PLACEMENT_ATTEMPTS} attempts; config too dense"
                )));
            }
            let x = rng.gen_range(0..=limit);
            let y = rng.gen_range(0..=limit);
            let p = config.part_size;
            let clear = placements
                .iter()
                .all(|q| x + p <= q.x || q.x + p <= x || y + p <= q.y || q.y + p <= y);
            if clear {
                break (x, y);
            }
        };
        placements.push(Placement { part, pattern, x, y });
    }
    Ok(SceneSpec { seed, placements })
}

/// Convenience: sample with a rng built from the seed itself.
pub fn sample_scene_seeded(config: &GenConfig, seed: u64) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_scene(config, &mut rng, seed)
}

fn pattern_rgb(pattern: PatternKind, local_row: usize, px: usize, py: usize) -> [f64; 3] {
    match pattern {
        PatternKind::SolidRed => [1.0, 0.0, 0.0],
        PatternKind::SolidGreen => [0.0, 1.0, 0.0],
        PatternKind::Stripes => {
            if local_row % 2 == 0 {
                [0.0, 0.0, 1.0]
            } else {
                WHITE
            }
        }
        PatternKind::Checker => {
            if (px + py) % 2 == 0 {
                [1.0, 1.0, 0.0]
            } else {
                WHITE
            }
        }
    }
}

/// Local pixel offsets of a shape within its `p x p` bounding box.
fn shape_offsets(shape: PartShape, p: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    match shape {
        PartShape::Square => {
            for dy in 0..p {
                for dx in 0..p {
                    out.push((dx, dy));
                }
            }
        }
        PartShape::Disk => {
            let c = (p as f64 - 1.0) / 2.0;
            let r2 = (p as f64 / 2.0) * (p as f64 / 2.0);
            for dy in 0..p {
                for dx in 0..p {
                    let (fx, fy) = (dx as f64 - c, dy as f64 - c);
                    if fx * fx + fy * fy <= r2 {
                        out.push((dx, dy));
                    }
                }
            }
        }
        PartShape::Triangle => {
            // lower-left half of the box, diagonal included
            for dy in 0..p {
                for dx in 0..=dy {
                    out.push((dx, dy));
                }
            }
        }
        PartShape::Cross => {
            let band = p.div_ceil(3);
            let start = (p - band) / 2;
            for dy in 0..p {
                for dx in 0..p {
                    let in_row = dy >= start && dy < start + band;
                    let in_col = dx >= start && dx < start + band;
                    if in_row || in_col {
                        out.push((dx, dy));
                    }
                }
            }
        }
    }
    out
}

/// Rasterize a scene to a `3 x S x S` tensor with values in [0, 1].
/// Deterministic per (spec, config): noise comes from stream 1 of the
/// scene's seed, leaving stream 0 to the sampling that made the spec.
pub fn render_scene(spec: &SceneSpec, config: &GenConfig) -> Result<Tensor> {
    config.validate()?;
    let s = config.image_size;
    let mut data = vec![0.0; 3 * s * s];
    let mut noise = ChaCha8Rng::seed_from_u64(spec.seed);
    noise.set_stream(1);
    for py in 0..s {
        for px in 0..s {
            let level = if config.noise_amplitude > 0.0 {
                config.background_level
                    + noise.gen_range(-config.noise_amplitude..config.noise_amplitude)
            } else {
                config.background_level
            };
            for ch in 0..3 {
                data[ch * s * s + py * s + px] = level;
            }
        }
    }
    for placement in &spec.placements {
        if placement.part >= config.num_parts {
            return Err(Error::UnknownId { what: "part", id: placement.part });
        }
        if placement.pattern >= config.num_patterns {
            return Err(Error::UnknownId { what: "pattern", id: placement.pattern });
        }
        let shape = PART_SHAPES[placement.part];
        let kind = PATTERN_KINDS[placement.pattern];
        for (dx, dy) in shape_offsets(shape, config.part_size) {
            let (px, py) = (placement.x + dx, placement.y + dy);
            let rgb = pattern_rgb(kind, dy, px, py);
            for ch in 0..3 {
                data[ch * s * s + py * s + px] = rgb[ch];
            }
        }
    }
    Tensor::from_vec(vec![3, s, s], data)
}

/// Pixel-level binary mask over an `S x S` image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub size: usize,
    pub cells: Vec<bool>,
}

impl PixelMask {
    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Downsample to an `h x w` grid: a grid cell is marked when at least a
    /// quarter of its pixels are masked.
    pub fn to_grid(&self, h: usize, w: usize) -> Vec<bool> {
        let s = self.size;
        let mut out = Vec::with_capacity(h * w);
        for gy in 0..h {
            let y0 = gy * s / h;
            let y1 = (gy + 1) * s / h;
            for gx in 0..w {
                let x0 = gx * s / w;
                let x1 = (gx + 1) * s / w;
                let total = (y1 - y0) * (x1 - x0);
                let mut hit = 0;
                for py in y0..y1 {
                    for px in x0..x1 {
                        if self.cells[py * s + px] {
                            hit += 1;
                        }
                    }
                }
                out.push(4 * hit >= total);
            }
        }
        out
    }
}

/// Exact rasterized pixels of `part` in this scene; all-false when the part
/// is absent.
pub fn ground_truth_mask(spec: &SceneSpec, config: &GenConfig, part: usize) -> Result<PixelMask> {
    if part >= config.num_parts {
        return Err(Error::UnknownId { what: "part", id: part });
    }
    let s = config.image_size;
    let mut cells = vec![false; s * s];
    if let Some(placement) = spec.placements.iter().find(|p| p.part == part) {
        let shape = PART_SHAPES[placement.part];
        for (dx, dy) in shape_offsets(shape, config.part_size) {
            cells[(placement.y + dy) * s + (placement.x + dx)] = true;
        }
    }
    Ok(PixelMask { size: s, cells })
}

/// Labels of a scene for every attribute in `registry`: true exactly when
/// the matching (part, pattern) placement exists.
pub fn scene_labels(spec: &SceneSpec, registry: &ConceptRegistry) -> Vec<(usize, bool)> {
    registry
        .attributes
        .iter()
        .map(|a| {
            let present = spec
                .placements
                .iter()
                .any(|p| p.part == a.part && p.pattern == a.pattern);
            (a.id, present)
        })
        .collect()
}

/// A generated dataset held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub registry: ConceptRegistry,
    pub scenes: Vec<SceneSpec>,
    pub images: Vec<Tensor>,
    /// Per scene: labels surviving scarcity caps and holdout suppression.
    pub train_labels: Vec<Vec<(usize, bool)>>,
    /// Per scene: the complete labels.
    pub full_labels: Vec<Vec<(usize, bool)>>,
}

impl Dataset {
    pub fn train_examples(&self) -> Vec<LabeledExample> {
        flatten_labels(&self.train_labels)
    }

    pub fn full_examples(&self) -> Vec<LabeledExample> {
        flatten_labels(&self.full_labels)
    }
}

fn flatten_labels(labels: &[Vec<(usize, bool)>]) -> Vec<LabeledExample> {
    let mut out = Vec::new();
    for (image, scene) in labels.iter().enumerate() {
        for &(attribute, label) in scene {
            out.push(LabeledExample { image, attribute, label });
        }
    }
    out
}

/// Sample and render `n_scenes` scenes. Scene `k` uses seed `seed ^ k`, so
/// any subset can be regenerated independently. Positive labels beyond an
/// attribute's cap are dropped in scene order (the label becomes absent, not
/// negative); labels of held-out attributes are dropped entirely from the
/// training view but stay in the full view.
pub fn build_dataset(config: &GenConfig, n_scenes: usize, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let registry = config.registry();
    let holdout_ids: BTreeSet<usize> = registry
        .attributes
        .iter()
        .filter(|a| config.holdout_attributes.contains(&(a.part, a.pattern)))
        .map(|a| a.id)
        .collect();

    let mut scenes = Vec::with_capacity(n_scenes);
    let mut images = Vec::with_capacity(n_scenes);
    let mut full_labels = Vec::with_capacity(n_scenes);
    let mut train_labels = Vec::with_capacity(n_scenes);
    let mut positives_kept: BTreeMap<usize, usize> = BTreeMap::new();

    for index in 0..n_scenes {
        let spec = sample_scene_seeded(config, seed ^ index as u64)?;
        let image = render_scene(&spec, config)?;
        let labels = scene_labels(&spec, &registry);

        let mut kept = Vec::with_capacity(labels.len());
        for &(attr, label) in &labels {
            if holdout_ids.contains(&attr) {
                continue;
            }
            if label {
                let cap = config.positives_per_attribute.get(&attr).copied();
                let seen = positives_kept.entry(attr).or_insert(0);
                if let Some(cap) = cap {
                    if *seen >= cap {
                        continue;
                    }
                }
                *seen += 1;
            }
            kept.push((attr, label));
        }

        scenes.push(spec);
        images.push(image);
        full_labels.push(labels);
        train_labels.push(kept);
    }

    Ok(Dataset {
        registry,
        scenes,
        images,
        train_labels,
        full_labels,
    })
}
