//! Attention head with shared part and pattern concepts.
//!
//! Each attribute routes through a part vector `v` (where to look) and a
//! pattern classifier `w` (what to recognize). The sharing mode decides how
//! attributes map onto those parameters:
//!
//! * `None`: every attribute owns a private `(v, w)` pair,
//! * `PartOnly`: attributes with the same part share `v`,
//! * `PartAndPattern`: attributes also share `w` per pattern,
//! * `Soft`: like `PartAndPattern`, but each attribute carries a learnable
//!   weight vector mixing the pre-softmax attention maps of *all* parts.
//!
//! Attention over the feature grid is `softmax(Q v)` taken jointly over all
//! `hw` cells, the pooled descriptor is the attention-weighted feature map
//! averaged over cells (so a one-hot attention yields `Q_row / hw`), and the
//! binary prediction is `softmax(w^T descriptor)` with no bias term.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use alloc::vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::backbone::FeatureMap;
use crate::error::Error;
use crate::math;
use crate::registry::{AttributeSpec, ConceptRegistry};
use crate::tape::{Axis, NodeId, Tape};
use crate::tensor::Tensor;
use crate::Result;

/// How attributes share head parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SharingMode {
    None,
    PartOnly,
    PartAndPattern,
    Soft,
}

/// Initialization of the soft mixing weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SoftInit {
    /// 1 at the attribute's own part, 0 elsewhere.
    OneHot,
    /// All entries 1; encodes no prior about which part an attribute uses.
    AllOnes,
}

/// Trainable head parameters plus the attribute-to-slot routing tables.
///
/// `part_vectors[slot]` is `d x 1`; `pattern_classifiers[slot]` is `d x 2`
/// with column 0 scoring "absent" and column 1 "present". `soft_weights`
/// holds one `m x 1` tensor per attribute (m = number of parts) and is
/// empty outside `Soft` mode. Routing tables are a pure function of
/// (registry, mode), so parameters can be detached and reattached.
#[derive(Debug, Clone, PartialEq)]
pub struct CsnHeadParams {
    pub mode: SharingMode,
    pub part_vectors: Vec<Tensor>,
    pub pattern_classifiers: Vec<Tensor>,
    pub soft_weights: Vec<Tensor>,
    part_slot: BTreeMap<usize, usize>,
    pattern_slot: BTreeMap<usize, usize>,
    soft_slot: BTreeMap<usize, usize>,
}

const PART_INIT_STDDEV: f64 = 0.1;

fn glorot_classifier(d: usize, rng: &mut impl Rng) -> Tensor {
    let a = math::sqrt(6.0 / (d as f64 + 2.0));
    let data: Vec<f64> = (0..d * 2).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::from_vec(vec![d, 2], data).expect("classifier shape")
}

fn normal_vector(d: usize, rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(0.0, PART_INIT_STDDEV).expect("valid stddev");
    let data: Vec<f64> = (0..d).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(vec![d, 1], data).expect("vector shape")
}

impl CsnHeadParams {
    /// Freshly initialized parameters for `registry` under `mode`.
    ///
    /// Part vectors are drawn before classifiers, both in slot order, so two
    /// modes with the same slot layout and seed get identical tensors; soft
    /// weights are deterministic and consume no randomness.
    pub fn init(
        registry: &ConceptRegistry,
        mode: SharingMode,
        soft_init: SoftInit,
        d: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        registry.validate()?;
        let (part_slot, pattern_slot, soft_slot, n_parts, n_patterns) =
            slot_layout(registry, mode);
        let part_vectors: Vec<Tensor> = (0..n_parts).map(|_| normal_vector(d, rng)).collect();
        let pattern_classifiers: Vec<Tensor> =
            (0..n_patterns).map(|_| glorot_classifier(d, rng)).collect();
        let soft_weights = if mode == SharingMode::Soft {
            let m = registry.parts.len();
            registry
                .attributes
                .iter()
                .map(|a| match soft_init {
                    SoftInit::OneHot => {
                        let mut data = vec![0.0; m];
                        data[a.part] = 1.0;
                        Tensor::from_vec(vec![m, 1], data).expect("soft shape")
                    }
                    SoftInit::AllOnes => Tensor::filled(vec![m, 1], 1.0),
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(CsnHeadParams {
            mode,
            part_vectors,
            pattern_classifiers,
            soft_weights,
            part_slot,
            pattern_slot,
            soft_slot,
        })
    }

    /// Reattach routing tables to existing tensors (checkpoint load).
    pub fn from_tensors(
        registry: &ConceptRegistry,
        mode: SharingMode,
        part_vectors: Vec<Tensor>,
        pattern_classifiers: Vec<Tensor>,
        soft_weights: Vec<Tensor>,
    ) -> Result<Self> {
        let (part_slot, pattern_slot, soft_slot, n_parts, n_patterns) =
            slot_layout(registry, mode);
        if part_vectors.len() != n_parts || pattern_classifiers.len() != n_patterns {
            return Err(Error::InvalidConfig(format!(
                "head tensors do not match registry: {} part vectors (want {}), {} classifiers (want {})",
                part_vectors.len(),
                n_parts,
                pattern_classifiers.len(),
                n_patterns
            )));
        }
        let want_soft = if mode == SharingMode::Soft {
            registry.attributes.len()
        } else {
            0
        };
        if soft_weights.len() != want_soft {
            return Err(Error::InvalidConfig(format!(
                "expected {} soft weight vectors, got {}",
                want_soft,
                soft_weights.len()
            )));
        }
        Ok(CsnHeadParams {
            mode,
            part_vectors,
            pattern_classifiers,
            soft_weights,
            part_slot,
            pattern_slot,
            soft_slot,
        })
    }

    pub fn part_slot(&self, attribute: usize) -> Result<usize> {
        self.part_slot
            .get(&attribute)
            .copied()
            .ok_or(Error::UnknownId { what: "attribute", id: attribute })
    }

    pub fn pattern_slot(&self, attribute: usize) -> Result<usize> {
        self.pattern_slot
            .get(&attribute)
            .copied()
            .ok_or(Error::UnknownId { what: "attribute", id: attribute })
    }

    pub fn soft_slot(&self, attribute: usize) -> Result<usize> {
        self.soft_slot
            .get(&attribute)
            .copied()
            .ok_or(Error::UnknownId { what: "attribute", id: attribute })
    }
}

/// Slot layout per mode; shared slots are indexed directly by part/pattern
/// id, private slots by attribute position in registry order.
fn slot_layout(
    registry: &ConceptRegistry,
    mode: SharingMode,
) -> (
    BTreeMap<usize, usize>,
    BTreeMap<usize, usize>,
    BTreeMap<usize, usize>,
    usize,
    usize,
) {
    let mut part_slot = BTreeMap::new();
    let mut pattern_slot = BTreeMap::new();
    let mut soft_slot = BTreeMap::new();
    let (n_parts, n_patterns);
    match mode {
        SharingMode::None => {
            for (idx, a) in registry.attributes.iter().enumerate() {
                part_slot.insert(a.id, idx);
                pattern_slot.insert(a.id, idx);
            }
            n_parts = registry.attributes.len();
            n_patterns = registry.attributes.len();
        }
        SharingMode::PartOnly => {
            for (idx, a) in registry.attributes.iter().enumerate() {
                part_slot.insert(a.id, a.part);
                pattern_slot.insert(a.id, idx);
            }
            n_parts = registry.parts.len();
            n_patterns = registry.attributes.len();
        }
        SharingMode::PartAndPattern | SharingMode::Soft => {
            for (idx, a) in registry.attributes.iter().enumerate() {
                part_slot.insert(a.id, a.part);
                pattern_slot.insert(a.id, a.pattern);
                if mode == SharingMode::Soft {
                    soft_slot.insert(a.id, idx);
                }
            }
            n_parts = registry.parts.len();
            n_patterns = registry.patterns.len();
        }
    }
    (part_slot, pattern_slot, soft_slot, n_parts, n_patterns)
}

/// A normalized spatial attention map: nonnegative weights over grid cells
/// summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub weights: Tensor,
    pub h: usize,
    pub w: usize,
}

impl AttentionMap {
    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    /// Check the probability-distribution invariant.
    pub fn validate(&self) -> Result<()> {
        if self.weights.shape() != [self.h * self.w, 1] {
            return Err(Error::ShapeMismatch {
                op: "attention_map",
                lhs: self.weights.shape().to_vec(),
                rhs: vec![self.h * self.w, 1],
            });
        }
        if self.weights.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Contract("attention weights must be nonnegative".into()));
        }
        let sum: f64 = self.weights.data().iter().sum();
        if math::abs(sum - 1.0) > 1e-9 {
            return Err(Error::Contract(format!(
                "attention weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

// ── Tape-level building blocks ────────────────────────────────────────

/// Inner-product map `Q v`: one logit per grid cell.
pub fn attention_logits(tape: &mut Tape, q: &FeatureMap, v: NodeId) -> Result<NodeId> {
    tape.matmul(q.node, v)
}

/// Spatial softmax over all cells of a column of logits.
pub fn attention_normalize(tape: &mut Tape, logits: NodeId) -> Result<NodeId> {
    let row = tape.transpose(logits)?;
    let sm = tape.softmax_rows(row)?;
    tape.transpose(sm)
}

/// Mixed attention logits of all parts: `(Q [v_0 .. v_{m-1}]) t`.
pub fn soft_attention_logits(
    tape: &mut Tape,
    q: &FeatureMap,
    part_vectors: &[NodeId],
    t: NodeId,
) -> Result<NodeId> {
    if tape.value(t).shape() != [part_vectors.len(), 1] {
        return Err(Error::ShapeMismatch {
            op: "soft_attention",
            lhs: tape.value(t).shape().to_vec(),
            rhs: vec![part_vectors.len(), 1],
        });
    }
    let stacked = tape.concat_cols(part_vectors)?;
    let all_maps = tape.matmul(q.node, stacked)?;
    tape.matmul(all_maps, t)
}

/// Attention-weighted feature map pooled over cells: `mean_r(att_r * Q_r)`,
/// a `d x 1` descriptor. Keeps the literal `1/hw` average so a one-hot
/// attention gives `Q_r / hw`.
pub fn attend_and_pool(tape: &mut Tape, q: &FeatureMap, attention: NodeId) -> Result<NodeId> {
    let weighted = tape.broadcast_mul_rows(q.node, attention)?;
    tape.mean_over_axis(weighted, Axis::Rows)
}

/// Normalized attention node for one attribute under the head's mode.
pub fn attribute_attention(
    tape: &mut Tape,
    q: &FeatureMap,
    head: &CsnHeadParams,
    nodes: &HeadNodes,
    attribute: usize,
) -> Result<NodeId> {
    let logits = match head.mode {
        SharingMode::Soft => {
            let t = nodes.soft[head.soft_slot(attribute)?];
            soft_attention_logits(tape, q, &nodes.parts, t)?
        }
        _ => {
            let v = nodes.parts[head.part_slot(attribute)?];
            attention_logits(tape, q, v)?
        }
    };
    attention_normalize(tape, logits)
}

/// Two-class logits (absent, present) for one attribute: `w^T q_pooled`.
pub fn attribute_logits(
    tape: &mut Tape,
    q: &FeatureMap,
    head: &CsnHeadParams,
    nodes: &HeadNodes,
    attribute: usize,
) -> Result<NodeId> {
    let att = attribute_attention(tape, q, head, nodes, attribute)?;
    let descriptor = attend_and_pool(tape, q, att)?;
    let w = nodes.patterns[head.pattern_slot(attribute)?];
    let wt = tape.transpose(w)?;
    tape.matmul(wt, descriptor)
}

/// Probability pair `(p_absent, p_present)` from an attribute's logits node.
pub fn probabilities(tape: &mut Tape, logits: NodeId) -> Result<(f64, f64)> {
    let row = tape.transpose(logits)?;
    let sm = tape.softmax_rows(row)?;
    let v = tape.value(sm);
    Ok((v.data()[0], v.data()[1]))
}

/// Leaf nodes of the head parameters on some tape, in slot order.
pub struct HeadNodes {
    pub parts: Vec<NodeId>,
    pub patterns: Vec<NodeId>,
    pub soft: Vec<NodeId>,
}

impl HeadNodes {
    /// Register every head tensor as a leaf.
    pub fn register(tape: &mut Tape, head: &CsnHeadParams) -> HeadNodes {
        HeadNodes {
            parts: head.part_vectors.iter().map(|t| tape.leaf(t.clone())).collect(),
            patterns: head
                .pattern_classifiers
                .iter()
                .map(|t| tape.leaf(t.clone()))
                .collect(),
            soft: head.soft_weights.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }
}

/// Register a new attribute that binds the already-trained part `part` and
/// pattern `pattern`. No parameters are created or modified; the new head is
/// the routing entry alone. Requires full sharing, an unused (part, pattern)
/// pair, and at least one existing attribute covering each concept.
pub fn compose_zero_shot(
    registry: &mut ConceptRegistry,
    head: &mut CsnHeadParams,
    part: usize,
    pattern: usize,
) -> Result<AttributeSpec> {
    if head.mode != SharingMode::PartAndPattern {
        return Err(Error::Composition(
            "zero-shot composition needs part_and_pattern sharing".into(),
        ));
    }
    if part >= registry.parts.len() {
        return Err(Error::UnknownId { what: "part", id: part });
    }
    if pattern >= registry.patterns.len() {
        return Err(Error::UnknownId { what: "pattern", id: pattern });
    }
    if registry.has_attribute(part, pattern) {
        return Err(Error::Composition(format!(
            "attribute for part {part} and pattern {pattern} is already registered"
        )));
    }
    let part_covered = registry.attributes_with_part(part).next().is_some();
    let pattern_covered = registry.attributes_with_pattern(pattern).next().is_some();
    if !part_covered || !pattern_covered {
        let mut missing = Vec::new();
        if !part_covered {
            missing.push(format!("part {} ({})", part, registry.parts[part].name));
        }
        if !pattern_covered {
            missing.push(format!("pattern {} ({})", pattern, registry.patterns[pattern].name));
        }
        return Err(Error::Composition(format!(
            "no training coverage for {}",
            missing.join(" and ")
        )));
    }
    let id = registry.next_attribute_id();
    let name: String = format!(
        "{}_{}",
        registry.parts[part].name, registry.patterns[pattern].name
    );
    let spec = AttributeSpec { id, part, pattern, name };
    registry.attributes.push(spec.clone());
    head.part_slot.insert(id, part);
    head.pattern_slot.insert(id, pattern);
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::string::ToString;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_q(tape: &mut Tape, rows: &[&[f64]], h: usize, w: usize) -> FeatureMap {
        let t = Tensor::from_rows(rows).unwrap();
        let d = t.cols();
        let node = tape.leaf(t);
        FeatureMap { node, h, w, d }
    }

    fn registry_2x2() -> ConceptRegistry {
        ConceptRegistry {
            parts: alloc::vec![
                crate::registry::Concept { id: 0, name: "square".to_string() },
                crate::registry::Concept { id: 1, name: "disk".to_string() },
            ],
            patterns: alloc::vec![
                crate::registry::Concept { id: 0, name: "red".to_string() },
                crate::registry::Concept { id: 1, name: "green".to_string() },
            ],
            attributes: alloc::vec![
                AttributeSpec { id: 0, part: 0, pattern: 1, name: "square_green".to_string() },
                AttributeSpec { id: 1, part: 1, pattern: 0, name: "disk_red".to_string() },
            ],
        }
    }

    #[test]
    fn attention_logits_are_inner_products() {
        let mut tape = Tape::new();
        let q = grid_q(&mut tape, &[&[1.0, 0.0], &[0.0, 1.0], &[2.0, 2.0]], 3, 1);
        let v = tape.leaf(Tensor::column(&[1.0, -1.0]));
        let logits = attention_logits(&mut tape, &q, v).unwrap();
        assert_eq!(tape.value(logits).data(), &[1.0, -1.0, 0.0]);
    }

    #[test]
    fn zero_vector_or_zero_map_gives_zero_logits() {
        let mut tape = Tape::new();
        let q = grid_q(&mut tape, &[&[1.0, 2.0], &[3.0, 4.0]], 2, 1);
        let v0 = tape.leaf(Tensor::zeros(alloc::vec![2, 1]));
        let l = attention_logits(&mut tape, &q, v0).unwrap();
        assert_eq!(tape.value(l).data(), &[0.0, 0.0]);

        let qz = grid_q(&mut tape, &[&[0.0, 0.0], &[0.0, 0.0]], 2, 1);
        let v = tape.leaf(Tensor::column(&[5.0, -7.0]));
        let l2 = attention_logits(&mut tape, &qz, v).unwrap();
        assert_eq!(tape.value(l2).data(), &[0.0, 0.0]);
    }

    #[test]
    fn normalize_uniform_and_ratios() {
        let mut tape = Tape::new();
        let zeros = tape.leaf(Tensor::column(&[0.0, 0.0, 0.0, 0.0]));
        let att = attention_normalize(&mut tape, zeros).unwrap();
        for &v in tape.value(att).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }

        let l = tape.leaf(Tensor::column(&[0.0, 0.0, math::ln(2.0)]));
        let att2 = attention_normalize(&mut tape, l).unwrap();
        let d = tape.value(att2).data();
        assert!((d[0] - 0.25).abs() < 1e-12);
        assert!((d[1] - 0.25).abs() < 1e-12);
        assert!((d[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn normalize_shift_invariant() {
        let mut tape = Tape::new();
        let base = [0.3, -1.2, 2.0, 0.0];
        let l = tape.leaf(Tensor::column(&base));
        let a = attention_normalize(&mut tape, l).unwrap();
        let shifted: alloc::vec::Vec<f64> = base.iter().map(|v| v + 123.456).collect();
        let l2 = tape.leaf(Tensor::column(&shifted));
        let b = attention_normalize(&mut tape, l2).unwrap();
        for (x, y) in tape.value(a).data().iter().zip(tape.value(b).data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn pool_matches_hand_arithmetic() {
        // Q rows [[1,2],[3,4]], att one-hot on row 0, hw = 2 -> [0.5, 1.0]
        let mut tape = Tape::new();
        let q = grid_q(&mut tape, &[&[1.0, 2.0], &[3.0, 4.0]], 2, 1);
        let att = tape.leaf(Tensor::column(&[1.0, 0.0]));
        let desc = attend_and_pool(&mut tape, &q, att).unwrap();
        assert_eq!(tape.value(desc).data(), &[0.5, 1.0]);
    }

    #[test]
    fn pool_uniform_attention() {
        let mut tape = Tape::new();
        let q = grid_q(&mut tape, &[&[2.0, 0.0], &[4.0, 8.0]], 2, 1);
        let att = tape.leaf(Tensor::column(&[0.5, 0.5]));
        let desc = attend_and_pool(&mut tape, &q, att).unwrap();
        // mean(Q) / hw = [3, 4] / 2
        assert_eq!(tape.value(desc).data(), &[1.5, 2.0]);
    }

    #[test]
    fn soft_one_hot_matches_hard_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::new();
        let qdata: alloc::vec::Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let qt = Tensor::from_vec(alloc::vec![4, 2], qdata).unwrap();
        let node = tape.leaf(qt);
        let q = FeatureMap { node, h: 2, w: 2, d: 2 };
        let v0 = tape.leaf(Tensor::column(&[0.3, -0.7]));
        let v1 = tape.leaf(Tensor::column(&[1.5, 0.2]));
        let t = tape.leaf(Tensor::column(&[0.0, 1.0]));

        let soft = soft_attention_logits(&mut tape, &q, &[v0, v1], t).unwrap();
        let hard = attention_logits(&mut tape, &q, v1).unwrap();
        assert!(tape.value(soft).bits_eq(tape.value(hard)));
    }

    #[test]
    fn soft_mix_and_zero_weights() {
        let mut tape = Tape::new();
        // A_0 = [2, 0], A_1 = [0, 2] via identity Q and unit vectors
        let q = grid_q(&mut tape, &[&[2.0, 0.0], &[0.0, 2.0]], 2, 1);
        let v0 = tape.leaf(Tensor::column(&[1.0, 0.0]));
        let v1 = tape.leaf(Tensor::column(&[0.0, 1.0]));
        let t = tape.leaf(Tensor::column(&[0.5, 0.5]));
        let mixed = soft_attention_logits(&mut tape, &q, &[v0, v1], t).unwrap();
        assert_eq!(tape.value(mixed).data(), &[1.0, 1.0]);
        let att = attention_normalize(&mut tape, mixed).unwrap();
        for &v in tape.value(att).data() {
            assert!((v - 0.5).abs() < 1e-12);
        }

        let tz = tape.leaf(Tensor::zeros(alloc::vec![2, 1]));
        let zeroed = soft_attention_logits(&mut tape, &q, &[v0, v1], tz).unwrap();
        let att0 = attention_normalize(&mut tape, zeroed).unwrap();
        for &v in tape.value(att0).data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_classifier_predicts_half() {
        let reg = registry_2x2();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut head =
            CsnHeadParams::init(&reg, SharingMode::PartAndPattern, SoftInit::OneHot, 2, &mut rng)
                .unwrap();
        head.pattern_classifiers[1] = Tensor::zeros(alloc::vec![2, 2]);

        let mut tape = Tape::new();
        let q = grid_q(&mut tape, &[&[0.4, -0.2], &[1.0, 0.7]], 2, 1);
        let nodes = HeadNodes::register(&mut tape, &head);
        let logits = attribute_logits(&mut tape, &q, &head, &nodes, 0).unwrap();
        let (p0, p1) = probabilities(&mut tape, logits).unwrap();
        assert!((p0 - 0.5).abs() < 1e-12);
        assert!((p1 - 0.5).abs() < 1e-12);
        assert!((p0 + p1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shared_part_gives_identical_attention() {
        // two attributes with the same part, different patterns
        let mut reg = registry_2x2();
        reg.attributes.push(AttributeSpec {
            id: 2,
            part: 0,
            pattern: 0,
            name: "square_red".to_string(),
        });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head =
            CsnHeadParams::init(&reg, SharingMode::PartAndPattern, SoftInit::OneHot, 3, &mut rng)
                .unwrap();

        let mut tape = Tape::new();
        let q = grid_q(
            &mut tape,
            &[&[0.4, -0.2, 0.9], &[1.0, 0.7, -0.3], &[0.0, 0.1, 0.2], &[2.0, -1.0, 0.5]],
            2,
            2,
        );
        let nodes = HeadNodes::register(&mut tape, &head);
        let a0 = attribute_attention(&mut tape, &q, &head, &nodes, 0).unwrap();
        let a2 = attribute_attention(&mut tape, &q, &head, &nodes, 2).unwrap();
        assert!(tape.value(a0).bits_eq(tape.value(a2)));
    }

    #[test]
    fn compose_binds_existing_slots() {
        let mut reg = registry_2x2();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut head =
            CsnHeadParams::init(&reg, SharingMode::PartAndPattern, SoftInit::OneHot, 2, &mut rng)
                .unwrap();
        let before = head.clone();

        // trained {(0,1), (1,0)}: both (0,0) and (1,1) are composable
        let s = compose_zero_shot(&mut reg, &mut head, 0, 0).unwrap();
        assert_eq!(s.id, 2);
        assert_eq!(s.name, "square_red");
        let s2 = compose_zero_shot(&mut reg, &mut head, 1, 1).unwrap();
        assert_eq!(s2.id, 3);

        assert_eq!(head.part_vectors, before.part_vectors);
        assert_eq!(head.pattern_classifiers, before.pattern_classifiers);
        assert_eq!(head.part_slot(2).unwrap(), 0);
        assert_eq!(head.pattern_slot(2).unwrap(), 0);
        reg.validate().unwrap();
    }

    #[test]
    fn compose_rejects_uncovered_concepts() {
        // only (0,1) trained: part 2 does not even exist, part 1 has no coverage
        let mut reg = registry_2x2();
        reg.attributes.truncate(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut head =
            CsnHeadParams::init(&reg, SharingMode::PartAndPattern, SoftInit::OneHot, 2, &mut rng)
                .unwrap();
        assert!(matches!(
            compose_zero_shot(&mut reg, &mut head, 2, 1),
            Err(Error::UnknownId { what: "part", id: 2 })
        ));
        match compose_zero_shot(&mut reg, &mut head, 1, 0) {
            Err(Error::Composition(msg)) => {
                assert!(msg.contains("part 1"), "message was {msg}");
                assert!(msg.contains("pattern 0"), "message was {msg}");
            }
            other => panic!("expected composition error, got {other:?}"),
        }
    }

    #[test]
    fn compose_needs_full_sharing() {
        let mut reg = registry_2x2();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut head =
            CsnHeadParams::init(&reg, SharingMode::None, SoftInit::OneHot, 2, &mut rng).unwrap();
        assert!(matches!(
            compose_zero_shot(&mut reg, &mut head, 0, 0),
            Err(Error::Composition(_))
        ));
    }

    #[test]
    fn composed_equals_manual_pairing() {
        let mut reg = registry_2x2();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut head =
            CsnHeadParams::init(&reg, SharingMode::PartAndPattern, SoftInit::OneHot, 2, &mut rng)
                .unwrap();
        let spec = compose_zero_shot(&mut reg, &mut head, 0, 0).unwrap();

        let mut tape = Tape::new();
        let q = grid_q(&mut tape, &[&[0.4, -0.2], &[1.0, 0.7]], 2, 1);
        let nodes = HeadNodes::register(&mut tape, &head);
        let composed = attribute_logits(&mut tape, &q, &head, &nodes, spec.id).unwrap();

        // manual: attention with V_0, classify with W_0
        let v = nodes.parts[0];
        let l = attention_logits(&mut tape, &q, v).unwrap();
        let att = attention_normalize(&mut tape, l).unwrap();
        let desc = attend_and_pool(&mut tape, &q, att).unwrap();
        let wt = tape.transpose(nodes.patterns[0]).unwrap();
        let manual = tape.matmul(wt, desc).unwrap();

        assert!(tape.value(composed).bits_eq(tape.value(manual)));
    }

    #[test]
    fn unknown_attribute_is_lookup_error() {
        let reg = registry_2x2();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head =
            CsnHeadParams::init(&reg, SharingMode::PartAndPattern, SoftInit::OneHot, 2, &mut rng)
                .unwrap();
        let mut tape = Tape::new();
        let q = grid_q(&mut tape, &[&[0.4, -0.2], &[1.0, 0.7]], 2, 1);
        let nodes = HeadNodes::register(&mut tape, &head);
        assert!(matches!(
            attribute_logits(&mut tape, &q, &head, &nodes, 42),
            Err(Error::UnknownId { what: "attribute", id: 42 })
        ));
    }
}
