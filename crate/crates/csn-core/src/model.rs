//! The assembled recognizer: backbone, registry, and head in one place,
//! with a flat view of every trainable tensor for the optimizer and for
//! persistence.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{self, BackboneConfig, BackboneParams, FeatureMap};
use crate::head::{self, AttentionMap, CsnHeadParams, HeadNodes, SharingMode, SoftInit};
use crate::math;
use crate::registry::ConceptRegistry;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::Result;

/// Identifies one trainable tensor of a [`CsnModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamId {
    Kernel(usize),
    Bias(usize),
    PartVector(usize),
    PatternClassifier(usize),
    SoftWeight(usize),
}

/// All trainable state: backbone parameters, shared part vectors, shared
/// pattern classifiers, and (in soft mode) per-attribute mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CsnModel {
    pub backbone_config: BackboneConfig,
    pub backbone: BackboneParams,
    pub registry: ConceptRegistry,
    pub head: CsnHeadParams,
}

impl CsnModel {
    /// Seeded initialization. The backbone consumes `seed` directly and the
    /// head a fixed derivation of it, so models that differ only in sharing
    /// mode draw identical backbone tensors, and shared-slot modes draw
    /// identical part vectors and classifiers too.
    pub fn new(
        backbone_config: BackboneConfig,
        registry: ConceptRegistry,
        mode: SharingMode,
        soft_init: SoftInit,
        seed: u64,
    ) -> Result<Self> {
        let backbone = backbone::init_backbone(&backbone_config, seed)?;
        let mut head_rng = ChaCha8Rng::seed_from_u64(math::splitmix64(seed ^ 0x4845_4144));
        let head = CsnHeadParams::init(
            &registry,
            mode,
            soft_init,
            backbone_config.feature_dim(),
            &mut head_rng,
        )?;
        Ok(CsnModel {
            backbone_config,
            backbone,
            registry,
            head,
        })
    }

    pub fn sharing_mode(&self) -> SharingMode {
        self.head.mode
    }

    /// Canonical enumeration of every trainable tensor. Optimizer state,
    /// gradient collection, and checkpoints all index by position in this
    /// list.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in 0..self.backbone.kernels.len() {
            ids.push(ParamId::Kernel(l));
            ids.push(ParamId::Bias(l));
        }
        for s in 0..self.head.part_vectors.len() {
            ids.push(ParamId::PartVector(s));
        }
        for s in 0..self.head.pattern_classifiers.len() {
            ids.push(ParamId::PatternClassifier(s));
        }
        for s in 0..self.head.soft_weights.len() {
            ids.push(ParamId::SoftWeight(s));
        }
        ids
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        match id {
            ParamId::Kernel(l) => &self.backbone.kernels[l],
            ParamId::Bias(l) => &self.backbone.biases[l],
            ParamId::PartVector(s) => &self.head.part_vectors[s],
            ParamId::PatternClassifier(s) => &self.head.pattern_classifiers[s],
            ParamId::SoftWeight(s) => &self.head.soft_weights[s],
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        match id {
            ParamId::Kernel(l) => &mut self.backbone.kernels[l],
            ParamId::Bias(l) => &mut self.backbone.biases[l],
            ParamId::PartVector(s) => &mut self.head.part_vectors[s],
            ParamId::PatternClassifier(s) => &mut self.head.pattern_classifiers[s],
            ParamId::SoftWeight(s) => &mut self.head.soft_weights[s],
        }
    }

    /// Stable name for a parameter, used by the checkpoint directory.
    pub fn param_name(&self, id: ParamId) -> String {
        match id {
            ParamId::Kernel(l) => format!("backbone.kernel.{l}"),
            ParamId::Bias(l) => format!("backbone.bias.{l}"),
            ParamId::PartVector(s) => format!("head.part.{s}"),
            ParamId::PatternClassifier(s) => format!("head.pattern.{s}"),
            ParamId::SoftWeight(s) => format!("head.soft.{s}"),
        }
    }

    /// Sum of raw bit patterns of every parameter; cheap fingerprint for
    /// "training did not touch this" style assertions.
    pub fn param_checksum(&self) -> u64 {
        let mut acc = 0u64;
        for id in self.param_ids() {
            for v in self.param(id).data() {
                acc = acc.wrapping_mul(31).wrapping_add(v.to_bits());
            }
        }
        acc
    }

    /// Register every parameter as a tape leaf, in canonical order.
    pub fn register_params(&self, tape: &mut Tape) -> ModelNodes {
        let kernels: Vec<NodeId> = self
            .backbone
            .kernels
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        let biases: Vec<NodeId> = self
            .backbone
            .biases
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        let head = HeadNodes::register(tape, &self.head);
        ModelNodes {
            kernels,
            biases,
            head,
        }
    }

    /// Backbone forward for one image; the image becomes a fresh leaf.
    pub fn feature_map(
        &self,
        tape: &mut Tape,
        nodes: &ModelNodes,
        image: &Tensor,
    ) -> Result<FeatureMap> {
        let img = tape.leaf(image.clone());
        backbone::extract_features(
            tape,
            img,
            &nodes.kernels,
            &nodes.biases,
            &self.backbone_config,
        )
    }

    /// Two-class logits for `attribute` on an already-computed feature map.
    pub fn attribute_logits(
        &self,
        tape: &mut Tape,
        nodes: &ModelNodes,
        q: &FeatureMap,
        attribute: usize,
    ) -> Result<NodeId> {
        head::attribute_logits(tape, q, &self.head, &nodes.head, attribute)
    }

    /// `(p_absent, p_present)` for one attribute on one image.
    pub fn predict(&self, image: &Tensor, attribute: usize) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let nodes = self.register_params(&mut tape);
        let q = self.feature_map(&mut tape, &nodes, image)?;
        let logits = self.attribute_logits(&mut tape, &nodes, &q, attribute)?;
        head::probabilities(&mut tape, logits)
    }

    /// `p_present` for every registered attribute, sharing one backbone pass.
    pub fn score_all(&self, image: &Tensor) -> Result<Vec<(usize, f64)>> {
        let mut tape = Tape::new();
        let nodes = self.register_params(&mut tape);
        let q = self.feature_map(&mut tape, &nodes, image)?;
        let mut out = Vec::with_capacity(self.registry.attributes.len());
        for attr in &self.registry.attributes {
            let logits = self.attribute_logits(&mut tape, &nodes, &q, attr.id)?;
            let (_, p_pos) = head::probabilities(&mut tape, logits)?;
            out.push((attr.id, p_pos));
        }
        Ok(out)
    }

    /// Normalized attention map for one attribute on one image.
    pub fn attention_map(&self, image: &Tensor, attribute: usize) -> Result<AttentionMap> {
        let mut tape = Tape::new();
        let nodes = self.register_params(&mut tape);
        let q = self.feature_map(&mut tape, &nodes, image)?;
        let att = head::attribute_attention(&mut tape, &q, &self.head, &nodes.head, attribute)?;
        Ok(AttentionMap {
            weights: tape.value(att).clone(),
            h: q.h,
            w: q.w,
        })
    }
}

/// Leaf nodes of all model parameters on some tape.
pub struct ModelNodes {
    pub kernels: Vec<NodeId>,
    pub biases: Vec<NodeId>,
    pub head: HeadNodes,
}

impl ModelNodes {
    /// Node list aligned with [`CsnModel::param_ids`].
    pub fn param_nodes(&self) -> Vec<NodeId> {
        let mut nodes = Vec::new();
        for (k, b) in self.kernels.iter().zip(&self.biases) {
            nodes.push(*k);
            nodes.push(*b);
        }
        nodes.extend_from_slice(&self.head.parts);
        nodes.extend_from_slice(&self.head.patterns);
        nodes.extend_from_slice(&self.head.soft);
        nodes
    }
}
