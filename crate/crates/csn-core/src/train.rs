//! Joint multi-attribute training.
//!
//! Every labeled (image, attribute, label) triple contributes a cross-entropy
//! term; the batch loss is their plain sum, so the gradient reaching a shared
//! part vector or pattern classifier is exactly the sum of the per-example
//! gradients of all triples routed through it. Gradients are accumulated over
//! the whole batch first and applied in one optimizer pass per parameter.
//!
//! Batches are drawn scene-grouped: the order of scenes is reshuffled each
//! epoch, and each scene's triples stay adjacent so one backbone pass serves
//! all attributes labeled on that image. Batches therefore mix attributes
//! heavily while the feature map of each image is computed once per batch.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::head::{SharingMode, SoftInit};
use crate::math;
use crate::metrics::{average_precision, RankedPredictions};
use crate::model::CsnModel;
use crate::optim::{Optimizer, OptimizerKind};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::Result;

/// One training triple; `image` indexes into the caller's image store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabeledExample {
    pub image: usize,
    pub attribute: usize,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub sharing_mode: SharingMode,
    pub soft_init: SoftInit,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 60,
            batch_size: 16,
            seed: 0,
            sharing_mode: SharingMode::PartAndPattern,
            soft_init: SoftInit::OneHot,
            optimizer: OptimizerKind::adam_default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }

    /// Step size at `epoch`: the base rate for the first half of training,
    /// a tenth of it afterwards.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if 2 * epoch < self.epochs {
            self.learning_rate
        } else {
            0.1 * self.learning_rate
        }
    }
}

/// Cross-entropy loss node for one attribute prediction. `label` selects the
/// class: `false` = absent, `true` = present.
pub fn attribute_loss(tape: &mut Tape, logits: NodeId, label: bool) -> Result<NodeId> {
    tape.cross_entropy_logits(logits, label as usize)
}

/// Loss and per-parameter gradients of one batch.
pub struct BatchGrads {
    /// Sum of the per-example losses.
    pub loss_sum: f64,
    /// Aligned with [`CsnModel::param_ids`]; `None` where no gradient flowed.
    pub grads: Vec<Option<Tensor>>,
}

/// Forward and backward over one batch on a fresh tape.
///
/// Images appearing in several triples of the batch are forwarded once; the
/// shared feature-map node fans out to every head that reads it, which is
/// arithmetically the same sum of per-example gradients as isolated passes.
pub fn batch_gradients(
    model: &CsnModel,
    images: &[Tensor],
    batch: &[LabeledExample],
) -> Result<BatchGrads> {
    if batch.is_empty() {
        return Err(Error::Contract("batch_gradients: empty batch".into()));
    }
    let mut tape = Tape::new();
    let nodes = model.register_params(&mut tape);
    let mut feature_maps = BTreeMap::new();
    let mut losses = Vec::with_capacity(batch.len());
    for ex in batch {
        let image = images
            .get(ex.image)
            .ok_or(Error::UnknownId { what: "image", id: ex.image })?;
        if !feature_maps.contains_key(&ex.image) {
            let q = model.feature_map(&mut tape, &nodes, image)?;
            feature_maps.insert(ex.image, q);
        }
        let q = feature_maps[&ex.image];
        let logits = model.attribute_logits(&mut tape, &nodes, &q, ex.attribute)?;
        losses.push(attribute_loss(&mut tape, logits, ex.label)?);
    }
    let total = tape.add_n(&losses)?;
    let loss_sum = tape.value(total).item()?;
    if !loss_sum.is_finite() {
        return Err(Error::NonFinite(format!(
            "batch loss is {loss_sum}; aborting the training step"
        )));
    }
    let grads = tape.backward(total)?;
    let mut out = Vec::new();
    for (id, node) in model.param_ids().into_iter().zip(nodes.param_nodes()) {
        let g = grads.get(node).cloned();
        if let Some(g) = &g {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of {} is not finite; aborting the training step",
                    model.param_name(id)
                )));
            }
        }
        out.push(g);
    }
    Ok(BatchGrads {
        loss_sum,
        grads: out,
    })
}

/// Whether example `index` belongs to the validation fifth of the split.
pub fn is_validation_example(seed: u64, index: usize) -> bool {
    math::splitmix64(seed ^ index as u64) % 5 == 0
}

/// Stats of one epoch: mean training loss (absent when the training split is
/// empty) and validation AP per attribute (absent value = no positives).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub mean_loss: Option<f64>,
    pub val_ap: BTreeMap<usize, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn final_mean_loss(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.mean_loss)
    }
}

/// Everything a finished run hands back besides the mutated model.
pub struct TrainRun {
    pub history: TrainHistory,
    pub optimizer: Optimizer,
    pub rng: ChaCha8Rng,
}

/// Train `model` in place on the labeled triples.
///
/// Deterministic per config seed: the shuffle, the batch boundaries, the
/// gradient summation order, and the optimizer pass are all fixed. With
/// `epochs = 0` the model is returned untouched.
pub fn train(
    model: &mut CsnModel,
    images: &[Tensor],
    examples: &[LabeledExample],
    config: &TrainConfig,
) -> Result<TrainRun> {
    config.validate()?;
    if model.sharing_mode() != config.sharing_mode {
        return Err(Error::InvalidConfig(format!(
            "model was built with {:?} but config asks for {:?}",
            model.sharing_mode(),
            config.sharing_mode
        )));
    }
    for ex in examples {
        model.registry.attribute(ex.attribute)?;
        if ex.image >= images.len() {
            return Err(Error::UnknownId { what: "image", id: ex.image });
        }
    }
    if examples.is_empty() && config.epochs > 0 {
        return Err(Error::InvalidConfig("cannot train on an empty dataset".into()));
    }

    let mut train_indices = Vec::new();
    let mut val_indices = Vec::new();
    for idx in 0..examples.len() {
        if is_validation_example(config.seed, idx) {
            val_indices.push(idx);
        } else {
            train_indices.push(idx);
        }
    }

    // scene groups in ascending image order; triples of a scene stay adjacent
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &idx in &train_indices {
        groups.entry(examples[idx].image).or_default().push(idx);
    }
    let group_list: Vec<Vec<usize>> = groups.into_values().collect();

    let param_ids = model.param_ids();
    let mut optimizer = Optimizer::new(config.optimizer, param_ids.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = TrainHistory::default();

    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..group_list.len()).collect();
        order.shuffle(&mut rng);
        let flattened: Vec<usize> = order
            .iter()
            .flat_map(|&g| group_list[g].iter().copied())
            .collect();

        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for chunk in flattened.chunks(config.batch_size) {
            let batch: Vec<LabeledExample> = chunk.iter().map(|&i| examples[i]).collect();
            let result = batch_gradients(model, images, &batch)?;
            for (pos, grad) in result.grads.iter().enumerate() {
                if let Some(g) = grad {
                    optimizer.step(pos, model.param_mut(param_ids[pos]), g, lr);
                }
            }
            loss_sum += result.loss_sum;
            count += batch.len();
        }

        let mean_loss = (count > 0).then(|| loss_sum / count as f64);
        let val_ap = validation_ap(model, images, examples, &val_indices)?;
        history.epochs.push(EpochStats { mean_loss, val_ap });
    }

    Ok(TrainRun {
        history,
        optimizer,
        rng,
    })
}

fn validation_ap(
    model: &CsnModel,
    images: &[Tensor],
    examples: &[LabeledExample],
    val_indices: &[usize],
) -> Result<BTreeMap<usize, Option<f64>>> {
    let mut scores_by_image: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for &idx in val_indices {
        let image = examples[idx].image;
        if !scores_by_image.contains_key(&image) {
            let scored = model.score_all(&images[image])?;
            scores_by_image.insert(image, scored.into_iter().collect());
        }
    }
    let mut per_attribute: BTreeMap<usize, Vec<(f64, bool)>> = BTreeMap::new();
    for &idx in val_indices {
        let ex = &examples[idx];
        let score = scores_by_image[&ex.image][&ex.attribute];
        per_attribute.entry(ex.attribute).or_default().push((score, ex.label));
    }
    let mut out = BTreeMap::new();
    for (attr, entries) in per_attribute {
        let preds = RankedPredictions::new(entries)?;
        let ap = match average_precision(&preds) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        out.insert(attr, ap);
    }
    Ok(out)
}
