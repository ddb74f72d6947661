//! Finite-difference oracles for every differentiable operation and for the
//! assembled model. The analytic gradients come from the tape; the numeric
//! side is always a fresh forward pass, so the two routes stay independent.

use csn_core::backbone::{self, BackboneConfig, ConvLayerSpec};
use csn_core::head::{SharingMode, SoftInit};
use csn_core::model::CsnModel;
use csn_core::registry::{AttributeSpec, Concept, ConceptRegistry};
use csn_core::tape::{gradient_check, Axis, NodeId, Op, Tape};
use csn_core::tensor::Tensor;
use csn_core::train::{attribute_loss, LabeledExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Random tensor with no coordinate near zero, for kinked ops.
fn random_tensor_off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-1.0..1.0);
            if v.abs() > 1e-3 {
                break v;
            }
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Check analytic vs numeric gradients of `graph` at `params`.
///
/// `graph` maps parameter leaves to a scalar loss node. Non-scalar outputs
/// should be scalarized inside `graph` (the helpers below pin a random
/// projection so upstream gradients are non-uniform).
fn assert_grads_match<F>(params: &[Tensor], graph: F, label: &str)
where
    F: Fn(&mut Tape, &[NodeId]) -> NodeId,
{
    let mut tape = Tape::new();
    let leaves: Vec<NodeId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = graph(&mut tape, &leaves);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = leaves
        .iter()
        .zip(params)
        .map(|(&l, p)| {
            grads
                .get(l)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
        })
        .collect();

    let f = |p: &[Tensor]| {
        let mut t = Tape::new();
        let ls: Vec<NodeId> = p.iter().map(|x| t.leaf(x.clone())).collect();
        let out = graph(&mut t, &ls);
        t.value(out).item()
    };
    let report = gradient_check(f, params, &analytic, H, TOL).unwrap();
    assert!(
        report.all_ok(),
        "{label}: max relative error {}",
        report.max_rel_err()
    );
}

/// Scalarize a node with a fixed random projection derived from `seed`.
fn project(tape: &mut Tape, node: NodeId, seed: u64) -> NodeId {
    let shape = tape.value(node).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x50524f4a);
    let r = tape.leaf(random_tensor(&shape, &mut rng));
    let prod = tape.mul(node, r).unwrap();
    tape.sum(prod)
}

#[test]
fn op_sweep_matches_central_differences() {
    // at least 100 random shape/seed cases across the op vocabulary
    let mut checked = 0;
    for seed in 0..112u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match seed % 8 {
            0 => {
                let (p, q, r) = (
                    rng.gen_range(1..4),
                    rng.gen_range(1..4),
                    rng.gen_range(1..4),
                );
                let params = [
                    random_tensor(&[p, q], &mut rng),
                    random_tensor(&[q, r], &mut rng),
                ];
                assert_grads_match(&params, |t, l| {
                    let m = t.matmul(l[0], l[1]).unwrap();
                    project(t, m, seed)
                }, "matmul");
            }
            1 => {
                let (c_in, c_out) = (rng.gen_range(1..3), rng.gen_range(1..3));
                let k = rng.gen_range(1..3);
                let stride = rng.gen_range(1..3);
                let hw = rng.gen_range(4..7);
                let params = [
                    random_tensor(&[c_in, hw, hw], &mut rng),
                    random_tensor(&[c_out, c_in, k, k], &mut rng),
                    random_tensor(&[c_out], &mut rng),
                ];
                assert_grads_match(&params, |t, l| {
                    let c = t.conv2d(l[0], l[1], stride).unwrap();
                    let b = t.bias_add_channels(c, l[2]).unwrap();
                    project(t, b, seed)
                }, "conv2d+bias");
            }
            2 => {
                let (n, m) = (rng.gen_range(1..4), rng.gen_range(2..5));
                let params = [random_tensor(&[n, m], &mut rng)];
                assert_grads_match(&params, |t, l| {
                    let s = t.softmax_rows(l[0]).unwrap();
                    project(t, s, seed)
                }, "softmax_rows");
            }
            3 => {
                let (n, d) = (rng.gen_range(1..5), rng.gen_range(1..4));
                let params = [
                    random_tensor(&[n, d], &mut rng),
                    random_tensor(&[n, 1], &mut rng),
                ];
                assert_grads_match(&params, |t, l| {
                    let b = t.broadcast_mul_rows(l[0], l[1]).unwrap();
                    project(t, b, seed)
                }, "broadcast_mul_rows");
            }
            4 => {
                let (n, m) = (rng.gen_range(1..5), rng.gen_range(1..5));
                let axis = if seed % 16 < 8 { Axis::Rows } else { Axis::Cols };
                let params = [random_tensor(&[n, m], &mut rng)];
                assert_grads_match(&params, |t, l| {
                    let m = t.mean_over_axis(l[0], axis).unwrap();
                    project(t, m, seed)
                }, "mean_over_axis");
            }
            5 => {
                let n = rng.gen_range(1..6);
                let params = [random_tensor_off_kink(&[n], &mut rng)];
                assert_grads_match(&params, |t, l| {
                    let r = t.relu(l[0]);
                    project(t, r, seed)
                }, "relu");
            }
            6 => {
                // log over strictly positive inputs
                let n = rng.gen_range(1..5);
                let data: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
                let params = [Tensor::from_vec(vec![n], data).unwrap()];
                assert_grads_match(&params, |t, l| {
                    let lg = t.log(l[0]).unwrap();
                    let ng = t.neg(lg);
                    let sc = t.scale(ng, 0.7);
                    project(t, sc, seed)
                }, "log/neg/scale");
            }
            _ => {
                let classes = rng.gen_range(2..5);
                let target = rng.gen_range(0..classes);
                let params = [random_tensor(&[classes, 1], &mut rng)];
                assert_grads_match(&params, |t, l| {
                    t.cross_entropy_logits(l[0], target).unwrap()
                }, "cross_entropy_logits");
            }
        }
        checked += 1;
    }
    assert!(checked >= 100);
}

#[test]
fn one_hot_kernel_conv_gradient() {
    // spelled-out case: sum of conv output, one-hot kernel
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let image = random_tensor(&[1, 5, 5], &mut rng);
    let mut kdata = vec![0.0; 9];
    kdata[4] = 1.0;
    let kernel = Tensor::from_vec(vec![1, 1, 3, 3], kdata).unwrap();
    let params = [image, kernel];
    assert_grads_match(&params, |t, l| {
        let c = t.conv2d(l[0], l[1], 1).unwrap();
        t.sum(c)
    }, "one-hot kernel conv");
}

#[test]
fn transpose_concat_chain_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let params = [
        random_tensor(&[3, 1], &mut rng),
        random_tensor(&[3, 1], &mut rng),
        random_tensor(&[3, 1], &mut rng),
    ];
    assert_grads_match(&params, |t, l| {
        let cat = t.concat_cols(&[l[0], l[1], l[2]]).unwrap();
        let tr = t.transpose(cat).unwrap();
        let r = t.reshape(tr, vec![9, 1]).unwrap();
        project(t, r, 23)
    }, "concat/transpose/reshape");
}

#[test]
fn fanout_scales_linearly() {
    // a node consumed k times in a linear context gets k times the gradient
    let x = Tensor::from_vec(vec![3], vec![0.4, -0.2, 0.9]).unwrap();
    let single = {
        let mut tape = Tape::new();
        let l = tape.leaf(x.clone());
        let s = tape.sum(l);
        tape.backward(s).unwrap().get(l).unwrap().clone()
    };
    for k in 2..5usize {
        let mut tape = Tape::new();
        let l = tape.leaf(x.clone());
        let copies: Vec<NodeId> = (0..k).map(|_| l).collect();
        let total = tape.add_n(&copies).unwrap();
        let s = tape.sum(total);
        let g = tape.backward(s).unwrap().get(l).unwrap().clone();
        for (gv, sv) in g.data().iter().zip(single.data()) {
            assert_eq!(*gv, k as f64 * sv);
        }
    }
}

fn small_backbone() -> BackboneConfig {
    BackboneConfig {
        input_size: 10,
        input_channels: 1,
        layers: vec![
            ConvLayerSpec { out_channels: 3, kernel: 3, stride: 1 },
            ConvLayerSpec { out_channels: 4, kernel: 3, stride: 2 },
        ],
    }
}

fn small_registry() -> ConceptRegistry {
    ConceptRegistry {
        parts: vec![
            Concept { id: 0, name: "square".into() },
            Concept { id: 1, name: "disk".into() },
        ],
        patterns: vec![
            Concept { id: 0, name: "red".into() },
            Concept { id: 1, name: "green".into() },
        ],
        attributes: vec![
            AttributeSpec { id: 0, part: 0, pattern: 0, name: "square_red".into() },
            AttributeSpec { id: 1, part: 0, pattern: 1, name: "square_green".into() },
            AttributeSpec { id: 2, part: 1, pattern: 0, name: "disk_red".into() },
            AttributeSpec { id: 3, part: 1, pattern: 1, name: "disk_green".into() },
        ],
    }
}

#[test]
fn backbone_kernel_gradient_matches() {
    // sum(Q) w.r.t. the first-layer kernel
    let cfg = small_backbone();
    let params_init = backbone::init_backbone(&cfg, 31).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let image = {
        let data: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(vec![1, 10, 10], data).unwrap()
    };
    let params = [
        params_init.kernels[0].clone(),
        params_init.biases[0].clone(),
        params_init.kernels[1].clone(),
        params_init.biases[1].clone(),
    ];
    let cfg2 = cfg.clone();
    let img2 = image.clone();
    assert_grads_match(&params, move |t, l| {
        let img = t.leaf(img2.clone());
        let q = backbone::extract_features(t, img, &[l[0], l[2]], &[l[1], l[3]], &cfg2).unwrap();
        t.sum(q.node)
    }, "backbone sum(Q)");
}

/// Smallest pre-activation magnitude feeding any relu on the tape; the
/// central-difference oracle is only meaningful when no perturbation can
/// cross a kink.
fn min_abs_relu_input(tape: &Tape) -> f64 {
    let mut min = f64::INFINITY;
    let ops: Vec<Op> = tape.iter().map(|(op, _)| op.clone()).collect();
    for op in ops {
        if let Op::Relu { x } = op {
            for &v in tape.value(x).data() {
                min = min.min(v.abs());
            }
        }
    }
    min
}

fn full_model_case(seed: u64) -> (CsnModel, Vec<Tensor>, Vec<LabeledExample>) {
    let model = CsnModel::new(
        small_backbone(),
        small_registry(),
        SharingMode::Soft,
        SoftInit::OneHot,
        seed,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDA7A);
    let images: Vec<Tensor> = (0..2)
        .map(|_| {
            let data: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
            Tensor::from_vec(vec![1, 10, 10], data).unwrap()
        })
        .collect();
    let examples = vec![
        LabeledExample { image: 0, attribute: 0, label: true },
        LabeledExample { image: 0, attribute: 3, label: false },
        LabeledExample { image: 1, attribute: 1, label: true },
    ];
    (model, images, examples)
}

fn model_loss(model: &CsnModel, images: &[Tensor], examples: &[LabeledExample]) -> f64 {
    let mut tape = Tape::new();
    let nodes = model.register_params(&mut tape);
    let mut losses = Vec::new();
    let mut qs = std::collections::BTreeMap::new();
    for ex in examples {
        qs.entry(ex.image)
            .or_insert_with(|| model.feature_map(&mut tape, &nodes, &images[ex.image]).unwrap());
        let q = qs[&ex.image];
        let logits = model.attribute_logits(&mut tape, &nodes, &q, ex.attribute).unwrap();
        losses.push(attribute_loss(&mut tape, logits, ex.label).unwrap());
    }
    let total = tape.add_n(&losses).unwrap();
    tape.value(total).item().unwrap()
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    // joint loss over a mixed batch, checked for every parameter family
    // (backbone kernels/biases, part vectors, classifiers, soft weights)
    let mut checked = 0;
    let mut seed = 2024u64;
    while checked < 3 {
        seed += 1;
        let (model, images, examples) = full_model_case(seed);

        // keep the probe point away from relu kinks so the oracle's
        // differentiability precondition holds
        let mut tape = Tape::new();
        let nodes = model.register_params(&mut tape);
        let q0 = model.feature_map(&mut tape, &nodes, &images[0]).unwrap();
        let _ = q0;
        if min_abs_relu_input(&tape) < 1e-3 {
            continue;
        }

        let ids = model.param_ids();
        let params: Vec<Tensor> = ids.iter().map(|&id| model.param(id).clone()).collect();

        let mut tape = Tape::new();
        let nodes = model.register_params(&mut tape);
        let mut losses = Vec::new();
        let mut qs = std::collections::BTreeMap::new();
        for ex in &examples {
            qs.entry(ex.image).or_insert_with(|| {
                model.feature_map(&mut tape, &nodes, &images[ex.image]).unwrap()
            });
            let q = qs[&ex.image];
            let logits = model
                .attribute_logits(&mut tape, &nodes, &q, ex.attribute)
                .unwrap();
            losses.push(attribute_loss(&mut tape, logits, ex.label).unwrap());
        }
        let total = tape.add_n(&losses).unwrap();
        let grads = tape.backward(total).unwrap();
        let analytic: Vec<Tensor> = nodes
            .param_nodes()
            .iter()
            .zip(&params)
            .map(|(&n, p)| {
                grads
                    .get(n)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
            })
            .collect();

        let base = model.clone();
        let f = |p: &[Tensor]| {
            let mut m = base.clone();
            for (pos, id) in m.param_ids().into_iter().enumerate() {
                *m.param_mut(id) = p[pos].clone();
            }
            Ok(model_loss(&m, &images, &examples))
        };
        let report = gradient_check(f, &params, &analytic, H, TOL).unwrap();
        assert!(
            report.all_ok(),
            "seed {seed}: max relative error {}",
            report.max_rel_err()
        );
        checked += 1;
    }
}

#[test]
fn head_loss_gradient_wrt_part_vector() {
    // cross-entropy of the attribute head as a function of its part vector
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let q_value = random_tensor(&[9, 4], &mut rng);
    let w_value = random_tensor(&[4, 2], &mut rng);
    let v = random_tensor(&[4, 1], &mut rng);
    let params = [v];
    let (qv, wv) = (q_value.clone(), w_value.clone());
    assert_grads_match(&params, move |t, l| {
        let q = csn_core::backbone::FeatureMap { node: t.leaf(qv.clone()), h: 3, w: 3, d: 4 };
        let logits = csn_core::head::attention_logits(t, &q, l[0]).unwrap();
        let att = csn_core::head::attention_normalize(t, logits).unwrap();
        let desc = csn_core::head::attend_and_pool(t, &q, att).unwrap();
        let w = t.leaf(wv.clone());
        let wt = t.transpose(w).unwrap();
        let out = t.matmul(wt, desc).unwrap();
        t.cross_entropy_logits(out, 1).unwrap()
    }, "head loss wrt part vector");
}
