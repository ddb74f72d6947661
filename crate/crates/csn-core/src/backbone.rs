//! Small trainable convolutional feature extractor.
//!
//! Turns a `3 x S x S` image into a grid of `hw` descriptors of dimension
//! `d`, flattened row-major (`row = y * w + x`). The flattening convention
//! is fixed here and reused by the heat-map export so maps render upright.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::math;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::Result;

/// One convolution layer: `out_channels` filters of size `kernel`, applied
/// with `stride` and valid padding, followed by a relu.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BackboneConfig {
    /// Pixels per side of the (square) input image.
    pub input_size: usize,
    pub input_channels: usize,
    pub layers: Vec<ConvLayerSpec>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            input_size: 32,
            input_channels: 3,
            layers: vec![
                ConvLayerSpec { out_channels: 8, kernel: 3, stride: 1 },
                ConvLayerSpec { out_channels: 16, kernel: 3, stride: 2 },
                ConvLayerSpec { out_channels: 16, kernel: 3, stride: 2 },
            ],
        }
    }
}

impl BackboneConfig {
    /// Descriptor dimension `d` (channels of the final layer).
    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }

    /// Spatial extent of the output grid; the input is square so height and
    /// width coincide.
    pub fn grid_side(&self) -> Result<usize> {
        let mut extent = self.input_size;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.stride == 0 || layer.kernel == 0 {
                return Err(Error::InvalidConfig(format!(
                    "layer {i}: kernel and stride must be positive"
                )));
            }
            if layer.kernel > extent {
                return Err(Error::InvalidConfig(format!(
                    "layer {i}: kernel {} exceeds input extent {extent}",
                    layer.kernel
                )));
            }
            extent = (extent - layer.kernel) / layer.stride + 1;
        }
        Ok(extent)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("backbone needs at least one layer".into()));
        }
        if self.input_channels == 0 || self.input_size == 0 {
            return Err(Error::InvalidConfig("input size and channels must be positive".into()));
        }
        if self.layers.iter().any(|l| l.out_channels == 0) {
            return Err(Error::InvalidConfig("layer with zero channels".into()));
        }
        let side = self.grid_side()?;
        if side < 2 {
            return Err(Error::InvalidConfig(format!(
                "feature grid {side}x{side} is degenerate; need at least 2x2"
            )));
        }
        if self.feature_dim() < 2 {
            return Err(Error::InvalidConfig("feature dimension must be at least 2".into()));
        }
        Ok(())
    }
}

/// Trainable backbone tensors: one kernel stack and one bias vector per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub kernels: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

/// Glorot-uniform kernels, zero biases; bit-reproducible per seed.
pub fn init_backbone(config: &BackboneConfig, seed: u64) -> Result<BackboneParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kernels = Vec::with_capacity(config.layers.len());
    let mut biases = Vec::with_capacity(config.layers.len());
    let mut c_in = config.input_channels;
    for layer in &config.layers {
        let k = layer.kernel;
        let fan_in = (c_in * k * k) as f64;
        let fan_out = (layer.out_channels * k * k) as f64;
        let a = math::sqrt(6.0 / (fan_in + fan_out));
        let numel = layer.out_channels * c_in * k * k;
        let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-a..a)).collect();
        kernels.push(Tensor::from_vec(
            vec![layer.out_channels, c_in, k, k],
            data,
        )?);
        biases.push(Tensor::zeros(vec![layer.out_channels]));
        c_in = layer.out_channels;
    }
    Ok(BackboneParams { kernels, biases })
}

/// Feature map `Q` on a tape: an `hw x d` matrix node plus its grid dims.
#[derive(Debug, Clone, Copy)]
pub struct FeatureMap {
    pub node: NodeId,
    pub h: usize,
    pub w: usize,
    pub d: usize,
}

/// Run the backbone over an image node. `kernels`/`biases` are the leaf
/// nodes of the backbone parameters, so gradients flow to them.
pub fn extract_features(
    tape: &mut Tape,
    image: NodeId,
    kernels: &[NodeId],
    biases: &[NodeId],
    config: &BackboneConfig,
) -> Result<FeatureMap> {
    let expected = [config.input_channels, config.input_size, config.input_size];
    if tape.value(image).shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "extract_features",
            lhs: tape.value(image).shape().to_vec(),
            rhs: expected.to_vec(),
        });
    }
    let mut x = image;
    for ((layer, &kn), &bn) in config.layers.iter().zip(kernels).zip(biases) {
        x = tape.conv2d(x, kn, layer.stride)?;
        x = tape.bias_add_channels(x, bn)?;
        x = tape.relu(x);
    }
    let side = config.grid_side()?;
    let d = config.feature_dim();
    // c x h x w -> (d x hw) -> transpose -> hw x d with row = y * w + x
    let flat = tape.reshape(x, vec![d, side * side])?;
    let q = tape.transpose(flat)?;
    Ok(FeatureMap { node: q, h: side, w: side, d })
}

/// Convenience wrapper computing `Q` as a plain tensor.
pub fn extract_features_value(
    image: &Tensor,
    params: &BackboneParams,
    config: &BackboneConfig,
) -> Result<(Tensor, usize, usize)> {
    let mut tape = Tape::new();
    let img = tape.leaf(image.clone());
    let kn: Vec<NodeId> = params.kernels.iter().map(|t| tape.leaf(t.clone())).collect();
    let bn: Vec<NodeId> = params.biases.iter().map(|t| tape.leaf(t.clone())).collect();
    let fm = extract_features(&mut tape, img, &kn, &bn, config)?;
    Ok((tape.value(fm.node).clone(), fm.h, fm.w))
}

/// Row index of grid cell (y, x) in the flattened feature map.
#[inline]
pub fn flatten_index(y: usize, x: usize, w: usize) -> usize {
    y * w + x
}

/// Grid cell (y, x) of a flattened row index.
#[inline]
pub fn unflatten_index(row: usize, w: usize) -> (usize, usize) {
    (row / w, row % w)
}
