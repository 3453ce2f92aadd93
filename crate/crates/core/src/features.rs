//! Convolutional feature maps and their Gram matrices.
//!
//! A feature map at layer `l` is the `d × p` matrix of filter activations
//! (`d` filters, `p = height·width` positions). Its Gram matrix is
//! `G_ij = Σ_k H_ik·H_jk`, left unnormalized here; the style loss applies
//! the `1/(d·p)` factor.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::Image;
use crate::error::{Error, Result};
use crate::tensor::{weights, Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// 2×2 average pooling after the activation.
    pub pool_after: bool,
}

impl LayerSpec {
    pub fn conv3(filters: usize) -> Self {
        Self {
            filters,
            kernel: 3,
            stride: 1,
            padding: 1,
            pool_after: false,
        }
    }

    pub fn pooled(mut self) -> Self {
        self.pool_after = true;
        self
    }
}

/// Where the network's weights come from.
#[derive(Clone, Debug, PartialEq)]
pub enum NetworkSource<'a> {
    /// Fixed He-initialized random weights drawn from a seed.
    RandomFeatures,
    /// An `STWT` file with `layer{i}.weight` / `layer{i}.bias` for every layer.
    FromFile(&'a Path),
}

/// A frozen stack of conv + ReLU (+ optional pooling) layers with named taps.
///
/// Layers are numbered from 1; tap `l` reads the activation of layer `l`
/// before any pooling.
#[derive(Clone, Debug)]
pub struct FeatureNetwork {
    in_channels: usize,
    layers: Vec<LayerSpec>,
    weights: Vec<Tensor<f32>>,
    biases: Vec<Tensor<f32>>,
    pub style_taps: Vec<usize>,
    pub content_tap: usize,
}

/// Activations `H^l` of one layer as a `d × p` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T: Real = f32> {
    pub layer: usize,
    pub matrix: Tensor<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn filters(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn positions(&self) -> usize {
        self.matrix.shape()[1]
    }
}

/// `d × d` Gram matrix of a [`FeatureMap`].
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix<T: Real = f32> {
    pub layer: usize,
    pub matrix: Tensor<T>,
    /// `p` of the source feature map, kept for the loss normalization.
    pub positions: usize,
}

/// The default layer stack: 16/16/32/32/64/64 filters, pooling after layers 2 and 4.
pub fn default_layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv3(16),
        LayerSpec::conv3(16).pooled(),
        LayerSpec::conv3(32),
        LayerSpec::conv3(32).pooled(),
        LayerSpec::conv3(64),
        LayerSpec::conv3(64),
    ]
}

impl FeatureNetwork {
    /// He-initialized random network.
    pub fn random(in_channels: usize, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("feature network needs at least one layer"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c_in = in_channels;
        let mut weights = Vec::with_capacity(layers.len());
        let mut biases = Vec::with_capacity(layers.len());
        for l in &layers {
            let fan_in = c_in * l.kernel * l.kernel;
            weights.push(Tensor::randn(
                &[l.filters, c_in, l.kernel, l.kernel],
                (2.0 / fan_in as f64).sqrt(),
                &mut rng,
            ));
            biases.push(Tensor::zeros(&[l.filters]));
            c_in = l.filters;
        }
        let depth = layers.len();
        Ok(Self {
            in_channels,
            layers,
            weights,
            biases,
            style_taps: (1..=depth.min(4)).collect(),
            content_tap: depth.min(5),
        })
    }

    /// Loads `layer{i}.weight` / `layer{i}.bias` (1-based) from an `STWT` file.
    pub fn from_weights(in_channels: usize, layers: Vec<LayerSpec>, path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let records = weights::decode_with_offsets(&bytes)?;
        if records.len() != 2 * layers.len() {
            return Err(Error::Format {
                offset: weights::COUNT_OFFSET,
                message: format!("expected {} tensors, file has {}", 2 * layers.len(), records.len()),
            });
        }
        let mut net = Self::random(in_channels, layers, 0)?;
        for i in 0..net.layers.len() {
            for (slot, suffix) in [(0, "weight"), (1, "bias")] {
                let name = format!("layer{}.{suffix}", i + 1);
                let (_, t, at) = records.iter().find(|(n, _, _)| *n == name).ok_or_else(|| Error::Format {
                    offset: weights::COUNT_OFFSET,
                    message: format!("missing tensor {name}"),
                })?;
                let target = if slot == 0 { &mut net.weights[i] } else { &mut net.biases[i] };
                if t.shape() != target.shape() {
                    return Err(Error::Format {
                        offset: *at,
                        message: format!("{name} has shape {:?}, expected {:?}", t.shape(), target.shape()),
                    });
                }
                *target = t.clone();
            }
        }
        Ok(net)
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut named = Vec::new();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            named.push((format!("layer{}.weight", i + 1), w.clone()));
            named.push((format!("layer{}.bias", i + 1), b.clone()));
        }
        weights::save(path, &named)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self, layer: usize) -> (&Tensor<f32>, &Tensor<f32>) {
        (&self.weights[layer - 1], &self.biases[layer - 1])
    }

    fn check_taps(&self, taps: &[usize]) -> Result<usize> {
        let deepest = taps.iter().copied().max().ok_or_else(|| Error::invalid("no feature taps requested"))?;
        if let Some(&bad) = taps.iter().find(|&&t| t == 0 || t > self.depth()) {
            return Err(Error::invalid(format!(
                "tap {bad} is outside layers 1..={}",
                self.depth()
            )));
        }
        Ok(deepest)
    }

    /// Records the forward pass of `image` (CHW) in `g` and returns one
    /// `d × p` node per tap, in the order requested.
    pub fn forward_taps<T: Real>(&self, g: &mut Graph<T>, image: Var, taps: &[usize]) -> Result<Vec<Var>> {
        let deepest = self.check_taps(taps)?;
        let s = g.shape(image);
        if s.len() != 3 || s[0] != self.in_channels {
            return Err(Error::shape(format!(
                "feature network expects {} input channels, got shape {s:?}",
                self.in_channels
            )));
        }
        let mut found: Vec<Option<Var>> = vec![None; taps.len()];
        let mut x = image;
        for (i, spec) in self.layers.iter().enumerate().take(deepest) {
            let w = g.constant(self.weights[i].cast());
            let b = g.constant(self.biases[i].cast());
            let y = g.conv2d(x, w, spec.stride, spec.padding)?;
            let y = g.channel_bias(y, b)?;
            let y = g.relu(y);
            let layer = i + 1;
            if taps.contains(&layer) {
                let ys = g.shape(y).to_vec();
                let m = g.reshape(y, &[ys[0], ys[1] * ys[2]])?;
                for (slot, &t) in found.iter_mut().zip(taps) {
                    if t == layer {
                        *slot = Some(m);
                    }
                }
            }
            x = if spec.pool_after && layer < deepest { g.avg_pool2(y)? } else { y };
        }
        Ok(found.into_iter().map(|v| v.expect("every tap visited")).collect())
    }
}

/// Builds the default 6-layer, 3-channel network.
pub fn build_default_network(seed: u64, source: NetworkSource<'_>) -> Result<FeatureNetwork> {
    match source {
        NetworkSource::RandomFeatures => FeatureNetwork::random(3, default_layers(), seed),
        NetworkSource::FromFile(path) => FeatureNetwork::from_weights(3, default_layers(), path),
    }
}

/// Feature maps of `image` at `taps` (values only).
pub fn extract_features<T: Real>(image: &Image, network: &FeatureNetwork, taps: &[usize]) -> Result<Vec<FeatureMap<T>>> {
    let mut g = Graph::<T>::new();
    let input = if image.channels() == network.in_channels() {
        image.clone()
    } else if network.in_channels() == 3 {
        image.to_rgb()
    } else {
        return Err(Error::shape(format!(
            "image has {} channels, network expects {}",
            image.channels(),
            network.in_channels()
        )));
    };
    let x = g.constant(input.to_tensor());
    let vars = network.forward_taps(&mut g, x, taps)?;
    Ok(vars
        .into_iter()
        .zip(taps)
        .map(|(v, &layer)| FeatureMap {
            layer,
            matrix: g.value(v).clone(),
        })
        .collect())
}

/// `G_ij = Σ_k H_ik·H_jk`.
pub fn gram<T: Real>(map: &FeatureMap<T>) -> GramMatrix<T> {
    let mut g = Graph::<T>::new();
    let h = g.constant(map.matrix.clone());
    let gm = g.gram(h).expect("feature maps are matrices");
    GramMatrix {
        layer: map.layer,
        matrix: g.value(gm).clone(),
        positions: map.positions(),
    }
}
