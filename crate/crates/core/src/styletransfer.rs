//! Gram-matrix style transfer, whole-image and split per color region.
//!
//! The generated image is optimized directly with Adam, starting from the
//! content image, to minimize `α·L_content + β·L_style`:
//!
//! * `L_content = Σ_l 1/(d·p) Σ_ij (H(ŷ)_ij − H(x)_ij)²` over the content taps;
//! * `L_style = Σ_l w_l/(d·p) Σ_ij (G(ŷ)_ij − G(y)_ij)²` over the style taps.

use std::collections::BTreeMap;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::colorsplit::{self, ColorRegion, Palette};
use crate::dataio::Image;
use crate::error::{Error, Result};
use crate::features::{FeatureMap, FeatureNetwork, GramMatrix};
use crate::tensor::{adam_step, lit, AdamConfig, AdamState, Graph, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleWeights {
    pub alpha: f64,
    pub beta: f64,
    /// One weight per style tap; sums to 1.
    pub layer_weights: Vec<f64>,
}

impl Default for StyleWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1e3,
            layer_weights: vec![0.25; 4],
        }
    }
}

impl StyleWeights {
    pub fn new(alpha: f64, beta: f64, layer_weights: Vec<f64>) -> Result<Self> {
        let w = Self {
            alpha,
            beta,
            layer_weights,
        };
        w.validate()?;
        Ok(w)
    }

    /// Uniform layer weights over `taps` style layers.
    pub fn uniform(alpha: f64, beta: f64, taps: usize) -> Result<Self> {
        Self::new(alpha, beta, vec![1.0 / taps.max(1) as f64; taps])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::invalid("alpha and beta must be finite and non-negative"));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::invalid("alpha and beta cannot both be zero"));
        }
        if self.layer_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("layer weights must be non-negative"));
        }
        let total: f64 = self.layer_weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("layer weights sum to {total}, expected 1")));
        }
        Ok(())
    }
}

/// Optimizer settings shared by every region of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferSettings {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Optimization starts from the content image, so the seed does not
    /// enter the descent itself; the tools use it to draw the random-feature
    /// network.
    pub seed: u64,
}

impl Default for TransferSettings {
    fn default() -> Self {
        Self {
            iterations: 200,
            learning_rate: AdamConfig::pixels().lr,
            seed: 0,
        }
    }
}

/// Per-region style images plus optimizer settings.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleAssignment {
    pub styles: BTreeMap<usize, Image>,
    pub settings: TransferSettings,
}

/// `1/(d·p) Σ (a − b)²` for one pair of `d × p` feature-map nodes.
pub fn content_term<T: Real>(g: &mut Graph<T>, generated: Var, target: Var) -> Result<Var> {
    let s = g.shape(generated).to_vec();
    if s.len() != 2 || g.shape(target) != s.as_slice() {
        return Err(Error::shape(format!(
            "content maps {:?} and {:?} differ",
            s,
            g.shape(target)
        )));
    }
    let d = g.sub(generated, target)?;
    let sq = g.square(d);
    let sum = g.sum(sq);
    Ok(g.scale(sum, lit::<T>(1.0 / (s[0] * s[1]) as f64)))
}

/// `1/(d·p) Σ (G_a − G_b)²` for one pair of `d × d` Gram nodes.
pub fn style_term<T: Real>(g: &mut Graph<T>, generated: Var, target: Var, positions: usize) -> Result<Var> {
    let s = g.shape(generated).to_vec();
    if s.len() != 2 || s[0] != s[1] || g.shape(target) != s.as_slice() {
        return Err(Error::shape(format!(
            "Gram matrices {:?} and {:?} differ",
            s,
            g.shape(target)
        )));
    }
    if positions == 0 {
        return Err(Error::invalid("Gram matrix over zero positions"));
    }
    let d = g.sub(generated, target)?;
    let sq = g.square(d);
    let sum = g.sum(sq);
    Ok(g.scale(sum, lit::<T>(1.0 / (s[0] * positions) as f64)))
}

fn sum_vars<T: Real>(g: &mut Graph<T>, terms: &[Var]) -> Result<Var> {
    let mut it = terms.iter().copied();
    let first = it.next().ok_or_else(|| Error::invalid("no loss terms"))?;
    it.try_fold(first, |acc, t| g.add(acc, t))
}

/// Content loss over matching feature maps.
pub fn content_loss<T: Real>(generated: &[FeatureMap<T>], content: &[FeatureMap<T>]) -> Result<T> {
    if generated.len() != content.len() || generated.is_empty() {
        return Err(Error::shape("content loss needs equally many, non-empty feature maps"));
    }
    let mut g = Graph::new();
    let mut terms = Vec::new();
    for (a, b) in generated.iter().zip(content) {
        let va = g.constant(a.matrix.clone());
        let vb = g.constant(b.matrix.clone());
        terms.push(content_term(&mut g, va, vb)?);
    }
    let total = sum_vars(&mut g, &terms)?;
    Ok(g.value(total).data()[0])
}

/// Style loss over matching Gram matrices, combined by `layer_weights`.
pub fn style_loss<T: Real>(generated: &[GramMatrix<T>], style: &[GramMatrix<T>], layer_weights: &[f64]) -> Result<T> {
    if generated.len() != style.len() || generated.len() != layer_weights.len() || generated.is_empty() {
        return Err(Error::shape(format!(
            "style loss got {} generated Grams, {} style Grams and {} layer weights",
            generated.len(),
            style.len(),
            layer_weights.len()
        )));
    }
    let mut g = Graph::new();
    let mut terms = Vec::new();
    for ((a, b), &w) in generated.iter().zip(style).zip(layer_weights) {
        let va = g.constant(a.matrix.clone());
        let vb = g.constant(b.matrix.clone());
        let t = style_term(&mut g, va, vb, a.positions)?;
        terms.push(g.scale(t, lit(w)));
    }
    let total = sum_vars(&mut g, &terms)?;
    Ok(g.value(total).data()[0])
}

pub fn total_loss(content: f64, style: f64, weights: &StyleWeights) -> f64 {
    weights.alpha * content + weights.beta * style
}

/// Fixed targets for one optimization: content feature maps and style Grams.
#[derive(Clone, Debug)]
pub struct StyleTargets<T: Real = f32> {
    pub content_maps: Vec<Tensor<T>>,
    pub style_grams: Vec<Tensor<T>>,
}

/// Loss nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveVars {
    pub content: Var,
    pub style: Var,
    pub total: Var,
}

fn taps_of(network: &FeatureNetwork) -> Vec<usize> {
    let mut taps = network.style_taps.clone();
    taps.push(network.content_tap);
    taps
}

/// Computes the targets for `content` and `style` (both CHW, matching channels).
pub fn prepare_targets<T: Real>(network: &FeatureNetwork, content: &Tensor<T>, style: &Tensor<T>) -> Result<StyleTargets<T>> {
    let taps = taps_of(network);
    let n_style = network.style_taps.len();
    let mut g = Graph::new();
    let c = g.constant(content.clone());
    let c_maps = network.forward_taps(&mut g, c, &taps)?;
    let s = g.constant(style.clone());
    let s_maps = network.forward_taps(&mut g, s, &network.style_taps)?;
    let mut style_grams = Vec::with_capacity(n_style);
    for m in s_maps {
        let gm = g.gram(m)?;
        style_grams.push(g.value(gm).clone());
    }
    Ok(StyleTargets {
        content_maps: vec![g.value(c_maps[n_style]).clone()],
        style_grams,
    })
}

/// Records the full objective for the image node `x`.
pub fn objective<T: Real>(
    g: &mut Graph<T>,
    network: &FeatureNetwork,
    x: Var,
    targets: &StyleTargets<T>,
    weights: &StyleWeights,
) -> Result<ObjectiveVars> {
    if weights.layer_weights.len() != network.style_taps.len() {
        return Err(Error::invalid(format!(
            "{} layer weights for {} style taps",
            weights.layer_weights.len(),
            network.style_taps.len()
        )));
    }
    let maps = network.forward_taps(g, x, &taps_of(network))?;
    let n_style = network.style_taps.len();
    let mut style_terms = Vec::with_capacity(n_style);
    for ((&m, target), &w) in maps[..n_style].iter().zip(&targets.style_grams).zip(&weights.layer_weights) {
        let p = g.shape(m)[1];
        let gm = g.gram(m)?;
        let t = g.constant(target.clone());
        let term = style_term(g, gm, t, p)?;
        style_terms.push(g.scale(term, lit(w)));
    }
    let style = sum_vars(g, &style_terms)?;
    let target = g.constant(targets.content_maps[0].clone());
    let content = content_term(g, maps[n_style], target)?;
    let a = g.scale(content, lit(weights.alpha));
    let b = g.scale(style, lit(weights.beta));
    let total = g.add(a, b)?;
    Ok(ObjectiveVars { content, style, total })
}

/// Result of one optimization, with the total loss before each step and
/// after the last one (`iterations + 1` entries).
#[derive(Clone, Debug, PartialEq)]
pub struct StyleOutcome {
    pub image: Image,
    pub losses: Vec<f64>,
}

/// Repeats a texture swatch to cover `height × width`.
pub fn tile(swatch: &Image, height: usize, width: usize) -> Image {
    if swatch.height() == height && swatch.width() == width {
        return swatch.clone();
    }
    let c = swatch.channels();
    let mut data = Vec::with_capacity(c * height * width);
    let src = swatch.data();
    let plane = swatch.height() * swatch.width();
    for ch in 0..c {
        for y in 0..height {
            for x in 0..width {
                data.push(src[ch * plane + (y % swatch.height()) * swatch.width() + x % swatch.width()]);
            }
        }
    }
    Image::new(c, height, width, data).expect("tiling preserves the value range")
}

fn network_input(image: &Image, network: &FeatureNetwork) -> Result<Image> {
    match (image.channels(), network.in_channels()) {
        (a, b) if a == b => Ok(image.clone()),
        (1, 3) => Ok(image.to_rgb()),
        (a, b) => Err(Error::shape(format!("image has {a} channels, network expects {b}"))),
    }
}

/// Style transfer with a per-step callback `(step, total_loss)`.
pub fn run_style_transfer_with(
    content: &Image,
    style: &Image,
    network: &FeatureNetwork,
    weights: &StyleWeights,
    settings: &TransferSettings,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<StyleOutcome> {
    weights.validate()?;
    if settings.iterations == 0 {
        return Ok(StyleOutcome {
            image: content.clone(),
            losses: Vec::new(),
        });
    }
    let content_in = network_input(content, network)?;
    let style_in = tile(&network_input(style, network)?, content.height(), content.width());
    let targets = prepare_targets::<f32>(network, &content_in.to_tensor(), &style_in.to_tensor())?;

    let mut pixels: Tensor<f32> = content_in.to_tensor();
    let mut adam = AdamState::new(AdamConfig::pixels().with_lr(settings.learning_rate), [&pixels]);
    let mut losses = Vec::with_capacity(settings.iterations + 1);
    for step in 0..=settings.iterations {
        let mut g = Graph::new();
        let x = g.param(pixels.clone());
        let obj = objective(&mut g, network, x, &targets, weights)?;
        let loss = g.value(obj.total).data()[0] as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                component: format!("style loss at step {step}"),
            });
        }
        losses.push(loss);
        progress(step, loss);
        if step == settings.iterations {
            break;
        }
        g.backward(obj.total)?;
        let grad = g.grad(x).expect("image is a parameter");
        adam_step(&mut [&mut pixels], &[grad], &mut adam)?;
        for v in pixels.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    debug!(
        "style transfer: loss {:.4e} -> {:.4e} in {} steps",
        losses[0],
        losses[settings.iterations],
        settings.iterations
    );
    Ok(StyleOutcome {
        image: Image::from_tensor(&pixels)?,
        losses,
    })
}

pub fn run_style_transfer(
    content: &Image,
    style: &Image,
    network: &FeatureNetwork,
    weights: &StyleWeights,
    settings: &TransferSettings,
) -> Result<StyleOutcome> {
    run_style_transfer_with(content, style, network, weights, settings, &mut |_, _| {})
}

#[derive(Clone, Debug)]
pub struct SplitOutcome {
    pub image: Image,
    pub palette: Palette,
    pub regions: Vec<ColorRegion>,
    /// One entry per region, in region order.
    pub region_outcomes: Vec<StyleOutcome>,
}

/// Progress of a split run: region index, region count, step, loss.
pub type SplitProgress<'a> = &'a mut dyn FnMut(usize, usize, usize, f64);

/// Split style transfer over an already-extracted palette.
pub fn run_split_with_palette(
    content: &Image,
    palette: &Palette,
    assignment: &StyleAssignment,
    network: &FeatureNetwork,
    weights: &StyleWeights,
    progress: SplitProgress<'_>,
) -> Result<SplitOutcome> {
    let regions = colorsplit::split(content, palette)?;
    if let Some(r) = (0..regions.len()).find(|r| !assignment.styles.contains_key(r)) {
        return Err(Error::invalid(format!("region {r} has no assigned style")));
    }
    if let Some(extra) = assignment.styles.keys().find(|&&k| k >= regions.len()) {
        return Err(Error::invalid(format!(
            "style assigned to region {extra}, but the palette has {} regions",
            regions.len()
        )));
    }
    let n = regions.len();
    let mut outcomes = Vec::with_capacity(n);
    for region in &regions {
        let style = &assignment.styles[&region.index];
        let out = run_style_transfer_with(
            &region.sub_image,
            style,
            network,
            weights,
            &assignment.settings,
            &mut |step, loss| progress(region.index, n, step, loss),
        )?;
        outcomes.push(out);
    }
    let styled: Vec<Image> = outcomes.iter().map(|o| o.image.clone()).collect();
    let image = colorsplit::recombine(&styled, &regions)?;
    Ok(SplitOutcome {
        image,
        palette: palette.clone(),
        regions,
        region_outcomes: outcomes,
    })
}

/// Quantize, split, style each region with its assigned swatch, recombine.
pub fn run_split_style_transfer(
    content: &Image,
    assignment: &StyleAssignment,
    network: &FeatureNetwork,
    weights: &StyleWeights,
    max_colors: usize,
    tolerance: f32,
) -> Result<SplitOutcome> {
    let palette = colorsplit::quantize_palette(content, max_colors, tolerance)?;
    run_split_with_palette(content, &palette, assignment, network, weights, &mut |_, _, _, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_default_network, extract_features, gram, NetworkSource};
    use approx::assert_relative_eq;

    fn fm(layer: usize, d: usize, p: usize, data: Vec<f64>) -> FeatureMap<f64> {
        FeatureMap {
            layer,
            matrix: Tensor::from_vec(&[d, p], data).unwrap(),
        }
    }

    #[test]
    fn content_loss_perturbation() {
        let a = fm(5, 2, 3, vec![0.1, 0.5, -0.2, 1.0, 0.0, 0.3]);
        assert_eq!(content_loss(&[a.clone()], &[a.clone()]).unwrap(), 0.0);
        let delta = 0.37;
        let b = FeatureMap {
            layer: 5,
            matrix: a.matrix.map(|v| v + delta),
        };
        assert_relative_eq!(content_loss(&[b], &[a]).unwrap(), delta * delta, max_relative = 1e-12);
    }

    #[test]
    fn style_loss_hand_arithmetic() {
        let g0 = GramMatrix {
            layer: 1,
            matrix: Tensor::<f64>::from_vec(&[2, 2], vec![5.0, 2.0, 2.0, 2.0]).unwrap(),
            positions: 3,
        };
        let mut g1 = g0.clone();
        g1.matrix.data_mut()[1] += 1.0;
        assert_relative_eq!(style_loss(&[g1], &[g0.clone()], &[1.0]).unwrap(), 1.0 / 6.0, max_relative = 1e-12);
        let z = GramMatrix {
            matrix: Tensor::zeros(&[2, 2]),
            ..g0
        };
        assert_eq!(style_loss(&[z.clone()], &[z], &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn style_loss_zero_for_identical_image() {
        let net = build_default_network(2, NetworkSource::RandomFeatures).unwrap();
        let img = Image::from_fn_rgb(16, 16, |y, x| [(y as f32) / 16.0, (x as f32) / 16.0, 0.5]).unwrap();
        let grams: Vec<_> = extract_features::<f64>(&img, &net, &net.style_taps)
            .unwrap()
            .iter()
            .map(gram)
            .collect();
        assert_eq!(style_loss(&grams, &grams, &[0.25; 4]).unwrap(), 0.0);
    }

    #[test]
    fn total_loss_linear() {
        let w = StyleWeights::new(1.0, 0.0, vec![1.0]).unwrap();
        assert_eq!(total_loss(3.0, 5.0, &w), 3.0);
        let w = StyleWeights::new(0.0, 1.0, vec![1.0]).unwrap();
        assert_eq!(total_loss(3.0, 5.0, &w), 5.0);
        let w2 = StyleWeights::new(0.0, 2.0, vec![1.0]).unwrap();
        assert_eq!(total_loss(3.0, 5.0, &w2), 2.0 * total_loss(3.0, 5.0, &w));
        assert!(StyleWeights::new(0.0, 0.0, vec![1.0]).is_err());
        assert!(StyleWeights::new(1.0, 1.0, vec![0.5, 0.4]).is_err());
    }

    #[test]
    fn zero_iterations_is_identity() {
        let net = build_default_network(1, NetworkSource::RandomFeatures).unwrap();
        let img = Image::from_fn_rgb(8, 8, |y, x| [0.1 * (y % 3) as f32, 0.5, 0.1 * (x % 5) as f32]).unwrap();
        let style = Image::filled(3, 4, 4, &[0.9, 0.1, 0.1]).unwrap();
        let settings = TransferSettings {
            iterations: 0,
            ..Default::default()
        };
        let out = run_style_transfer(&img, &style, &net, &StyleWeights::default(), &settings).unwrap();
        assert_eq!(out.image, img);
    }

    #[test]
    fn fixed_point_when_style_is_content() {
        let net = build_default_network(1, NetworkSource::RandomFeatures).unwrap();
        let img = Image::from_fn_rgb(16, 16, |y, x| [0.05 * (y % 7) as f32, 0.4, 0.06 * (x % 9) as f32]).unwrap();
        let weights = StyleWeights::new(0.0, 1.0, vec![0.25; 4]).unwrap();
        let settings = TransferSettings {
            iterations: 5,
            ..Default::default()
        };
        let out = run_style_transfer(&img, &img, &net, &weights, &settings).unwrap();
        assert_eq!(out.losses[0], 0.0);
        assert!(out.image.mean_abs_diff(&img).unwrap() < 1e-6);
    }

    #[test]
    fn tiling_repeats_swatch() {
        let s = Image::from_fn_rgb(2, 3, |y, x| [y as f32 * 0.5, x as f32 * 0.25, 0.0]).unwrap();
        let t = tile(&s, 5, 7);
        assert_eq!(t.rgb(4, 6), s.rgb(0, 0));
        assert_eq!(t.rgb(3, 5), s.rgb(1, 2));
    }

    #[test]
    fn missing_assignment_names_region() {
        let net = build_default_network(1, NetworkSource::RandomFeatures).unwrap();
        let img = Image::from_fn_rgb(8, 8, |_, x| if x < 4 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] }).unwrap();
        let mut styles = BTreeMap::new();
        styles.insert(0, Image::filled(3, 4, 4, &[0.5, 0.5, 0.5]).unwrap());
        let a = StyleAssignment {
            styles,
            settings: TransferSettings::default(),
        };
        let err = run_split_style_transfer(&img, &a, &net, &StyleWeights::default(), 8, 0.08)
            .unwrap_err()
            .to_string();
        assert!(err.contains("region 1"), "{err}");
    }
}
