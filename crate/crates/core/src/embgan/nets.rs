use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{lit, Graph, Real, SpectralState, Tensor, Var};

const INIT_STD: f64 = 0.02;
const NORM_EPS: f64 = 1e-5;
const LEAK: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Image channels `c`.
    pub channels: usize,
    /// Embedding channels `k` appended to input and output.
    pub embed_channels: usize,
    pub base_filters: usize,
    pub downsamples: usize,
    pub res_blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            embed_channels: 1,
            base_filters: 16,
            downsamples: 2,
            res_blocks: 4,
        }
    }
}

impl GeneratorConfig {
    pub fn total_channels(&self) -> usize {
        self.channels + self.embed_channels
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_factor(&self) -> usize {
        1 << self.downsamples
    }

    /// Smallest accepted side length.
    pub fn min_size(&self) -> usize {
        (2 * self.size_factor()).max(4)
    }

    /// Nearest side length the generator accepts.
    pub fn nearest_valid(&self, n: usize) -> usize {
        let f = self.size_factor();
        (((n + f / 2) / f) * f).max(self.min_size())
    }

    pub fn check_size(&self, height: usize, width: usize) -> Result<()> {
        let f = self.size_factor();
        for (what, n) in [("height", height), ("width", width)] {
            if n % f != 0 || n < self.min_size() {
                return Err(Error::shape(format!(
                    "{what} {n} is not accepted by the generator (needs a multiple of {f}, at least {}); nearest valid size is {}",
                    self.min_size(),
                    self.nearest_valid(n)
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.base_filters == 0 {
            return Err(Error::invalid("generator needs channels and filters"));
        }
        if self.downsamples > 4 {
            return Err(Error::invalid("at most 4 downsampling stages"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub channels: usize,
    pub base_filters: usize,
    pub layers: usize,
    /// Power iterations per forward pass.
    pub power_iterations: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            base_filters: 8,
            layers: 4,
            power_iterations: 1,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 || self.channels == 0 || self.base_filters == 0 {
            return Err(Error::invalid("discriminator needs at least 2 layers, channels and filters"));
        }
        Ok(())
    }

    /// `(c_in, c_out, kernel, stride)` for layer `i`: strided 4×4 convs
    /// down to the last two layers, which are 3×3 stride 1; the last has a
    /// single output channel.
    fn layer(&self, i: usize) -> (usize, usize, usize, usize) {
        let c_in = if i == 0 { self.channels } else { self.base_filters << (i - 1) };
        let c_out = if i + 1 == self.layers { 1 } else { self.base_filters << i };
        if i + 2 < self.layers {
            (c_in, c_out, 4, 2)
        } else {
            (c_in, c_out, 3, 1)
        }
    }
}

pub type Params<T> = Vec<(String, Tensor<T>)>;

fn bind<T: Real>(g: &mut Graph<T>, params: &Params<T>, trainable: bool) -> Vec<Var> {
    params
        .iter()
        .map(|(_, t)| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
        .collect()
}

fn cast_params<T: Real, U: Real>(params: &Params<T>) -> Params<U> {
    params.iter().map(|(n, t)| (n.clone(), t.cast())).collect()
}

/// Residual translator with instance norm and reflection padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T: Real = f32> {
    pub config: GeneratorConfig,
    pub params: Params<T>,
}

impl<T: Real> Generator<T> {
    pub fn new<R: Rng + ?Sized>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let nf = config.base_filters;
        let ct = config.total_channels();
        let mut params = Vec::new();
        let mut w = |name: String, shape: &[usize]| params.push((name, Tensor::randn(shape, INIT_STD, rng)));
        w("in.weight".into(), &[nf, ct, 7, 7]);
        for i in 0..config.downsamples {
            w(format!("down{i}.weight"), &[nf << (i + 1), nf << i, 3, 3]);
        }
        let inner = nf << config.downsamples;
        for b in 0..config.res_blocks {
            w(format!("res{b}.a.weight"), &[inner, inner, 3, 3]);
            w(format!("res{b}.b.weight"), &[inner, inner, 3, 3]);
        }
        for i in 0..config.downsamples {
            w(format!("up{i}.weight"), &[inner >> i, inner >> (i + 1), 4, 4]);
        }
        w("out.weight".into(), &[ct, nf + ct, 7, 7]);
        params.push(("out.bias".into(), Tensor::zeros(&[ct])));
        Ok(Self { config, params })
    }

    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            config: self.config.clone(),
            params: cast_params(&self.params),
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        bind(g, &self.params, trainable)
    }

    /// Records the forward pass of a `(c+k) × h × w` input. Image channels
    /// come out in `[0, 1]`; embedding channels are linear.
    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], input: Var) -> Result<Var> {
        let cfg = &self.config;
        let s = g.shape(input).to_vec();
        if s.len() != 3 || s[0] != cfg.total_channels() {
            return Err(Error::shape(format!(
                "generator expects {} channels ({} image + {} embedding), got shape {s:?}",
                cfg.total_channels(),
                cfg.channels,
                cfg.embed_channels
            )));
        }
        cfg.check_size(s[1], s[2])?;
        let eps = lit::<T>(NORM_EPS);
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("parameter list matches the layout");

        let x = g.reflect_pad(input, 3)?;
        let x = g.conv2d(x, next(), 1, 0)?;
        let x = g.instance_norm(x, eps)?;
        let mut x = g.relu(x);
        for _ in 0..cfg.downsamples {
            let y = g.conv2d(x, next(), 2, 1)?;
            let y = g.instance_norm(y, eps)?;
            x = g.relu(y);
        }
        for _ in 0..cfg.res_blocks {
            let y = g.reflect_pad(x, 1)?;
            let y = g.conv2d(y, next(), 1, 0)?;
            let y = g.instance_norm(y, eps)?;
            let y = g.relu(y);
            let y = g.reflect_pad(y, 1)?;
            let y = g.conv2d(y, next(), 1, 0)?;
            let y = g.instance_norm(y, eps)?;
            x = g.add(x, y)?;
        }
        for _ in 0..cfg.downsamples {
            let y = g.conv_transpose2d(x, next(), 2, 1)?;
            let y = g.instance_norm(y, eps)?;
            x = g.relu(y);
        }
        // The input skips to the output layer so absolute colors, which
        // instance norm discards, stay available.
        let x = g.concat_channels(&[x, input])?;
        let y = g.reflect_pad(x, 3)?;
        let y = g.conv2d(y, next(), 1, 0)?;
        let y = g.channel_bias(y, next())?;

        let img = g.slice_channels(y, 0, cfg.channels)?;
        let img = g.tanh(img);
        let img = g.add_scalar(img, T::one());
        let img = g.scale(img, lit(0.5));
        if cfg.embed_channels == 0 {
            return Ok(img);
        }
        let emb = g.slice_channels(y, cfg.channels, cfg.embed_channels)?;
        g.concat_channels(&[img, emb])
    }

    /// Value-only forward pass.
    pub fn apply(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.constant(input.clone());
        let y = self.forward(&mut g, &vars, x)?;
        Ok(g.value(y).clone())
    }
}

/// Patch discriminator with spectral normalization on every convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T: Real = f32> {
    pub config: DiscriminatorConfig,
    pub params: Params<T>,
    pub spectral: Vec<SpectralState>,
}

impl<T: Real> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(config: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        let mut spectral = Vec::new();
        for i in 0..config.layers {
            let (c_in, c_out, k, _) = config.layer(i);
            params.push((format!("c{i}.weight"), Tensor::randn(&[c_out, c_in, k, k], INIT_STD, rng)));
            params.push((format!("c{i}.bias"), Tensor::zeros(&[c_out])));
            spectral.push(SpectralState::new(c_out, rng.random()).with_iterations(config.power_iterations));
        }
        Ok(Self {
            config,
            params,
            spectral,
        })
    }

    pub fn cast<U: Real>(&self) -> Discriminator<U> {
        Discriminator {
            config: self.config.clone(),
            params: cast_params(&self.params),
            spectral: self.spectral.clone(),
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        bind(g, &self.params, trainable)
    }

    /// Records the forward pass up to the pre-sigmoid logit map. Each call
    /// advances the persisted power-iteration state.
    pub fn forward_logits(&mut self, g: &mut Graph<T>, vars: &[Var], image: Var) -> Result<Var> {
        let s = g.shape(image).to_vec();
        if s.len() != 3 || s[0] != self.config.channels {
            return Err(Error::shape(format!(
                "discriminator expects {} channels, got shape {s:?}",
                self.config.channels
            )));
        }
        let mut x = image;
        for i in 0..self.config.layers {
            let (_, _, _, stride) = self.config.layer(i);
            let (w, _) = g.spectral_norm(vars[2 * i], &mut self.spectral[i])?;
            let y = g.conv2d(x, w, stride, 1)?;
            let y = g.channel_bias(y, vars[2 * i + 1])?;
            x = if i + 1 == self.config.layers { y } else { g.leaky_relu(y, lit(LEAK)) };
        }
        Ok(x)
    }

    /// Probability map in `(0, 1)`.
    pub fn forward(&mut self, g: &mut Graph<T>, vars: &[Var], image: Var) -> Result<Var> {
        let l = self.forward_logits(g, vars, image)?;
        Ok(g.sigmoid(l))
    }

    /// Value-only probability map.
    pub fn apply(&mut self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.constant(image.clone());
        let y = self.forward(&mut g, &vars, x)?;
        Ok(g.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input(c: usize, h: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::rand_uniform(&[c, h, h], 0.0, 1.0, &mut rng)
    }

    #[test]
    fn generator_shape_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gen = Generator::<f32>::new(GeneratorConfig::default(), &mut rng).unwrap();
        let x = input(4, 32, 2);
        let y = gen.apply(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data()[..3 * 32 * 32].iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(y, gen.apply(&x).unwrap());
        let again = Generator::<f32>::new(GeneratorConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(again.apply(&x).unwrap(), y);
    }

    #[test]
    fn generator_rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gen = Generator::<f32>::new(GeneratorConfig::default(), &mut rng).unwrap();
        assert!(gen.apply(&input(3, 32, 0)).is_err());
        let err = gen.apply(&input(4, 30, 0)).unwrap_err().to_string();
        assert!(err.contains("nearest valid size is 32"), "{err}");
    }

    #[test]
    fn discriminator_outputs_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut d = Discriminator::<f32>::new(DiscriminatorConfig::default(), &mut rng).unwrap();
        let p = d.apply(&input(3, 32, 5)).unwrap();
        assert_eq!(p.shape(), &[1, 8, 8]);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(d.apply(&input(4, 32, 5)).is_err());
    }
}
