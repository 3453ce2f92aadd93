//! Finite-difference verification of every differentiable operation and
//! every training loss, in 64-bit precision.
//!
//! Each case draws a fresh random instance per seed and reports the worst
//! relative error over all seeds. Parameter-gradient cases check one
//! parameter tensor per seed, cycling through the network's tensors.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::embgan::{d_objective, g_objective, Discriminator, DiscriminatorConfig, GanLoss, Generator, GeneratorConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureNetwork, LayerSpec};
use crate::styletransfer::{content_term, objective, prepare_targets, style_term, StyleWeights};
use crate::tensor::{grad_check, grad_check_kinks, Graph, KinkReport, SpectralState, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_SEEDS: usize = 10;
pub const TOLERANCE: f64 = 1e-4;

type Rng64 = ChaCha8Rng;
type CaseFn = fn(&mut Rng64, u64, f64) -> Result<f64>;

pub struct Case {
    pub name: &'static str,
    run: CaseFn,
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub seeds: usize,
    pub max_rel_error: f64,
    pub elapsed_ms: u128,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn randn(rng: &mut Rng64, shape: &[usize]) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Values with magnitude in `[0.1, 1]` and random sign, away from kinks at 0.
fn away_from_zero(rng: &mut Rng64, shape: &[usize]) -> Tensor<f64> {
    let t = Tensor::<f64>::rand_uniform(shape, 0.1, 1.0, rng);
    let signs: Vec<f64> = (0..t.len()).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    Tensor::from_vec(shape, t.data().iter().zip(signs).map(|(a, s)| a * s).collect()).expect("same shape")
}

/// `Σ v ⊙ R` for a fixed random `R`, so every output coordinate matters.
fn project(g: &mut Graph<f64>, v: Var, r: &Tensor<f64>) -> Result<Var> {
    let r = g.constant(r.clone());
    let p = g.mul(v, r)?;
    Ok(g.sum(p))
}

macro_rules! unary_case {
    ($name:literal, $input:ident, $op:expr) => {
        unary_case!($name, $input, [2, 3, 4], [2, 3, 4], $op)
    };
    ($name:literal, $input:ident, $in:expr, $out:expr, $op:expr) => {
        Case {
            name: $name,
            run: |rng, _, step| {
                let x = $input(rng, &$in);
                let r = randn(rng, &$out);
                grad_check(
                    |g, x| {
                        #[allow(clippy::redundant_closure_call)]
                        let y = ($op)(g, x)?;
                        project(g, y, &r)
                    },
                    &x,
                    step,
                )
            },
        }
    };
}

fn positive(rng: &mut Rng64, shape: &[usize]) -> Tensor<f64> {
    Tensor::rand_uniform(shape, 0.2, 2.0, rng)
}

fn tiny_generator(rng: &mut Rng64) -> Result<Generator<f64>> {
    let cfg = GeneratorConfig {
        channels: 3,
        embed_channels: 1,
        base_filters: 2,
        downsamples: 1,
        res_blocks: 1,
    };
    let mut gen = Generator::<f64>::new(cfg, rng)?;
    // Larger weights than the training init so no gradient is negligibly small.
    for (_, t) in &mut gen.params {
        *t = t.scale(10.0);
    }
    Ok(gen)
}

fn tiny_discriminator(rng: &mut Rng64) -> Result<Discriminator<f64>> {
    let cfg = DiscriminatorConfig {
        channels: 3,
        base_filters: 2,
        layers: 3,
        power_iterations: 1,
    };
    let mut d = Discriminator::<f64>::new(cfg, rng)?;
    for s in &mut d.spectral {
        s.iterations = 500;
    }
    Ok(d)
}

fn image_with_embedding(rng: &mut Rng64) -> (Tensor<f64>, Tensor<f64>) {
    let img = Tensor::<f64>::rand_uniform(&[3, 8, 8], 0.0, 1.0, rng);
    let with = crate::embgan::with_embedding(&img, 1).expect("CHW image");
    (img, with)
}

/// Binds `gen` as constants except parameter `which`, which becomes `p`.
fn bind_with(g: &mut Graph<f64>, gen: &Generator<f64>, which: usize, p: Var) -> Vec<Var> {
    let mut vars = gen.bind(g, false);
    vars[which] = p;
    vars
}

fn reembed(g: &mut Graph<f64>, img: Var) -> Result<Var> {
    let z = g.constant(Tensor::zeros(&[1, 8, 8]));
    g.concat_channels(&[img, z])
}

/// Loss terms of one generator pass, as a function of `G1`'s parameter `which`.
#[derive(Clone, Copy)]
enum GenLoss {
    Cycle,
    Identity,
    Embedding,
    Adversarial,
    Total,
}

/// Fresh instances drawn when a sample straddles a ReLU or `|·|` kink.
const MAX_REDRAWS: usize = 20;

/// Generator-loss check at a point where the loss is smooth within `±step`.
///
/// The generator composes many ReLUs and L1 terms, so a random instance
/// occasionally puts a pre-activation within `step` of zero; central
/// differences are meaningless there. Such instances are redrawn.
fn gen_loss_case(rng: &mut Rng64, seed: u64, step: f64, kind: GenLoss) -> Result<f64> {
    for attempt in 0..=MAX_REDRAWS {
        let r = gen_loss_once(rng, seed, step, kind)?;
        if r.kinks == 0 {
            if attempt > 0 {
                log::debug!("seed {seed}: smooth instance after {attempt} redraw(s)");
            }
            return Ok(r.max_rel_error);
        }
    }
    Err(Error::contract(format!("seed {seed}: no smooth instance in {MAX_REDRAWS} redraws")))
}

fn gen_loss_once(rng: &mut Rng64, seed: u64, step: f64, kind: GenLoss) -> Result<KinkReport> {
    let g1 = tiny_generator(rng)?;
    let g2 = tiny_generator(rng)?;
    let d1 = tiny_discriminator(rng)?;
    let (x_img, x_in) = image_with_embedding(rng);
    let (y_img, y_in) = image_with_embedding(rng);
    let which = seed as usize % g1.params.len();
    let param = g1.params[which].1.clone();
    grad_check_kinks(
        |g, p| {
            let v1 = bind_with(g, &g1, which, p);
            let v2 = g2.bind(g, false);
            let x = g.constant(x_in.clone());
            let y = g.constant(y_in.clone());
            let xi = g.constant(x_img.clone());
            let yi = g.constant(y_img.clone());
            let fy = g1.forward(g, &v1, x)?;
            let fy_img = g.slice_channels(fy, 0, 3)?;
            let cycle = {
                let back = reembed(g, fy_img)?;
                let rx = g2.forward(g, &v2, back)?;
                let rx = g.slice_channels(rx, 0, 3)?;
                let a = g.l1(rx, xi)?;
                let fx = g2.forward(g, &v2, y)?;
                let fx = g.slice_channels(fx, 0, 3)?;
                let back = reembed(g, fx)?;
                let ry = g1.forward(g, &v1, back)?;
                let ry = g.slice_channels(ry, 0, 3)?;
                let b = g.l1(ry, yi)?;
                g.add(a, b)?
            };
            let identity = {
                let iy = g1.forward(g, &v1, y)?;
                let iy = g.slice_channels(iy, 0, 3)?;
                g.l1(iy, yi)?
            };
            let embedding = {
                let e = g.slice_channels(fy, 3, 1)?;
                let e = g.abs(e);
                g.mean(e)
            };
            let adversarial = {
                let mut d = d1.clone();
                let w = d.bind(g, false);
                let l = d.forward_logits(g, &w, fy_img)?;
                g_objective(g, l, GanLoss::Log)
            };
            Ok(match kind {
                GenLoss::Cycle => cycle,
                GenLoss::Identity => identity,
                GenLoss::Embedding => embedding,
                GenLoss::Adversarial => adversarial,
                GenLoss::Total => {
                    let c = g.scale(cycle, 10.0);
                    let i = g.scale(identity, 5.0);
                    let t = g.add(adversarial, c)?;
                    let t = g.add(t, i)?;
                    g.add(t, embedding)?
                }
            })
        },
        &param,
        step,
        1e-8,
        TOLERANCE,
    )
}

fn tiny_feature_network(rng: &mut Rng64) -> Result<FeatureNetwork> {
    FeatureNetwork::random(3, vec![LayerSpec::conv3(4).pooled(), LayerSpec::conv3(4)], rng.random())
}

pub fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "add",
            run: |rng, _, step| {
                let (x, c, r) = (randn(rng, &[3, 4]), randn(rng, &[3, 4]), randn(rng, &[3, 4]));
                grad_check(
                    |g, x| {
                        let c = g.constant(c.clone());
                        let y = g.add(x, c)?;
                        let y = g.add(y, x)?;
                        project(g, y, &r)
                    },
                    &x,
                    step,
                )
            },
        },
        Case {
            name: "sub",
            run: |rng, _, step| {
                let (x, c, r) = (randn(rng, &[3, 4]), randn(rng, &[3, 4]), randn(rng, &[3, 4]));
                grad_check(
                    |g, x| {
                        let c = g.constant(c.clone());
                        let y = g.sub(c, x)?;
                        project(g, y, &r)
                    },
                    &x,
                    step,
                )
            },
        },
        Case {
            name: "mul",
            run: |rng, _, step| {
                let (x, c, r) = (randn(rng, &[3, 4]), randn(rng, &[3, 4]), randn(rng, &[3, 4]));
                grad_check(
                    |g, x| {
                        let c = g.constant(c.clone());
                        let y = g.mul(x, c)?;
                        let y = g.mul(y, x)?;
                        project(g, y, &r)
                    },
                    &x,
                    step,
                )
            },
        },
        unary_case!("scale", randn, |g: &mut Graph<f64>, x| -> Result<Var> { Ok(g.scale(x, -1.7)) }),
        unary_case!("add_scalar", randn, |g: &mut Graph<f64>, x| -> Result<Var> {
            let y = g.add_scalar(x, 0.3);
            Ok(g.square(y))
        }),
        unary_case!("sum", randn, [2, 3, 4], [1], |g: &mut Graph<f64>, x| -> Result<Var> {
            let s = g.sum(x);
            let s = g.square(s);
            let xx = g.square(x);
            let s2 = g.sum(xx);
            g.add(s, s2)
        }),
        unary_case!("mean", randn, [2, 3, 4], [1], |g: &mut Graph<f64>, x| -> Result<Var> {
            let m = g.mean(x);
            let m = g.square(m);
            let xx = g.square(x);
            let s2 = g.mean(xx);
            g.add(m, s2)
        }),
        unary_case!("abs", away_from_zero, |g: &mut Graph<f64>, x| -> Result<Var> { Ok(g.abs(x)) }),
        unary_case!("square", randn, |g: &mut Graph<f64>, x| -> Result<Var> { Ok(g.square(x)) }),
        unary_case!("log", positive, |g: &mut Graph<f64>, x| -> Result<Var> { g.log(x) }),
        unary_case!("sigmoid", randn, |g: &mut Graph<f64>, x| -> Result<Var> { Ok(g.sigmoid(x)) }),
        unary_case!("tanh", randn, |g: &mut Graph<f64>, x| -> Result<Var> { Ok(g.tanh(x)) }),
        unary_case!("relu", away_from_zero, |g: &mut Graph<f64>, x| -> Result<Var> { Ok(g.relu(x)) }),
        unary_case!("leaky_relu", away_from_zero, |g: &mut Graph<f64>, x| -> Result<Var> {
            Ok(g.leaky_relu(x, 0.2))
        }),
        unary_case!("softplus", randn, |g: &mut Graph<f64>, x| -> Result<Var> { Ok(g.softplus(x)) }),
        unary_case!("reshape", randn, |g: &mut Graph<f64>, x| -> Result<Var> {
            let y = g.reshape(x, &[6, 4])?;
            let y = g.square(y);
            g.reshape(y, &[2, 3, 4])
        }),
        Case {
            name: "l1",
            run: |rng, _, step| {
                let x = randn(rng, &[2, 3, 3]);
                let offset = away_from_zero(rng, &[2, 3, 3]);
                let target = Tensor::from_vec(x.shape(), x.data().iter().zip(offset.data()).map(|(a, b)| a + b).collect())?;
                grad_check(
                    |g, x| {
                        let t = g.constant(target.clone());
                        g.l1(x, t)
                    },
                    &x,
                    step,
                )
            },
        },
        Case {
            name: "conv2d/input",
            run: |rng, seed, step| {
                let stride = 1 + seed as usize % 2;
                let x = randn(rng, &[3, 7, 6]);
                let k = randn(rng, &[4, 3, 3, 3]);
                let r = randn(rng, &[4, 7usize.div_ceil(stride), 6usize.div_ceil(stride)]);
                grad_check(
                    |g, x| {
                        let k = g.constant(k.clone());
                        let y = g.conv2d(x, k, stride, 1)?;
                        project(g, y, &r)
                    },
                    &x,
                    step,
                )
            },
        },
        Case {
            name: "conv2d/kernel",
            run: |rng, seed, step| {
                let stride = 1 + seed as usize % 2;
                let x = randn(rng, &[3, 7, 6]);
                let k = randn(rng, &[4, 3, 3, 3]);
                let r = randn(rng, &[4, 7usize.div_ceil(stride), 6usize.div_ceil(stride)]);
                grad_check(
                    |g, k| {
                        let x = g.constant(x.clone());
                        let y = g.conv2d(x, k, stride, 1)?;
                        project(g, y, &r)
                    },
                    &k,
                    step,
                )
            },
        },
        Case {
            name: "conv_transpose2d/input",
            run: |rng, _, step| {
                let x = randn(rng, &[3, 4, 5]);
                let k = randn(rng, &[3, 2, 4, 4]);
                let r = randn(rng, &[2, 8, 10]);
                grad_check(
                    |g, x| {
                        let k = g.constant(k.clone());
                        let y = g.conv_transpose2d(x, k, 2, 1)?;
                        project(g, y, &r)
                    },
                    &x,
                    step,
                )
            },
        },
        Case {
            name: "conv_transpose2d/kernel",
            run: |rng, _, step| {
                let x = randn(rng, &[3, 4, 5]);
                let k = randn(rng, &[3, 2, 4, 4]);
                let r = randn(rng, &[2, 8, 10]);
                grad_check(
                    |g, k| {
                        let x = g.constant(x.clone());
                        let y = g.conv_transpose2d(x, k, 2, 1)?;
                        project(g, y, &r)
                    },
                    &k,
                    step,
                )
            },
        },
        Case {
            name: "channel_bias",
            run: |rng, _, step| {
                let x = randn(rng, &[3, 4, 4]);
                let b = randn(rng, &[3]);
                let r = randn(rng, &[3, 4, 4]);
                grad_check(
                    |g, b| {
                        let x = g.constant(x.clone());
                        let y = g.channel_bias(x, b)?;
                        let y = g.square(y);
                        project(g, y, &r)
                    },
                    &b,
                    step,
                )
            },
        },
        unary_case!("reflect_pad", randn, [2, 3, 4], [2, 7, 8], |g: &mut Graph<f64>, x| -> Result<Var> {
            let y = g.reflect_pad(x, 2)?;
            Ok(g.square(y))
        }),
        unary_case!("instance_norm", randn, |g: &mut Graph<f64>, x| -> Result<Var> {
            g.instance_norm(x, 1e-5)
        }),
        unary_case!("avg_pool2", randn, [2, 4, 6], [2, 2, 3], |g: &mut Graph<f64>, x| -> Result<Var> {
            let y = g.avg_pool2(x)?;
            Ok(g.square(y))
        }),
        Case {
            name: "gram",
            run: |rng, _, step| {
                let h = randn(rng, &[3, 7]);
                let r = randn(rng, &[3, 3]);
                grad_check(
                    |g, h| {
                        let gm = g.gram(h)?;
                        project(g, gm, &r)
                    },
                    &h,
                    step,
                )
            },
        },
        Case {
            name: "slice/concat_channels",
            run: |rng, _, step| {
                let x = randn(rng, &[4, 3, 3]);
                let c = randn(rng, &[2, 3, 3]);
                let r = randn(rng, &[5, 3, 3]);
                grad_check(
                    |g, x| {
                        let a = g.slice_channels(x, 1, 3)?;
                        let a = g.square(a);
                        let c = g.constant(c.clone());
                        let b = g.slice_channels(x, 0, 1)?;
                        let y = g.concat_channels(&[b, a, c])?;
                        let y = g.slice_channels(y, 0, 5)?;
                        project(g, y, &r)
                    },
                    &x,
                    step,
                )
            },
        },
        Case {
            name: "spectral_norm",
            run: |rng, seed, step| {
                let w = randn(rng, &[4, 2, 3, 3]);
                let state = SpectralState::new(4, seed).with_iterations(500);
                let r = randn(rng, &[4, 2, 3, 3]);
                grad_check(
                    |g, w| {
                        let mut s = state.clone();
                        let (y, _) = g.spectral_norm(w, &mut s)?;
                        project(g, y, &r)
                    },
                    &w,
                    step,
                )
            },
        },
        Case {
            name: "conv2d+instance_norm+tanh",
            run: |rng, _, step| {
                let x = randn(rng, &[2, 6, 6]);
                let k = randn(rng, &[3, 2, 3, 3]);
                let r = randn(rng, &[3, 6, 6]);
                grad_check(
                    |g, x| {
                        let k = g.constant(k.clone());
                        let y = g.conv2d(x, k, 1, 1)?;
                        let y = g.instance_norm(y, 1e-5)?;
                        let y = g.tanh(y);
                        project(g, y, &r)
                    },
                    &x,
                    step,
                )
            },
        },
        Case {
            name: "content_loss",
            run: |rng, _, step| {
                let net = tiny_feature_network(rng)?;
                let x = Tensor::<f64>::rand_uniform(&[3, 8, 8], 0.0, 1.0, rng);
                let content = Tensor::<f64>::rand_uniform(&[3, 8, 8], 0.0, 1.0, rng);
                let mut g0 = Graph::new();
                let c = g0.constant(content);
                let target = net.forward_taps(&mut g0, c, &[2])?[0];
                let target = g0.value(target).clone();
                grad_check(
                    |g, x| {
                        let m = net.forward_taps(g, x, &[2])?[0];
                        let t = g.constant(target.clone());
                        content_term(g, m, t)
                    },
                    &x,
                    step,
                )
            },
        },
        Case {
            name: "style_loss",
            run: |rng, _, step| {
                let net = tiny_feature_network(rng)?;
                let x = Tensor::<f64>::rand_uniform(&[3, 8, 8], 0.0, 1.0, rng);
                let style = Tensor::<f64>::rand_uniform(&[3, 8, 8], 0.0, 1.0, rng);
                let targets = prepare_targets(&net, &style, &style)?;
                grad_check(
                    |g, x| {
                        let maps = net.forward_taps(g, x, &[1, 2])?;
                        let mut total = None;
                        for (m, t) in maps.into_iter().zip(&targets.style_grams) {
                            let p = g.shape(m)[1];
                            let gm = g.gram(m)?;
                            let t = g.constant(t.clone());
                            let term = style_term(g, gm, t, p)?;
                            total = Some(match total {
                                None => term,
                                Some(acc) => g.add(acc, term)?,
                            });
                        }
                        Ok(total.expect("two taps"))
                    },
                    &x,
                    step,
                )
            },
        },
        Case {
            name: "style_total_loss",
            run: |rng, _, step| {
                let net = tiny_feature_network(rng)?;
                let x = Tensor::<f64>::rand_uniform(&[3, 8, 8], 0.0, 1.0, rng);
                let content = Tensor::<f64>::rand_uniform(&[3, 8, 8], 0.0, 1.0, rng);
                let style = Tensor::<f64>::rand_uniform(&[3, 8, 8], 0.0, 1.0, rng);
                let targets = prepare_targets(&net, &content, &style)?;
                let weights = StyleWeights::uniform(1.0, 10.0, net.style_taps.len())?;
                grad_check(|g, x| Ok(objective(g, &net, x, &targets, &weights)?.total), &x, step)
            },
        },
        Case {
            name: "adversarial_d",
            run: |rng, seed, step| {
                let logits = randn(rng, &[2, 3, 3]);
                let kind = [GanLoss::Log, GanLoss::LeastSquares][seed as usize % 2];
                grad_check(
                    |g, l| {
                        let real = g.slice_channels(l, 0, 1)?;
                        let fake = g.slice_channels(l, 1, 1)?;
                        d_objective(g, real, fake, kind)
                    },
                    &logits,
                    step,
                )
            },
        },
        Case {
            name: "adversarial_g",
            run: |rng, seed, step| gen_loss_case(rng, seed, step, GenLoss::Adversarial),
        },
        Case {
            name: "cycle_loss",
            run: |rng, seed, step| gen_loss_case(rng, seed, step, GenLoss::Cycle),
        },
        Case {
            name: "identity_loss",
            run: |rng, seed, step| gen_loss_case(rng, seed, step, GenLoss::Identity),
        },
        Case {
            name: "embedding_loss",
            run: |rng, seed, step| gen_loss_case(rng, seed, step, GenLoss::Embedding),
        },
        Case {
            name: "generator_total_objective",
            run: |rng, seed, step| gen_loss_case(rng, seed, step, GenLoss::Total),
        },
    ]
}

/// Runs the cases whose name contains `filter` (all when `None`) over
/// `seeds` seeds starting at `first_seed`.
pub fn run_suite(seeds: usize, first_seed: u64, step: f64, filter: Option<&str>) -> Result<Vec<CaseReport>> {
    let mut out = Vec::new();
    for (i, case) in cases().into_iter().enumerate() {
        if filter.is_some_and(|f| !case.name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let mut worst: f64 = 0.0;
        for s in 0..seeds as u64 {
            let seed = first_seed + s;
            let mut rng = Rng64::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ i as u64);
            let err = (case.run)(&mut rng, seed, step)?;
            worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
        }
        out.push(CaseReport {
            name: case.name.to_string(),
            seeds,
            max_rel_error: worst,
            elapsed_ms: Duration::as_millis(&start.elapsed()),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes_on_two_seeds() {
        for r in run_suite(2, 100, DEFAULT_STEP, None).unwrap() {
            assert!(r.passed(), "{} max relative error {:e}", r.name, r.max_rel_error);
        }
    }
}
