use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{DatasetManifest, Domain, Image};
use crate::error::{Error, Result};
use crate::tensor::{adam_step, lit, AdamConfig, AdamState, Graph, Tensor, Var};

use super::losses::{d_objective, g_objective, image_channels, with_embedding, GanLoss, LossComponents, LossWeights};
use super::nets::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Params};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub weights: LossWeights,
    pub gan_loss: GanLoss,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Write a checkpoint after every this many epochs (and always at the end).
    pub checkpoint_every: usize,
    /// Training images are resized to this square size.
    pub image_size: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            weights: LossWeights::default(),
            gan_loss: GanLoss::default(),
            adam: AdamConfig::gan(),
            batch_size: 1,
            epochs: 5,
            seed: 0,
            checkpoint_every: 1,
            image_size: 32,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.weights.validate()?;
        if self.generator.channels != self.discriminator.channels {
            return Err(Error::invalid("generator and discriminator disagree on image channels"));
        }
        if self.generator.channels != 1 && self.generator.channels != 3 {
            return Err(Error::invalid("images have 1 or 3 channels"));
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::invalid("batch_size and checkpoint_every must be positive"));
        }
        self.generator.check_size(self.image_size, self.image_size)
    }
}

/// Which generator to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Flat image → embroidery (G1).
    #[serde(rename = "x2y")]
    XtoY,
    /// Embroidery → flat image (G2).
    #[serde(rename = "y2x")]
    YtoX,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x2y" | "xtoy" | "x->y" => Ok(Direction::XtoY),
            "y2x" | "ytox" | "y->x" => Ok(Direction::YtoX),
            _ => Err(Error::invalid(format!("unknown direction {s:?}; use x2y or y2x"))),
        }
    }
}

/// One metrics log line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossComponents,
}

/// Unpaired X and Y images with zero embedding planes appended.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbBatch {
    pub x: Vec<Tensor<f32>>,
    pub y: Vec<Tensor<f32>>,
}

fn prepare(image: &Image, cfg: &GeneratorConfig) -> Result<Tensor<f32>> {
    let img = match (image.channels(), cfg.channels) {
        (a, b) if a == b => image.clone(),
        (1, 3) => image.to_rgb(),
        (a, b) => return Err(Error::shape(format!("image has {a} channels, generator expects {b}"))),
    };
    with_embedding(&img.to_tensor(), cfg.embed_channels)
}

impl EmbBatch {
    pub fn new(x: &[Image], y: &[Image], cfg: &GeneratorConfig) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::invalid(format!("batch needs equally many X and Y images, got {} and {}", x.len(), y.len())));
        }
        let first = &x[0];
        if x.iter().chain(y).any(|i| i.height() != first.height() || i.width() != first.width()) {
            return Err(Error::shape("batch images differ in size"));
        }
        Ok(Self {
            x: x.iter().map(|i| prepare(i, cfg)).collect::<Result<_>>()?,
            y: y.iter().map(|i| prepare(i, cfg)).collect::<Result<_>>()?,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Both translators, both discriminators, their optimizers and counters.
#[derive(Clone, Debug, PartialEq)]
pub struct GanState {
    pub config: GanConfig,
    pub g1: Generator,
    pub g2: Generator,
    pub d1: Discriminator,
    pub d2: Discriminator,
    pub opt_g1: AdamState,
    pub opt_g2: AdamState,
    pub opt_d1: AdamState,
    pub opt_d2: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps.
    pub step: u64,
}

fn adam_for(params: &Params<f32>, config: AdamConfig) -> AdamState {
    AdamState::new(config, params.iter().map(|(_, t)| t))
}

fn update(params: &mut Params<f32>, g: &Graph<f32>, vars: &[Var], opt: &mut AdamState) -> Result<()> {
    let grads: Vec<Tensor<f32>> = params
        .iter()
        .zip(vars)
        .map(|((_, t), &v)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let mut ps: Vec<&mut Tensor<f32>> = params.iter_mut().map(|(_, t)| t).collect();
    adam_step(&mut ps, &grads, opt)
}

fn mean_var(g: &mut Graph<f32>, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(g.scale(acc, 1.0 / terms.len() as f32))
}

fn scalar(g: &Graph<f32>, v: Var) -> f64 {
    g.value(v).data()[0] as f64
}

impl GanState {
    pub fn new(config: GanConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let g1 = Generator::new(config.generator.clone(), &mut rng)?;
        let g2 = Generator::new(config.generator.clone(), &mut rng)?;
        let d1 = Discriminator::new(config.discriminator.clone(), &mut rng)?;
        let d2 = Discriminator::new(config.discriminator.clone(), &mut rng)?;
        Ok(Self {
            opt_g1: adam_for(&g1.params, config.adam),
            opt_g2: adam_for(&g2.params, config.adam),
            opt_d1: adam_for(&d1.params, config.adam),
            opt_d2: adam_for(&d2.params, config.adam),
            config,
            g1,
            g2,
            d1,
            d2,
            epoch: 0,
            step: 0,
        })
    }

    /// One discriminator update (both D, ascending the adversarial
    /// objective) followed by one generator update (both G, descending the
    /// full generator objective).
    pub fn train_step(&mut self, batch: &EmbBatch) -> Result<MetricsRecord> {
        if batch.is_empty() || batch.x.len() != batch.y.len() {
            return Err(Error::invalid("empty or unbalanced batch"));
        }
        let c = self.config.generator.channels;
        let k = self.config.generator.embed_channels;
        let kind = self.config.gan_loss;
        let w = self.config.weights;
        let expected = self.config.generator.total_channels();
        if let Some(t) = batch.x.iter().chain(&batch.y).find(|t| t.shape()[0] != expected) {
            return Err(Error::shape(format!("batch tensor {:?} lacks the embedding planes", t.shape())));
        }

        // Generator forward passes.
        let mut gg = Graph::<f32>::new();
        let v1 = self.g1.bind(&mut gg, true);
        let v2 = self.g2.bind(&mut gg, true);
        let (mut cyc1, mut cyc2, mut idt, mut emb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let (mut fakes_y, mut fakes_x, mut reals_x, mut reals_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (xb, yb) in batch.x.iter().zip(&batch.y) {
            let s = xb.shape();
            let zeros = (k > 0).then(|| Tensor::<f32>::zeros(&[k, s[1], s[2]]));
            let x_in = gg.constant(xb.clone());
            let y_in = gg.constant(yb.clone());
            let x_img = gg.constant(image_channels(xb, c));
            let y_img = gg.constant(image_channels(yb, c));
            let reembed = |g: &mut Graph<f32>, img: Var| -> Result<Var> {
                match &zeros {
                    Some(z) => {
                        let z = g.constant(z.clone());
                        g.concat_channels(&[img, z])
                    }
                    None => Ok(img),
                }
            };

            let fy = self.g1.forward(&mut gg, &v1, x_in)?;
            let fy_img = gg.slice_channels(fy, 0, c)?;
            let fx = self.g2.forward(&mut gg, &v2, y_in)?;
            let fx_img = gg.slice_channels(fx, 0, c)?;

            let fy_in = reembed(&mut gg, fy_img)?;
            let rx = self.g2.forward(&mut gg, &v2, fy_in)?;
            let rx_img = gg.slice_channels(rx, 0, c)?;
            cyc1.push(gg.l1(rx_img, x_img)?);
            let fx_in = reembed(&mut gg, fx_img)?;
            let ry = self.g1.forward(&mut gg, &v1, fx_in)?;
            let ry_img = gg.slice_channels(ry, 0, c)?;
            cyc2.push(gg.l1(ry_img, y_img)?);

            let ix = self.g2.forward(&mut gg, &v2, x_in)?;
            let ix_img = gg.slice_channels(ix, 0, c)?;
            let iy = self.g1.forward(&mut gg, &v1, y_in)?;
            let iy_img = gg.slice_channels(iy, 0, c)?;
            let a = gg.l1(ix_img, x_img)?;
            let b = gg.l1(iy_img, y_img)?;
            idt.push(gg.add(a, b)?);

            if k > 0 {
                let ey = gg.slice_channels(fy, c, k)?;
                let ey = gg.abs(ey);
                let ey = gg.mean(ey);
                let ex = gg.slice_channels(fx, c, k)?;
                let ex = gg.abs(ex);
                let ex = gg.mean(ex);
                emb.push(gg.add(ey, ex)?);
            }
            fakes_y.push(fy_img);
            fakes_x.push(fx_img);
            reals_x.push(image_channels(xb, c));
            reals_y.push(image_channels(yb, c));
        }

        // Discriminator update on detached fakes.
        let mut gd = Graph::<f32>::new();
        let u1 = self.d1.bind(&mut gd, true);
        let u2 = self.d2.bind(&mut gd, true);
        let (mut d1_terms, mut d2_terms) = (Vec::new(), Vec::new());
        for b in 0..batch.len() {
            let real_y = gd.constant(reals_y[b].clone());
            let fake_y = gd.constant(gg.value(fakes_y[b]).clone());
            let lr = self.d1.forward_logits(&mut gd, &u1, real_y)?;
            let lf = self.d1.forward_logits(&mut gd, &u1, fake_y)?;
            d1_terms.push(d_objective(&mut gd, lr, lf, kind)?);
            let real_x = gd.constant(reals_x[b].clone());
            let fake_x = gd.constant(gg.value(fakes_x[b]).clone());
            let lr = self.d2.forward_logits(&mut gd, &u2, real_x)?;
            let lf = self.d2.forward_logits(&mut gd, &u2, fake_x)?;
            d2_terms.push(d_objective(&mut gd, lr, lf, kind)?);
        }
        let d1 = mean_var(&mut gd, &d1_terms)?;
        let d2 = mean_var(&mut gd, &d2_terms)?;
        let mut losses = LossComponents {
            d1: scalar(&gd, d1),
            d2: scalar(&gd, d2),
            ..Default::default()
        };
        losses.check_finite()?;
        let d_sum = gd.add(d1, d2)?;
        let d_loss = gd.scale(d_sum, -1.0);
        gd.backward(d_loss)?;
        update(&mut self.d1.params, &gd, &u1, &mut self.opt_d1)?;
        update(&mut self.d2.params, &gd, &u2, &mut self.opt_d2)?;

        // Generator update against the updated discriminators.
        let c1 = self.d1.bind(&mut gg, false);
        let c2 = self.d2.bind(&mut gg, false);
        let (mut g1_terms, mut g2_terms) = (Vec::new(), Vec::new());
        for b in 0..batch.len() {
            let l = self.d1.forward_logits(&mut gg, &c1, fakes_y[b])?;
            g1_terms.push(g_objective(&mut gg, l, kind));
            let l = self.d2.forward_logits(&mut gg, &c2, fakes_x[b])?;
            g2_terms.push(g_objective(&mut gg, l, kind));
        }
        let g1 = mean_var(&mut gg, &g1_terms)?;
        let g2 = mean_var(&mut gg, &g2_terms)?;
        let cyc1 = mean_var(&mut gg, &cyc1)?;
        let cyc2 = mean_var(&mut gg, &cyc2)?;
        let idt = mean_var(&mut gg, &idt)?;
        let emb = if k > 0 { Some(mean_var(&mut gg, &emb)?) } else { None };
        losses.g1 = scalar(&gg, g1);
        losses.g2 = scalar(&gg, g2);
        losses.cyc1 = scalar(&gg, cyc1);
        losses.cyc2 = scalar(&gg, cyc2);
        losses.idt = scalar(&gg, idt);
        losses.emb = emb.map_or(0.0, |e| scalar(&gg, e));
        losses.check_finite()?;

        let adv = gg.add(g1, g2)?;
        let cyc = gg.add(cyc1, cyc2)?;
        let cyc = gg.scale(cyc, lit(w.lambda_cyc));
        let idt = gg.scale(idt, lit(w.lambda_idt));
        let mut total = gg.add(adv, cyc)?;
        total = gg.add(total, idt)?;
        if let Some(e) = emb {
            let e = gg.scale(e, lit(w.lambda_emb));
            total = gg.add(total, e)?;
        }
        gg.backward(total)?;
        update(&mut self.g1.params, &gg, &v1, &mut self.opt_g1)?;
        update(&mut self.g2.params, &gg, &v2, &mut self.opt_g2)?;

        self.step += 1;
        Ok(MetricsRecord {
            step: self.step,
            epoch: self.epoch + 1,
            losses,
        })
    }

    /// Runs one generator on an image of any accepted size.
    pub fn translate(&self, image: &Image, direction: Direction) -> Result<Image> {
        let gen = match direction {
            Direction::XtoY => &self.g1,
            Direction::YtoX => &self.g2,
        };
        gen.config.check_size(image.height(), image.width())?;
        let out = gen.apply(&prepare(image, &gen.config)?)?;
        Image::from_tensor(&image_channels(&out, gen.config.channels))
    }

    /// One pass over `x` and `y` in seeded shuffled order; the shorter
    /// domain wraps around. Each step's record goes to `sink`.
    pub fn train_epoch(
        &mut self,
        x: &[Image],
        y: &[Image],
        sink: &mut dyn FnMut(&MetricsRecord) -> Result<()>,
    ) -> Result<EpochSummary> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::invalid("both domains need at least one training image"));
        }
        let cfg = self.config.generator.clone();
        let xs: Vec<Tensor<f32>> = x.iter().map(|i| prepare(i, &cfg)).collect::<Result<_>>()?;
        let ys: Vec<Tensor<f32>> = y.iter().map(|i| prepare(i, &cfg)).collect::<Result<_>>()?;
        let e = self.epoch as u64;
        let ox = epoch_order(xs.len(), self.config.seed, 2 * e);
        let oy = epoch_order(ys.len(), self.config.seed, 2 * e + 1);
        let bs = self.config.batch_size;
        let steps = xs.len().max(ys.len()).div_ceil(bs);
        let mut sum = [0.0f64; 8];
        for s in 0..steps {
            let batch = EmbBatch {
                x: (0..bs).map(|t| xs[ox[(s * bs + t) % xs.len()]].clone()).collect(),
                y: (0..bs).map(|t| ys[oy[(s * bs + t) % ys.len()]].clone()).collect(),
            };
            let rec = self.train_step(&batch)?;
            for (acc, (_, v)) in sum.iter_mut().zip(rec.losses.named()) {
                *acc += v;
            }
            sink(&rec)?;
        }
        self.epoch += 1;
        let m = sum.map(|v| v / steps as f64);
        Ok(EpochSummary {
            epoch: self.epoch,
            steps,
            mean: LossComponents {
                d1: m[0],
                d2: m[1],
                g1: m[2],
                g2: m[3],
                cyc1: m[4],
                cyc2: m[5],
                idt: m[6],
                emb: m[7],
            },
        })
    }
}

/// Seeded permutation of `0..n`; `stream` separates epochs and domains.
pub fn epoch_order(n: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean: LossComponents,
}

impl EpochSummary {
    /// Mean of the two cycle losses.
    pub fn cycle(&self) -> f64 {
        0.5 * (self.mean.cyc1 + self.mean.cyc2)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub summaries: Vec<EpochSummary>,
    pub skipped: usize,
}

/// Where [`train`] writes checkpoints and metrics.
pub const METRICS_FILE: &str = "metrics.ndjson";

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("checkpoint-epoch{epoch:04}.stwt"))
}

fn load_training_images(files: &[PathBuf], cfg: &GanConfig) -> (Vec<Image>, usize) {
    let mut out = Vec::with_capacity(files.len());
    let mut skipped = 0;
    for f in files {
        match Image::load(f) {
            Ok(img) => {
                let img = if img.channels() == 1 && cfg.generator.channels == 3 { img.to_rgb() } else { img };
                let n = cfg.image_size;
                match if img.height() == n && img.width() == n { Ok(img) } else { img.resize(n, n) } {
                    Ok(img) => out.push(img),
                    Err(e) => {
                        warn!("skipping {}: {e}", f.display());
                        skipped += 1;
                    }
                }
            }
            Err(e) => {
                warn!("skipping {}: {e}", f.display());
                skipped += 1;
            }
        }
    }
    (out, skipped)
}

/// Keeps the first `keep` records of an existing metrics log.
fn truncate_metrics(path: &Path, keep: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .take(keep as usize)
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains on the manifest's training split, writing checkpoints and a
/// metrics log into `out_dir`. With `resume`, continues from that
/// checkpoint up to `config.epochs`.
pub fn train(
    config: &GanConfig,
    manifest: &DatasetManifest,
    out_dir: &Path,
    resume: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochSummary),
) -> Result<TrainOutcome> {
    manifest.validate()?;
    let mut state = match resume {
        Some(path) => {
            let mut s = GanState::load(path)?;
            s.config.epochs = config.epochs;
            s
        }
        None => GanState::new(config.clone())?,
    };
    let x_files = manifest.train_files(Domain::X);
    let y_files = manifest.train_files(Domain::Y);
    let (x, sx) = load_training_images(&x_files, &state.config);
    let (y, sy) = load_training_images(&y_files, &state.config);
    let total = x_files.len() + y_files.len();
    let skipped = sx + sy;
    if skipped * 10 > total {
        return Err(Error::invalid(format!("{skipped} of {total} training images could not be read")));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join(METRICS_FILE);
    if resume.is_some() {
        truncate_metrics(&metrics_path, state.step)?;
    } else {
        File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    }
    let file = OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut log = BufWriter::new(file);

    let mut summaries = Vec::new();
    let mut last = resume.map(Path::to_path_buf);
    while state.epoch < state.config.epochs {
        let summary = state.train_epoch(&x, &y, &mut |rec| {
            serde_json::to_writer(&mut log, rec)?;
            log.write_all(b"\n").map_err(|e| Error::io(&metrics_path, e))
        })?;
        log.flush().map_err(|e| Error::io(&metrics_path, e))?;
        info!(
            "epoch {}: cycle {:.4}, identity {:.4}, d {:.4}/{:.4}",
            summary.epoch, summary.cycle(), summary.mean.idt, summary.mean.d1, summary.mean.d2
        );
        on_epoch(&summary);
        summaries.push(summary);
        if state.epoch % state.config.checkpoint_every == 0 || state.epoch == state.config.epochs {
            let path = checkpoint_path(out_dir, state.epoch);
            state.save(&path)?;
            last = Some(path);
        }
    }
    let checkpoint = match last {
        Some(p) => p,
        None => {
            let path = checkpoint_path(out_dir, state.epoch);
            state.save(&path)?;
            path
        }
    };
    Ok(TrainOutcome {
        checkpoint,
        metrics: metrics_path,
        summaries,
        skipped,
    })
}
