//! Procedural stand-in for an embroidery corpus.
//!
//! Domain X holds flat-color shape and glyph images with 2–4 colors. Domain Y
//! holds independently drawn images of the same family rendered with a stitch
//! texture: stripes with sinusoidal luminance modulation whose orientation is
//! fixed per thread color. Aligned (flat, stitched) pairs can be drawn
//! separately for evaluation.

use std::f32::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Image;
use crate::error::{Error, Result};

/// Thread colors available to the generator.
pub const THREAD_COLORS: [[f32; 3]; 8] = [
    [0.80, 0.20, 0.20],
    [0.20, 0.65, 0.30],
    [0.20, 0.30, 0.80],
    [0.85, 0.80, 0.25],
    [0.85, 0.85, 0.85],
    [0.20, 0.20, 0.25],
    [0.85, 0.50, 0.20],
    [0.55, 0.25, 0.70],
];

/// Stripe period in pixels.
pub const STRIPE_PERIOD: f32 = 4.0;
/// Peak fractional darkening at the stripe troughs.
pub const STRIPE_DEPTH: f32 = 0.4;

/// Stripe angle (radians) for a thread color index.
pub fn stripe_angle(color_index: usize) -> f32 {
    (color_index % 4) as f32 * PI / 4.0
}

/// Luminance factor of the stitch texture at `(y, x)` for a thread color.
pub fn stitch_factor(color_index: usize, y: usize, x: usize) -> f32 {
    let a = stripe_angle(color_index);
    let t = x as f32 * a.cos() + y as f32 * a.sin();
    let s = 0.5 + 0.5 * (2.0 * PI * t / STRIPE_PERIOD).sin();
    1.0 - STRIPE_DEPTH * s
}

/// One generated design: per-pixel thread labels and both renderings.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub size: usize,
    /// Index into [`THREAD_COLORS`] for every pixel, row-major.
    pub labels: Vec<usize>,
    pub flat: Image,
    pub stitched: Image,
}

impl SynthSample {
    pub fn distinct_colors(&self) -> Vec<usize> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Binary mask of the pixels drawn with thread `color_index`.
    pub fn mask(&self, color_index: usize) -> Vec<bool> {
        self.labels.iter().map(|&l| l == color_index).collect()
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Rect { y0: f32, x0: f32, y1: f32, x1: f32 },
    Ellipse { cy: f32, cx: f32, ry: f32, rx: f32 },
    /// Glyph-like strokes: an L, T or plus built from bars.
    Glyph { cy: f32, cx: f32, half: f32, stroke: f32, kind: u8 },
}

impl Shape {
    fn random<R: Rng>(size: f32, rng: &mut R) -> Shape {
        let lo = size * 0.15;
        let hi = size * 0.85;
        match rng.random_range(0..3) {
            0 => {
                let (a, b) = (rng.random_range(0.0..hi - lo), rng.random_range(0.0..hi - lo));
                let (c, d) = (rng.random_range(0.0..hi - lo), rng.random_range(0.0..hi - lo));
                let (y0, y1) = (lo + a.min(b), lo + a.max(b) + size * 0.1);
                let (x0, x1) = (lo + c.min(d), lo + c.max(d) + size * 0.1);
                Shape::Rect { y0, x0, y1, x1 }
            }
            1 => Shape::Ellipse {
                cy: rng.random_range(size * 0.3..size * 0.7),
                cx: rng.random_range(size * 0.3..size * 0.7),
                ry: rng.random_range(size * 0.12..size * 0.3),
                rx: rng.random_range(size * 0.12..size * 0.3),
            },
            _ => Shape::Glyph {
                cy: rng.random_range(size * 0.35..size * 0.65),
                cx: rng.random_range(size * 0.35..size * 0.65),
                half: rng.random_range(size * 0.18..size * 0.3),
                stroke: rng.random_range(size * 0.08..size * 0.14),
                kind: rng.random_range(0..3),
            },
        }
    }

    fn contains(&self, y: f32, x: f32) -> bool {
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Ellipse { cy, cx, ry, rx } => {
                let dy = (y - cy) / ry;
                let dx = (x - cx) / rx;
                dy * dy + dx * dx <= 1.0
            }
            Shape::Glyph { cy, cx, half, stroke, kind } => {
                let in_v = |px: f32| (x - px).abs() <= stroke / 2.0 && (y - cy).abs() <= half;
                let in_h = |py: f32| (y - py).abs() <= stroke / 2.0 && (x - cx).abs() <= half;
                match kind {
                    0 => in_v(cx - half) || in_h(cy + half),
                    1 => in_h(cy - half) || in_v(cx),
                    _ => in_h(cy) || in_v(cx),
                }
            }
        }
    }
}

/// Draws one design with 2–4 distinct thread colors.
pub fn synth_sample<R: Rng>(size: usize, rng: &mut R) -> SynthSample {
    loop {
        let n_colors = rng.random_range(2..=4);
        let mut colors: Vec<usize> = (0..THREAD_COLORS.len()).collect();
        // Partial Fisher-Yates for the first `n_colors` picks.
        for i in 0..n_colors {
            let j = rng.random_range(i..colors.len());
            colors.swap(i, j);
        }
        colors.truncate(n_colors);
        let shapes: Vec<Shape> = (1..n_colors).map(|_| Shape::random(size as f32, rng)).collect();
        let mut labels = vec![colors[0]; size * size];
        for y in 0..size {
            for x in 0..size {
                let (fy, fx) = (y as f32 + 0.5, x as f32 + 0.5);
                for (k, s) in shapes.iter().enumerate() {
                    if s.contains(fy, fx) {
                        labels[y * size + x] = colors[k + 1];
                    }
                }
            }
        }
        let sample = render(size, labels);
        if sample.distinct_colors().len() >= 2 {
            return sample;
        }
    }
}

fn render(size: usize, labels: Vec<usize>) -> SynthSample {
    let flat = Image::from_fn_rgb(size, size, |y, x| THREAD_COLORS[labels[y * size + x]]).expect("colors in range");
    let stitched = Image::from_fn_rgb(size, size, |y, x| {
        let l = labels[y * size + x];
        let f = stitch_factor(l, y, x);
        THREAD_COLORS[l].map(|c| c * f)
    })
    .expect("colors in range");
    SynthSample {
        size,
        labels,
        flat,
        stitched,
    }
}

/// An in-memory unpaired corpus plus aligned evaluation pairs.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub x: Vec<Image>,
    pub y: Vec<Image>,
    pub eval_pairs: Vec<SynthSample>,
}

fn check_params(n: usize, size: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid(format!("corpus needs at least 2 images per domain, got {n}")));
    }
    if size == 0 || !size.is_multiple_of(4) {
        return Err(Error::invalid(format!("image size {size} must be a positive multiple of 4")));
    }
    Ok(())
}

impl SyntheticCorpus {
    /// A pure function of its arguments. X, Y and the evaluation pairs come
    /// from three independent random streams, so X and Y are unpaired.
    pub fn generate(n: usize, size: usize, seed: u64, eval_pairs: usize) -> Result<Self> {
        check_params(n, size)?;
        let mut rx = ChaCha8Rng::seed_from_u64(seed);
        let mut ry = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0000_0000_0001);
        let mut re = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0000_0000_0002);
        let x = (0..n).map(|_| synth_sample(size, &mut rx).flat).collect();
        let y = (0..n).map(|_| synth_sample(size, &mut ry).stitched).collect();
        let eval_pairs = (0..eval_pairs).map(|_| synth_sample(size, &mut re)).collect();
        Ok(Self { x, y, eval_pairs })
    }
}

/// Where [`generate_synthetic_corpus`] put its files.
#[derive(Clone, Debug)]
pub struct CorpusLayout {
    pub root: PathBuf,
    pub x_dir: PathBuf,
    pub y_dir: PathBuf,
    pub eval_x_dir: PathBuf,
    pub eval_y_dir: PathBuf,
    pub files_written: usize,
}

/// Writes `root/x/*.png`, `root/y/*.png` and, when `eval_pairs > 0`,
/// `root/eval_pairs/{x,y}/*.png`.
pub fn generate_synthetic_corpus(
    n: usize,
    size: usize,
    seed: u64,
    eval_pairs: usize,
    root: impl AsRef<Path>,
) -> Result<CorpusLayout> {
    let corpus = SyntheticCorpus::generate(n, size, seed, eval_pairs)?;
    let root = root.as_ref().to_path_buf();
    let layout = CorpusLayout {
        x_dir: root.join("x"),
        y_dir: root.join("y"),
        eval_x_dir: root.join("eval_pairs").join("x"),
        eval_y_dir: root.join("eval_pairs").join("y"),
        root,
        files_written: 0,
    };
    let mut written = 0;
    let mut dirs = vec![&layout.x_dir, &layout.y_dir];
    if eval_pairs > 0 {
        dirs.extend([&layout.eval_x_dir, &layout.eval_y_dir]);
    }
    for d in dirs {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for (i, img) in corpus.x.iter().enumerate() {
        img.save(layout.x_dir.join(format!("{i:05}.png")))?;
        written += 1;
    }
    for (i, img) in corpus.y.iter().enumerate() {
        img.save(layout.y_dir.join(format!("{i:05}.png")))?;
        written += 1;
    }
    for (i, s) in corpus.eval_pairs.iter().enumerate() {
        s.flat.save(layout.eval_x_dir.join(format!("{i:05}.png")))?;
        s.stitched.save(layout.eval_y_dir.join(format!("{i:05}.png")))?;
        written += 2;
    }
    Ok(CorpusLayout {
        files_written: written,
        ..layout
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn distinct_pixels(img: &Image) -> usize {
        let mut seen: Vec<[u32; 3]> = (0..img.pixel_count())
            .map(|i| {
                let p: Vec<f32> = img.pixel(i).collect();
                [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()]
            })
            .collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    #[test]
    fn deterministic_and_counted() {
        let a = SyntheticCorpus::generate(20, 32, 3, 2).unwrap();
        let b = SyntheticCorpus::generate(20, 32, 3, 2).unwrap();
        assert_eq!(a.x.len(), 20);
        assert_eq!(a.y.len(), 20);
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        let c = SyntheticCorpus::generate(20, 32, 4, 0).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn flat_images_have_two_to_four_colors() {
        let c = SyntheticCorpus::generate(50, 32, 11, 0).unwrap();
        for img in &c.x {
            let k = distinct_pixels(img);
            assert!((2..=4).contains(&k), "{k} colors");
        }
    }

    #[test]
    fn stripes_cover_exactly_each_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let s = synth_sample(16, &mut rng);
            for color in s.distinct_colors() {
                let mask = s.mask(color);
                for (i, &inside) in mask.iter().enumerate() {
                    let (y, x) = (i / 16, i % 16);
                    let flat: Vec<f32> = s.flat.pixel(i).collect();
                    let st: Vec<f32> = s.stitched.pixel(i).collect();
                    if inside {
                        let f = stitch_factor(color, y, x);
                        for c in 0..3 {
                            assert_eq!(flat[c], THREAD_COLORS[color][c]);
                            assert!((st[c] - flat[c] * f).abs() < 1e-6);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(SyntheticCorpus::generate(1, 32, 0, 0).is_err());
        assert!(SyntheticCorpus::generate(4, 30, 0, 0).is_err());
    }
}
