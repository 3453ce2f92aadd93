//! Stitch swatch library: a directory of PNGs whose file stems are stitch ids.
//!
//! A small procedural set is provided so the tools work without a real
//! swatch collection.

use std::f32::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use super::{list_pngs, Image};
use crate::error::{Error, Result};

/// Side length of the procedural swatches.
pub const SWATCH_SIZE: usize = 48;

/// A stitch id and the PNG it was found at.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwatchEntry {
    pub id: String,
    pub path: PathBuf,
}

/// Enumerates `*.png` files in `dir`, sorted by id.
pub fn list_swatches(dir: impl AsRef<Path>) -> Result<Vec<SwatchEntry>> {
    let mut out: Vec<SwatchEntry> = list_pngs(dir)?
        .into_iter()
        .filter_map(|path| {
            let id = path.file_stem()?.to_str()?.to_string();
            Some(SwatchEntry { id, path })
        })
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Valid ids are non-empty and limited to `[A-Za-z0-9_-]`.
pub fn is_valid_stitch_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn render(base: [f32; 3], f: impl Fn(f32, f32) -> f32) -> Image {
    let n = SWATCH_SIZE;
    let plane = n * n;
    let mut data = vec![0.0; 3 * plane];
    for y in 0..n {
        for x in 0..n {
            let l = f(y as f32, x as f32).clamp(0.0, 1.0);
            for c in 0..3 {
                data[c * plane + y * n + x] = (base[c] * (0.45 + 0.55 * l)).clamp(0.0, 1.0);
            }
        }
    }
    Image::new(3, n, n, data).expect("swatch dimensions are fixed")
}

/// The built-in procedural swatches as `(id, image)` pairs.
pub fn procedural_swatches() -> Vec<(String, Image)> {
    let wave = |t: f32, period: f32| 0.5 + 0.5 * (2.0 * PI * t / period).sin();
    vec![
        // Long parallel diagonal floats.
        ("satin".into(), render([0.90, 0.78, 0.55], move |y, x| wave(x + y, 5.0))),
        // Short horizontal stitches in staggered rows.
        (
            "tatami".into(),
            render([0.55, 0.75, 0.90], move |y, x| {
                let row = (y / 4.0).floor();
                let shift = if row as i32 % 2 == 0 { 0.0 } else { 4.0 };
                let along = wave(x + shift, 8.0).powf(0.3);
                let across = wave(y + 1.0, 4.0);
                along * across
            }),
        ),
        // Crossing diagonals on a square grid.
        (
            "cross".into(),
            render([0.85, 0.45, 0.45], move |y, x| {
                let (u, v) = ((x % 8.0) - 3.5, (y % 8.0) - 3.5);
                let d = (u - v).abs().min((u + v).abs());
                (1.0 - d / 2.0).max(0.15)
            }),
        ),
        // Dashed running stitch on a plain ground.
        (
            "running".into(),
            render([0.60, 0.85, 0.60], move |y, x| {
                let on_row = (y % 6.0) < 2.0;
                let on_dash = (x + 3.0 * (y / 6.0).floor()) % 8.0 < 5.0;
                if on_row && on_dash {
                    1.0
                } else {
                    0.25
                }
            }),
        ),
        // Vertical loops of chain stitch.
        (
            "chain".into(),
            render([0.80, 0.65, 0.85], move |y, x| {
                let (u, v) = ((x % 6.0) - 2.5, (y % 8.0) - 3.5);
                let r = (u * u / 6.0 + v * v / 12.0).sqrt();
                1.0 - (r - 0.8).abs().min(1.0)
            }),
        ),
    ]
}

/// Writes the procedural swatches into `dir`, returning their entries.
pub fn write_procedural_swatches(dir: impl AsRef<Path>) -> Result<Vec<SwatchEntry>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    procedural_swatches()
        .into_iter()
        .map(|(id, img)| {
            let path = dir.join(format!("{id}.png"));
            img.save(&path)?;
            Ok(SwatchEntry { id, path })
        })
        .collect()
}
