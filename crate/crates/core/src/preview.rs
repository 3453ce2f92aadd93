//! Interactive preview runs shared by the CLI and the service.
//!
//! Both methods work on a downscaled copy whose longer side is at most
//! `max_side`, then upscale back to the input size, so a preview always has
//! the dimensions of the image it was made from.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::colorsplit::Palette;
use crate::embgan::{Direction, GanState};
use crate::error::{Error, Result};
use crate::features::{build_default_network, NetworkSource};
use crate::styletransfer::{
    run_split_with_palette, run_style_transfer_with, SplitProgress, StyleAssignment, StyleWeights, TransferSettings,
};
use crate::Image;

pub const DEFAULT_PREVIEW_ITERATIONS: usize = 100;
pub const DEFAULT_WORKING_SIZE: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreviewMethod {
    SplitStyle,
    Embgan,
}

impl fmt::Display for PreviewMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PreviewMethod::SplitStyle => "split_style",
            PreviewMethod::Embgan => "embgan",
        })
    }
}

impl FromStr for PreviewMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split_style" | "split-style" => Ok(PreviewMethod::SplitStyle),
            "embgan" => Ok(PreviewMethod::Embgan),
            other => Err(Error::invalid(format!("unknown preview method '{other}' (expected split_style or embgan)"))),
        }
    }
}

/// Dimensions after shrinking so the longer side is at most `max_side`.
pub fn working_dims(height: usize, width: usize, max_side: usize) -> (usize, usize) {
    let longest = height.max(width);
    if max_side == 0 || longest <= max_side {
        return (height, width);
    }
    let s = max_side as f64 / longest as f64;
    let f = |n: usize| ((n as f64 * s).round() as usize).max(1);
    (f(height), f(width))
}

fn resized(image: &Image, height: usize, width: usize) -> Result<Image> {
    if image.height() == height && image.width() == width {
        Ok(image.clone())
    } else {
        image.resize(height, width)
    }
}

/// Split style transfer at working resolution.
///
/// The feature network is the random-feature network for `settings.seed`.
/// `progress` receives `(region, regions, step, total_loss)` for every
/// evaluated step.
pub fn split_style_preview(
    content: &Image,
    palette: &Palette,
    styles: &BTreeMap<usize, Image>,
    weights: &StyleWeights,
    settings: &TransferSettings,
    max_side: usize,
    progress: SplitProgress<'_>,
) -> Result<Image> {
    let network = build_default_network(settings.seed, NetworkSource::RandomFeatures)?;
    let (h, w) = working_dims(content.height(), content.width(), max_side);
    let small = resized(content, h, w)?;
    let assignment = StyleAssignment {
        styles: styles.clone(),
        settings: *settings,
    };
    let out = run_split_with_palette(&small, palette, &assignment, &network, weights, progress)?;
    resized(&out.image, content.height(), content.width())
}

/// Whole-image style transfer at working resolution, with the same network
/// choice as [`split_style_preview`]. `progress` receives `(step, total_loss)`.
pub fn neural_style_preview(
    content: &Image,
    style: &Image,
    weights: &StyleWeights,
    settings: &TransferSettings,
    max_side: usize,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<Image> {
    let network = build_default_network(settings.seed, NetworkSource::RandomFeatures)?;
    let (h, w) = working_dims(content.height(), content.width(), max_side);
    let out = run_style_transfer_with(&resized(content, h, w)?, style, &network, weights, settings, progress)?;
    resized(&out.image, content.height(), content.width())
}

/// Converts split progress callbacks into a non-decreasing completed fraction.
pub fn fraction_tracker<'a>(iterations: usize, sink: &'a mut dyn FnMut(f64)) -> impl FnMut(usize, usize, usize, f64) + 'a {
    let per_region = iterations + 1;
    let mut done = 0usize;
    move |_, n, _, _| {
        done += 1;
        sink((done as f64 / (n * per_region).max(1) as f64).min(1.0));
    }
}

/// Runs one EmbGAN generator at the nearest accepted working size.
pub fn embgan_preview(state: &GanState, image: &Image, direction: Direction, max_side: usize) -> Result<Image> {
    let cfg = match direction {
        Direction::XtoY => &state.g1.config,
        Direction::YtoX => &state.g2.config,
    };
    let (h, w) = working_dims(image.height(), image.width(), max_side);
    let (h, w) = (cfg.nearest_valid(h), cfg.nearest_valid(w));
    let out = state.translate(&resized(image, h, w)?, direction)?;
    resized(&out, image.height(), image.width())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorsplit::quantize_palette;

    #[test]
    fn working_dims_keep_aspect() {
        assert_eq!(working_dims(100, 50, 256), (100, 50));
        assert_eq!(working_dims(512, 256, 256), (256, 128));
        assert_eq!(working_dims(1000, 3, 256), (256, 1));
    }

    #[test]
    fn method_names_round_trip() {
        for m in [PreviewMethod::SplitStyle, PreviewMethod::Embgan] {
            assert_eq!(m.to_string().parse::<PreviewMethod>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{m}\""));
        }
        assert!("neural".parse::<PreviewMethod>().is_err());
    }

    #[test]
    fn split_preview_keeps_size_and_reports_progress() {
        let img = Image::from_fn_rgb(20, 12, |y, _| if y < 10 { [0.9, 0.1, 0.1] } else { [0.1, 0.1, 0.9] }).unwrap();
        let palette = quantize_palette(&img, 4, 0.05).unwrap();
        let swatch = Image::from_fn_rgb(4, 4, |y, x| if (x + y) % 2 == 0 { [1.0; 3] } else { [0.0; 3] }).unwrap();
        let styles = (0..palette.len()).map(|r| (r, swatch.clone())).collect();
        let settings = TransferSettings {
            iterations: 3,
            ..Default::default()
        };
        let mut seen = Vec::new();
        let out = {
            let mut sink = |p| seen.push(p);
            let mut tracker = fraction_tracker(settings.iterations, &mut sink);
            split_style_preview(&img, &palette, &styles, &StyleWeights::default(), &settings, 10, &mut tracker).unwrap()
        };
        assert_eq!((out.height(), out.width()), (20, 12));
        assert!(seen.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*seen.last().unwrap(), 1.0);

        // A single region reduces to whole-image transfer.
        let one = quantize_palette(&img, 1, 0.05).unwrap();
        let styles = [(0, swatch.clone())].into();
        let split = split_style_preview(&img, &one, &styles, &StyleWeights::default(), &settings, 10, &mut |_, _, _, _| {}).unwrap();
        let whole = neural_style_preview(&img, &swatch, &StyleWeights::default(), &settings, 10, &mut |_, _| {}).unwrap();
        assert_eq!(split, whole);
    }
}
