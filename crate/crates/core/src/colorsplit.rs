//! Splitting an image into single-color regions and putting styled regions
//! back together.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataio::Image;
use crate::error::{Error, Result};

pub type Rgb = [f32; 3];

pub const DEFAULT_MAX_COLORS: usize = 8;
pub const DEFAULT_TOLERANCE: f32 = 0.08;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub colors: Vec<Rgb>,
    pub height: usize,
    pub width: usize,
}

impl Palette {
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }
}

/// Binary pixel mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Per-row run lengths, alternating unset/set and starting with an
    /// (possibly zero) unset run.
    pub fn to_rle_rows(&self) -> Vec<Vec<u32>> {
        self.bits
            .chunks(self.width)
            .map(|row| {
                let mut runs = Vec::new();
                let mut current = false;
                let mut len = 0u32;
                for &b in row {
                    if b == current {
                        len += 1;
                    } else {
                        runs.push(len);
                        current = b;
                        len = 1;
                    }
                }
                runs.push(len);
                runs
            })
            .collect()
    }

    pub fn from_rle_rows(width: usize, rows: &[Vec<u32>]) -> Result<Mask> {
        let mut bits = Vec::with_capacity(width * rows.len());
        for (y, runs) in rows.iter().enumerate() {
            let mut value = false;
            let start = bits.len();
            for &r in runs {
                bits.extend(std::iter::repeat_n(value, r as usize));
                value = !value;
            }
            if bits.len() - start != width {
                return Err(Error::invalid(format!(
                    "RLE row {y} covers {} pixels, expected {width}",
                    bits.len() - start
                )));
            }
        }
        Ok(Mask {
            height: rows.len(),
            width,
            bits,
        })
    }
}

/// One palette color, the pixels assigned to it, and its sub-image.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorRegion {
    pub index: usize,
    pub color: Rgb,
    pub mask: Mask,
    /// The source image where `mask` is set, the region's mean color elsewhere.
    pub sub_image: Image,
    pub fill: Vec<f32>,
}

impl ColorRegion {
    pub fn pixel_count(&self) -> usize {
        self.mask.count()
    }
}

fn dist2(a: &Rgb, b: &Rgb) -> f32 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Index of the nearest color; ties go to the lower index.
pub fn nearest(colors: &[Rgb], p: &Rgb) -> usize {
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for (i, c) in colors.iter().enumerate() {
        let d = dist2(c, p);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Distinct colors in first-seen raster order with their pixel counts.
fn distinct_colors(image: &Image) -> Vec<(Rgb, usize)> {
    let mut index: HashMap<[u32; 3], usize> = HashMap::new();
    let mut out: Vec<(Rgb, usize)> = Vec::new();
    for y in 0..image.height() {
        for x in 0..image.width() {
            let p = image.rgb(y, x);
            let key = p.map(f32::to_bits);
            match index.get(&key) {
                Some(&i) => out[i].1 += 1,
                None => {
                    index.insert(key, out.len());
                    out.push((p, 1));
                }
            }
        }
    }
    out
}

/// An axis-aligned cell of color space produced by median cut.
#[derive(Clone, Debug)]
pub struct ColorBox {
    /// Distinct colors in the cell with their pixel counts.
    pub colors: Vec<(Rgb, usize)>,
}

impl ColorBox {
    pub fn bounds(&self) -> (Rgb, Rgb) {
        let mut lo = [f32::INFINITY; 3];
        let mut hi = [f32::NEG_INFINITY; 3];
        for (c, _) in &self.colors {
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        (lo, hi)
    }

    fn widest_channel(&self) -> (usize, f32) {
        let (lo, hi) = self.bounds();
        let mut best = (0, hi[0] - lo[0]);
        for k in 1..3 {
            if hi[k] - lo[k] > best.1 {
                best = (k, hi[k] - lo[k]);
            }
        }
        best
    }

    pub fn pixels(&self) -> usize {
        self.colors.iter().map(|(_, n)| n).sum()
    }

    /// Pixel-count-weighted mean color.
    pub fn mean(&self) -> Rgb {
        let n = self.pixels() as f64;
        let mut acc = [0.0f64; 3];
        for (c, w) in &self.colors {
            for k in 0..3 {
                acc[k] += c[k] as f64 * *w as f64;
            }
        }
        acc.map(|v| (v / n) as f32)
    }
}

/// Median cut: repeatedly split the cell with the widest channel range at
/// its pixel-weighted median until there are `k` cells or none can split.
pub fn median_cut(colors: Vec<(Rgb, usize)>, k: usize) -> Vec<ColorBox> {
    let mut boxes = vec![ColorBox { colors }];
    while boxes.len() < k {
        let candidate = boxes
            .iter()
            .enumerate()
            .filter(|(_, b)| b.colors.len() > 1)
            .map(|(i, b)| (i, b.widest_channel()))
            .fold(None::<(usize, usize, f32)>, |best, (i, (ch, range))| match best {
                Some((_, _, r)) if r >= range => best,
                _ => Some((i, ch, range)),
            });
        let Some((i, ch, _)) = candidate else { break };
        let mut b = boxes.remove(i);
        b.colors.sort_by(|a, b| {
            a.0[ch]
                .total_cmp(&b.0[ch])
                .then_with(|| a.0.map(f32::to_bits).cmp(&b.0.map(f32::to_bits)))
        });
        let total = b.pixels();
        let mut cum = 0;
        let mut cut = b.colors.len() - 1;
        for (j, (_, n)) in b.colors.iter().enumerate() {
            cum += n;
            if 2 * cum >= total {
                cut = j + 1;
                break;
            }
        }
        let cut = cut.clamp(1, b.colors.len() - 1);
        let upper = b.colors.split_off(cut);
        boxes.insert(i, ColorBox { colors: upper });
        boxes.insert(i, b);
    }
    boxes
}

/// Extracts at most `max_colors` palette colors.
///
/// Images with few enough exactly-distinct colors keep them as-is; others
/// go through [`median_cut`]. Colors closer than `tolerance` (Euclidean RGB)
/// to a more frequent palette color are merged into it, and colors that end
/// up owning no pixel are dropped.
pub fn quantize_palette(image: &Image, max_colors: usize, tolerance: f32) -> Result<Palette> {
    if max_colors == 0 {
        return Err(Error::invalid("max_colors must be at least 1"));
    }
    if !(0.0..=1.0).contains(&tolerance) {
        return Err(Error::invalid(format!("tolerance {tolerance} outside [0, 1]")));
    }
    let distinct = distinct_colors(image);
    let mut weighted: Vec<(Rgb, usize)> = if distinct.len() <= max_colors {
        distinct
    } else {
        median_cut(distinct, max_colors)
            .into_iter()
            .map(|b| (b.mean(), b.pixels()))
            .collect()
    };
    // Most frequent first; stable so equal counts keep first-seen order.
    weighted.sort_by_key(|w| std::cmp::Reverse(w.1));
    let tol2 = tolerance * tolerance;
    let mut kept: Vec<Rgb> = Vec::new();
    for (c, _) in weighted {
        if kept.iter().all(|k| dist2(k, &c) > tol2) {
            kept.push(c);
        }
    }
    let mut used = vec![false; kept.len()];
    for y in 0..image.height() {
        for x in 0..image.width() {
            used[nearest(&kept, &image.rgb(y, x))] = true;
        }
    }
    let colors = kept.into_iter().zip(used).filter(|(_, u)| *u).map(|(c, _)| c).collect();
    Ok(Palette {
        colors,
        height: image.height(),
        width: image.width(),
    })
}

/// Assigns every pixel to its nearest palette color and builds one region per color.
pub fn split(image: &Image, palette: &Palette) -> Result<Vec<ColorRegion>> {
    if palette.is_empty() {
        return Err(Error::invalid("palette is empty"));
    }
    let (h, w) = (image.height(), image.width());
    let labels: Vec<usize> = (0..h * w).map(|i| nearest(&palette.colors, &image.rgb(i / w, i % w))).collect();
    let c = image.channels();
    let mut regions = Vec::with_capacity(palette.len());
    for (r, &color) in palette.colors.iter().enumerate() {
        let bits: Vec<bool> = labels.iter().map(|&l| l == r).collect();
        let n = bits.iter().filter(|&&b| b).count();
        let fill: Vec<f32> = if n == 0 {
            color[..c].to_vec()
        } else {
            let mut acc = vec![0.0f64; c];
            for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
                for (a, v) in acc.iter_mut().zip(image.pixel(i)) {
                    *a += v as f64;
                }
            }
            acc.iter().map(|a| (a / n as f64) as f32).collect()
        };
        let mut sub = image.clone();
        for (i, _) in bits.iter().enumerate().filter(|(_, &b)| !b) {
            sub.set_pixel(i, &fill);
        }
        regions.push(ColorRegion {
            index: r,
            color,
            mask: Mask { height: h, width: w, bits },
            sub_image: sub,
            fill,
        });
    }
    Ok(regions)
}

/// Checks that the region masks cover every pixel exactly once.
pub fn check_partition(regions: &[ColorRegion], height: usize, width: usize) -> Result<()> {
    let mut cover = vec![0u32; height * width];
    for r in regions {
        if r.mask.height != height || r.mask.width != width {
            return Err(Error::shape(format!("region {} mask has the wrong size", r.index)));
        }
        for (c, &b) in cover.iter_mut().zip(&r.mask.bits) {
            *c += b as u32;
        }
    }
    let bad = cover.iter().filter(|&&c| c != 1).count();
    if bad > 0 {
        return Err(Error::invalid(format!(
            "region masks do not partition the image: {bad} pixels covered zero or multiple times"
        )));
    }
    Ok(())
}

/// Writes each styled region's pixels where its mask is set.
pub fn recombine(styled: &[Image], regions: &[ColorRegion]) -> Result<Image> {
    if styled.len() != regions.len() {
        return Err(Error::invalid(format!(
            "{} styled images for {} regions",
            styled.len(),
            regions.len()
        )));
    }
    let first = styled.first().ok_or_else(|| Error::invalid("nothing to recombine"))?;
    if styled.iter().any(|s| !s.same_dims(first)) {
        return Err(Error::shape("styled images differ in size"));
    }
    check_partition(regions, first.height(), first.width())?;
    let mut out = first.clone();
    for (img, region) in styled.iter().zip(regions) {
        let mut px = Vec::with_capacity(img.channels());
        for (i, _) in region.mask.bits.iter().enumerate().filter(|(_, &b)| b) {
            px.clear();
            px.extend(img.pixel(i));
            out.set_pixel(i, &px);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RED: Rgb = [1.0, 0.0, 0.0];
    const BLUE: Rgb = [0.0, 0.0, 1.0];

    fn two_tone(h: usize, w: usize) -> Image {
        Image::from_fn_rgb(h, w, |_, x| if x < w / 2 { RED } else { BLUE }).unwrap()
    }

    #[test]
    fn exact_distinct_palette() {
        let img = Image::from_fn_rgb(2, 2, |y, _| if y == 0 { RED } else { BLUE }).unwrap();
        let p = quantize_palette(&img, 8, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(p.colors, vec![RED, BLUE]);
        let uni = Image::filled(3, 4, 4, &[0.3, 0.3, 0.3]).unwrap();
        assert_eq!(quantize_palette(&uni, 8, 0.08).unwrap().len(), 1);
        assert!(quantize_palette(&uni, 0, 0.08).is_err());
    }

    #[test]
    fn tolerance_merges_near_duplicates() {
        let img = Image::from_fn_rgb(4, 4, |y, x| {
            if y == 0 && x == 0 {
                [0.97, 0.02, 0.0]
            } else if x < 2 {
                RED
            } else {
                BLUE
            }
        })
        .unwrap();
        let p = quantize_palette(&img, 8, 0.08).unwrap();
        assert_eq!(p.len(), 2);
        let p = quantize_palette(&img, 8, 0.0).unwrap();
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn split_two_tone() {
        let img = two_tone(4, 6);
        let p = quantize_palette(&img, 8, 0.08).unwrap();
        let regions = split(&img, &p).unwrap();
        assert_eq!(regions.len(), 2);
        for (a, b) in regions[0].mask.bits.iter().zip(&regions[1].mask.bits) {
            assert_ne!(a, b);
        }
        assert_eq!(regions[0].pixel_count(), 12);
    }

    #[test]
    fn single_region_is_whole_image() {
        let img = Image::filled(3, 3, 5, &[0.2, 0.4, 0.6]).unwrap();
        let p = quantize_palette(&img, 8, 0.08).unwrap();
        let r = split(&img, &p).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].mask.bits.iter().all(|&b| b));
        assert_eq!(r[0].sub_image, img);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let palette = Palette {
            colors: vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]],
            height: 1,
            width: 1,
        };
        let img = Image::from_fn_rgb(1, 1, |_, _| [0.5, 0.5, 0.5]).unwrap();
        let r = split(&img, &palette).unwrap();
        assert!(r[0].mask.bits[0]);
        let swapped = Palette {
            colors: vec![[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]],
            ..palette
        };
        assert!(split(&img, &swapped).unwrap()[0].mask.bits[0]);
    }

    #[test]
    fn fill_is_region_mean() {
        let img = Image::from_fn_rgb(2, 2, |y, x| match (y, x) {
            (0, 0) => [0.9, 0.1, 0.1],
            (0, 1) => [0.8, 0.1, 0.1],
            _ => [0.1, 0.1, 0.9],
        })
        .unwrap();
        let p = quantize_palette(&img, 8, 0.2).unwrap();
        let r = split(&img, &p).unwrap();
        assert_eq!(r.len(), 2);
        let red = r.iter().find(|r| r.color[0] > 0.5).unwrap();
        assert_eq!(red.pixel_count(), 2);
        assert!((red.fill[0] - 0.85).abs() < 1e-6);
        // pixel 2 is outside the red region and takes the fill color
        assert!((red.sub_image.rgb(1, 0)[0] - 0.85).abs() < 1e-6);
        assert_eq!(red.sub_image.rgb(0, 0), [0.9, 0.1, 0.1]);
    }

    #[test]
    fn recombine_masks_decide_placement() {
        let img = two_tone(4, 4);
        let p = quantize_palette(&img, 8, 0.08).unwrap();
        let regions = split(&img, &p).unwrap();
        let styled = vec![
            Image::filled(3, 4, 4, &[0.2, 0.2, 0.2]).unwrap(),
            Image::filled(3, 4, 4, &[0.9, 0.9, 0.9]).unwrap(),
        ];
        let out = recombine(&styled, &regions).unwrap();
        assert_eq!(out.rgb(0, 0), [0.2, 0.2, 0.2]);
        assert_eq!(out.rgb(0, 3), [0.9, 0.9, 0.9]);
        let rev_s: Vec<_> = styled.iter().rev().cloned().collect();
        let rev_r: Vec<_> = regions.iter().rev().cloned().collect();
        assert_eq!(recombine(&rev_s, &rev_r).unwrap(), out);
    }

    #[test]
    fn recombine_rejects_overlap() {
        let img = two_tone(2, 2);
        let p = quantize_palette(&img, 8, 0.08).unwrap();
        let mut regions = split(&img, &p).unwrap();
        regions[1].mask.bits[0] = true;
        let styled = vec![img.clone(), img.clone()];
        let err = recombine(&styled, &regions).unwrap_err().to_string();
        assert!(err.contains("1 pixels"), "{err}");
    }

    #[test]
    fn rle_rows() {
        let m = Mask {
            height: 2,
            width: 4,
            bits: vec![true, true, false, true, false, false, false, false],
        };
        let rle = m.to_rle_rows();
        assert_eq!(rle, vec![vec![0, 2, 1, 1], vec![4]]);
        assert_eq!(Mask::from_rle_rows(4, &rle).unwrap(), m);
        assert!(Mask::from_rle_rows(3, &rle).is_err());
    }

    fn random_image() -> impl Strategy<Value = Image> {
        (1usize..9, 1usize..9, 1usize..6, any::<u64>()).prop_map(|(h, w, k, seed)| {
            // k random colors scattered over the grid
            let colors: Vec<Rgb> = (0..k)
                .map(|i| {
                    let s = seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64 * 1442695040888963407);
                    [(s >> 11) as f32 / (1u64 << 53) as f32, ((s >> 20) & 255) as f32 / 255.0, ((s >> 40) & 255) as f32 / 255.0]
                })
                .collect();
            Image::from_fn_rgb(h, w, |y, x| colors[(y * 31 + x * 17 + seed as usize) % k]).unwrap()
        })
    }

    proptest! {
        #[test]
        fn masks_partition_and_round_trip(img in random_image(), max in 1usize..6, tol in 0.0f32..0.3) {
            let p = quantize_palette(&img, max, tol).unwrap();
            prop_assert!(p.len() >= 1 && p.len() <= max);
            let regions = split(&img, &p).unwrap();
            check_partition(&regions, img.height(), img.width()).unwrap();
            let subs: Vec<Image> = regions.iter().map(|r| r.sub_image.clone()).collect();
            prop_assert_eq!(recombine(&subs, &regions).unwrap(), img.clone());
            prop_assert_eq!(quantize_palette(&img, max, tol).unwrap(), p);
        }
    }
}
