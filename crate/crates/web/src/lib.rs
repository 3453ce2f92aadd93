//! In-browser palette split and stitch preview.
//!
//! Everything crosses the JS boundary as PNG bytes or JSON strings, so the
//! page needs no bundler and the logic stays testable natively.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use stitchwork_core::colorsplit::{self, Palette, Rgb};
use stitchwork_core::dataio::{demo_image, procedural_swatches};
use stitchwork_core::preview::split_style_preview;
use stitchwork_core::styletransfer::{StyleWeights, TransferSettings};
use stitchwork_core::{Image, Result};
use wasm_bindgen::prelude::*;

/// Longest side the browser preview optimizes at.
pub const MAX_WORKING_SIZE: usize = 128;
pub const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Serialize)]
pub struct RegionInfo {
    pub index: usize,
    pub color: String,
    pub pixel_count: usize,
    pub mask_rle: Vec<Vec<u32>>,
}

#[derive(Debug, Serialize)]
pub struct SplitInfo {
    pub width: usize,
    pub height: usize,
    pub regions: Vec<RegionInfo>,
}

#[derive(Debug, Deserialize)]
pub struct RenderRequest {
    /// Region index (as a string key) → stitch id.
    pub stitches: BTreeMap<String, String>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_working_size")]
    pub working_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_iterations() -> usize {
    20
}

fn default_working_size() -> usize {
    64
}

fn hex(c: &Rgb) -> String {
    let b = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", b(c[0]), b(c[1]), b(c[2]))
}

fn swatch(id: &str) -> Option<Image> {
    procedural_swatches().into_iter().find(|(s, _)| s == id).map(|(_, img)| img)
}

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Stitch ids available in the page, as a JSON array.
#[wasm_bindgen]
pub fn stitch_ids() -> String {
    let ids: Vec<String> = procedural_swatches().into_iter().map(|(id, _)| id).collect();
    serde_json::to_string(&ids).expect("strings serialize")
}

#[wasm_bindgen]
pub fn swatch_png(id: &str) -> std::result::Result<Vec<u8>, JsValue> {
    let img = swatch(id).ok_or_else(|| js_err(format!("unknown stitch {id:?}")))?;
    img.encode_png().map_err(js_err)
}

#[wasm_bindgen]
pub fn demo_png() -> Vec<u8> {
    stitchwork_core::dataio::DEMO_PNG.to_vec()
}

/// An uploaded design and its current palette.
#[wasm_bindgen]
pub struct Design {
    image: Image,
    palette: Option<Palette>,
}

impl Design {
    pub fn from_png(bytes: &[u8]) -> Result<Design> {
        let image = Image::decode_png(bytes)?;
        let image = if image.channels() == 1 { image.to_rgb() } else { image };
        Ok(Design { image, palette: None })
    }

    pub fn demo() -> Result<Design> {
        Ok(Design { image: demo_image()?, palette: None })
    }

    pub fn split_info(&mut self, max_colors: usize, tolerance: f32) -> Result<SplitInfo> {
        let palette = colorsplit::quantize_palette(&self.image, max_colors, tolerance)?;
        let regions = colorsplit::split(&self.image, &palette)?;
        self.palette = Some(palette);
        Ok(SplitInfo {
            width: self.image.width(),
            height: self.image.height(),
            regions: regions
                .iter()
                .map(|r| RegionInfo {
                    index: r.index,
                    color: hex(&r.color),
                    pixel_count: r.mask.count(),
                    mask_rle: r.mask.to_rle_rows(),
                })
                .collect(),
        })
    }

    pub fn render_image(&self, request: &RenderRequest) -> Result<Image> {
        let palette = self
            .palette
            .as_ref()
            .ok_or_else(|| stitchwork_core::Error::contract("split the design before rendering"))?;
        if request.iterations > MAX_ITERATIONS {
            return Err(stitchwork_core::Error::invalid(format!("at most {MAX_ITERATIONS} iterations")));
        }
        let mut styles = BTreeMap::new();
        for (key, id) in &request.stitches {
            let region: usize = key
                .parse()
                .map_err(|_| stitchwork_core::Error::invalid(format!("region key {key:?} is not an index")))?;
            let img = swatch(id).ok_or_else(|| stitchwork_core::Error::invalid(format!("unknown stitch {id:?}")))?;
            styles.insert(region, img);
        }
        let settings = TransferSettings {
            iterations: request.iterations,
            seed: request.seed,
            ..TransferSettings::default()
        };
        let max_side = request.working_size.clamp(8, MAX_WORKING_SIZE);
        split_style_preview(&self.image, palette, &styles, &StyleWeights::default(), &settings, max_side, &mut |_, _, _, _| {})
    }
}

#[wasm_bindgen]
impl Design {
    #[wasm_bindgen(constructor)]
    pub fn new(png: &[u8]) -> std::result::Result<Design, JsValue> {
        Design::from_png(png).map_err(js_err)
    }

    #[wasm_bindgen(js_name = fromDemo)]
    pub fn from_demo() -> std::result::Result<Design, JsValue> {
        Design::demo().map_err(js_err)
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.image.width()
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.image.height()
    }

    /// Quantizes the palette and returns the regions as JSON.
    pub fn split(&mut self, max_colors: usize, tolerance: f32) -> std::result::Result<String, JsValue> {
        let info = self.split_info(max_colors, tolerance).map_err(js_err)?;
        serde_json::to_string(&info).map_err(js_err)
    }

    /// Split style preview as PNG bytes; `request` is a JSON [`RenderRequest`].
    pub fn render(&self, request: &str) -> std::result::Result<Vec<u8>, JsValue> {
        let request: RenderRequest = serde_json::from_str(request).map_err(js_err)?;
        self.render_image(&request).and_then(|img| img.encode_png()).map_err(js_err)
    }
}
