use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// A planar (channel-major) image with pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::invalid("image must be non-empty"));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "{channels}x{height}x{width} image needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, color: &[f32]) -> Result<Self> {
        if color.len() != channels {
            return Err(Error::invalid("fill color does not match channel count"));
        }
        let mut data = Vec::with_capacity(channels * height * width);
        for &c in color {
            data.extend(std::iter::repeat_n(c, height * width));
        }
        Self::new(channels, height, width, data)
    }

    /// Builds an RGB image from a per-pixel function.
    pub fn from_fn_rgb(height: usize, width: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Result<Self> {
        let plane = height * width;
        let mut data = vec![0.0; 3 * plane];
        for y in 0..height {
            for x in 0..width {
                let p = f(y, x);
                for c in 0..3 {
                    data[c * plane + y * width + x] = p[c];
                }
            }
        }
        Self::new(3, height, width, data)
    }

    /// Builds an image from a tensor, clamping values into `[0, 1]`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 {
            return Err(Error::shape(format!("image tensor must be CHW, got {s:?}")));
        }
        let data = t
            .data()
            .iter()
            .map(|v| {
                let v = v.as_f64() as f32;
                if v.is_nan() {
                    0.0
                } else {
                    v.clamp(0.0, 1.0)
                }
            })
            .collect();
        Self::new(s[0], s[1], s[2], data)
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[self.channels, self.height, self.width],
            self.data.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )
        .expect("image dimensions are consistent")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    /// Pixel `(y, x)` as RGB; grayscale is replicated.
    pub fn rgb(&self, y: usize, x: usize) -> [f32; 3] {
        let i = y * self.width + x;
        if self.channels == 1 {
            let v = self.data[i];
            [v, v, v]
        } else {
            let p = self.pixel_count();
            [self.data[i], self.data[p + i], self.data[2 * p + i]]
        }
    }

    /// Pixel at flat index `i = y·width + x`, one value per channel.
    pub fn pixel(&self, i: usize) -> impl Iterator<Item = f32> + '_ {
        let p = self.pixel_count();
        (0..self.channels).map(move |c| self.data[c * p + i])
    }

    pub fn set_pixel(&mut self, i: usize, values: &[f32]) {
        let p = self.pixel_count();
        for (c, &v) in values.iter().enumerate().take(self.channels) {
            self.data[c * p + i] = v.clamp(0.0, 1.0);
        }
    }

    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(3 * self.data.len());
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        Image {
            channels: 3,
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if !self.same_dims(other) {
            return Err(Error::shape("images differ in size"));
        }
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        Ok(s / self.data.len() as f64)
    }

    /// Bilinear resampling (pixel-center aligned).
    pub fn resize(&self, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("cannot resize to an empty image"));
        }
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let plane = self.pixel_count();
        let mut data = Vec::with_capacity(self.channels * height * width);
        for c in 0..self.channels {
            let src = &self.data[c * plane..(c + 1) * plane];
            for y in 0..height {
                let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
                let y0 = fy.floor() as usize;
                let y1 = (y0 + 1).min(self.height - 1);
                let wy = (fy - y0 as f64) as f32;
                for x in 0..width {
                    let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                    let x0 = fx.floor() as usize;
                    let x1 = (x0 + 1).min(self.width - 1);
                    let wx = (fx - x0 as f64) as f32;
                    let top = src[y0 * self.width + x0] * (1.0 - wx) + src[y0 * self.width + x1] * wx;
                    let bot = src[y1 * self.width + x0] * (1.0 - wx) + src[y1 * self.width + x1] * wx;
                    data.push((top * (1.0 - wy) + bot * wy).clamp(0.0, 1.0));
                }
            }
        }
        Image::new(self.channels, height, width, data)
    }

    /// Reads `(width, height)` from a PNG header without decoding pixel data.
    pub fn png_dimensions(bytes: &[u8]) -> Result<(usize, usize)> {
        let decoder = png::Decoder::new(Cursor::new(bytes));
        let reader = decoder.read_info().map_err(|e| Error::Format {
            offset: 0,
            message: format!("malformed PNG: {e}"),
        })?;
        let info = reader.info();
        Ok((info.width as usize, info.height as usize))
    }

    /// Decodes an 8-bit grayscale / RGB PNG (alpha is dropped, palettes expanded).
    pub fn decode_png(bytes: &[u8]) -> Result<Image> {
        let fmt = |e: png::DecodingError| Error::Format {
            offset: 0,
            message: format!("malformed PNG: {e}"),
        };
        let mut decoder = png::Decoder::new(Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND);
        let mut reader = decoder.read_info().map_err(fmt)?;
        let (color, depth) = reader.output_color_type();
        if depth != png::BitDepth::Eight {
            return Err(Error::Unsupported(format!("PNG bit depth {depth:?}; only 8-bit is supported")));
        }
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Unsupported("PNG too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(fmt)?;
        let (w, h) = (info.width as usize, info.height as usize);
        let (stride, channels) = match color {
            png::ColorType::Grayscale => (1, 1),
            png::ColorType::GrayscaleAlpha => (2, 1),
            png::ColorType::Rgb => (3, 3),
            png::ColorType::Rgba => (4, 3),
            png::ColorType::Indexed => return Err(Error::Unsupported("unexpanded palette PNG".into())),
        };
        let plane = w * h;
        let mut data = vec![0.0; channels * plane];
        for y in 0..h {
            let row = &buf[y * info.line_size..];
            for x in 0..w {
                for c in 0..channels {
                    data[c * plane + y * w + x] = row[x * stride + c] as f32 / 255.0;
                }
            }
        }
        Image::new(channels, h, w, data)
    }

    /// Encodes as an 8-bit PNG (grayscale or RGB).
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(if self.channels == 1 {
                png::ColorType::Grayscale
            } else {
                png::ColorType::Rgb
            });
            enc.set_depth(png::BitDepth::Eight);
            let fail = |e: png::EncodingError| Error::invalid(format!("PNG encoding failed: {e}"));
            let mut writer = enc.write_header().map_err(fail)?;
            let plane = self.pixel_count();
            let mut raw = Vec::with_capacity(self.data.len());
            for i in 0..plane {
                for c in 0..self.channels {
                    raw.push(quantize(self.data[c * plane + i]));
                }
            }
            writer.write_image_data(&raw).map_err(fail)?;
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::decode_png(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.encode_png()?).map_err(|e| Error::io(path, e))
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn header_dimensions_match_decoded_image() {
        let img = Image::new(3, 5, 9, vec![0.5; 3 * 45]).unwrap();
        let bytes = img.encode_png().unwrap();
        assert_eq!(Image::png_dimensions(&bytes).unwrap(), (9, 5));
        assert!(Image::png_dimensions(b"not a png").is_err());
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f32> = (0..3 * 7 * 5).map(|_| rng.random::<f32>()).collect();
        let img = Image::new(3, 7, 5, data).unwrap();
        let back = Image::decode_png(&img.encode_png().unwrap()).unwrap();
        assert!(back.same_dims(&img));
        let worst = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst <= 1.0 / 510.0 + 1e-7, "{worst}");
    }

    #[test]
    fn grayscale_loads_single_channel() {
        let img = Image::new(1, 3, 4, vec![0.5; 12]).unwrap();
        let back = Image::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back.channels(), 1);
    }

    #[test]
    fn truncated_png_is_format_error() {
        let img = Image::filled(3, 8, 8, &[0.2, 0.4, 0.6]).unwrap();
        let bytes = img.encode_png().unwrap();
        assert!(matches!(Image::decode_png(&bytes[..bytes.len() / 2]), Err(Error::Format { .. })));
        assert!(matches!(Image::decode_png(b"not a png"), Err(Error::Format { .. })));
    }

    #[test]
    fn sixteen_bit_is_unsupported() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 2);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0u8; 8]).unwrap();
        }
        assert!(matches!(Image::decode_png(&out), Err(Error::Unsupported(_))));
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(Image::new(1, 1, 2, vec![0.5, 1.5]).is_err());
        assert!(Image::new(2, 1, 1, vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = Image::filled(3, 10, 6, &[0.1, 0.5, 0.9]).unwrap();
        let r = img.resize(4, 3).unwrap();
        assert!(r.data().iter().take(12).all(|&v| (v - 0.1).abs() < 1e-6));
        assert_eq!(img.resize(10, 6).unwrap(), img);
    }
}
