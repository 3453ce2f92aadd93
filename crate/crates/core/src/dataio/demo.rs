//! A small flat-color badge shipped with the crate for demos and smoke tests.

use super::Image;
use crate::error::Result;

pub const DEMO_PNG: &[u8] = include_bytes!("../../assets/demo-64.png");

/// The bundled 64×64 three-color demo image.
pub fn demo_image() -> Result<Image> {
    Image::decode_png(DEMO_PNG)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes() {
        let img = demo_image().unwrap();
        assert_eq!((img.channels(), img.height(), img.width()), (3, 64, 64));
    }
}
