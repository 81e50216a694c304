use std::path::Path;

use image::{ImageFormat, RgbImage};

use super::SaliencyMap;
use crate::error::{Error, Result};
use crate::io::{quantize, write_atomic};
use crate::tensor::Tensor;

/// Binary PGM (`P5`) with `round(v * 255)` quantization.
pub fn encode_pgm(map: &SaliencyMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend(map.values.iter().map(|&v| quantize(v)));
    out
}

pub fn write_pgm(map: &SaliencyMap, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pgm(map))
}

/// 0.5/0.5 blend of the RGB input and the grayscale map, PNG-encoded.
pub fn overlay_png(map: &SaliencyMap, image: &Tensor) -> Result<Vec<u8>> {
    let (h, w, c) = image.hwc()?;
    if (h, w) != (map.height, map.width) || c != 3 {
        return Err(Error::invalid("overlay needs an RGB image at map resolution"));
    }
    let mut buf = Vec::with_capacity(h * w * 3);
    for (px, &m) in image.data().chunks_exact(3).zip(&map.values) {
        for &v in px {
            buf.push(quantize(0.5 * v + 0.5 * m));
        }
    }
    let img = RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer matches dimensions");
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Numerical(format!("png encoding failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn write_png_overlay(map: &SaliencyMap, image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &overlay_png(map, image)?)
}
