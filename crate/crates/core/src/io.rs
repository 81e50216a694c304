//! File helpers shared by every on-disk format, plus image loading.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Writes to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Loads an 8-bit PPM/PGM/PNG as a channels-last RGB tensor in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::format(0, format!("{}: {e}", path.display())))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![h as usize, w as usize, 3], data)
}

/// Loads and bilinearly resizes to `height × width`.
pub fn load_image_resized(path: impl AsRef<Path>, height: usize, width: usize) -> Result<Tensor> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::format(0, format!("{}: {e}", path.display())))?;
    let rgb = image::imageops::resize(
        &img.to_rgb8(),
        width as u32,
        height as u32,
        image::imageops::FilterType::Triangle,
    );
    let data = rgb.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![height, width, 3], data)
}

/// Writes an RGB tensor in `[0, 1]` as binary PPM.
pub fn save_ppm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let (h, w, c) = image.hwc()?;
    if c != 3 {
        return Err(Error::invalid(format!("PPM needs 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    write_atomic(path.as_ref(), &out)
}

/// `round(v * 255)` clamped to a byte.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// An ordered collection of images; the position is the image id.
#[derive(Debug, Clone, Default)]
pub struct ImageSet {
    pub names: Vec<String>,
    pub images: Vec<Tensor>,
}

impl ImageSet {
    pub fn from_tensors(images: Vec<Tensor>) -> Self {
        let names = (0..images.len()).map(|i| format!("{i:04}")).collect();
        Self { names, images }
    }

    /// Every `.ppm`/`.png` file in a directory, sorted by file name.
    pub fn load_dir(dir: impl AsRef<Path>, resize: Option<(usize, usize)>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension()
                        .and_then(|e| e.to_str())
                        .map(|e| e.to_ascii_lowercase())
                        .as_deref(),
                    Some("ppm" | "png")
                )
            })
            .collect();
        paths.sort();
        let mut set = Self::default();
        for p in paths {
            let image = match resize {
                Some((h, w)) => load_image_resized(&p, h, w)?,
                None => load_image(&p)?,
            };
            set.names.push(
                p.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            );
            set.images.push(image);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}
